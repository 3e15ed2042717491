// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "carmen/cordic.hpp"

using namespace carmen;

namespace {
constexpr FxPFormat kQ16_12{16, 12};
constexpr FxPFormat kQ16_13{16, 13};
constexpr FxPFormat kQ16_14{16, 14};

FxPWord q(double v, FxPFormat f) { return quantize(v, f); }

double rotation_bound(double x0, int n, const FxPFormat& out) {
  return std::fabs(x0) * std::ldexp(1.0, 1 - n) +
         (n + 1) * std::ldexp(1.0, -(out.frac_bits + kGuardBits)) + out.ulp() / 2;
}
}  // namespace

TEST(Schedule, LinearIsPlain) {
  const IterSchedule s = make_schedule(CordicMode::linear, 8);
  EXPECT_EQ(s.length(), 8);
  EXPECT_TRUE(s.repeats.empty());
}

TEST(Schedule, HyperbolicRepeats) {
  const IterSchedule s16 = make_schedule(CordicMode::hyperbolic, 16);
  EXPECT_EQ(s16.repeats, (std::vector<int>{4, 13}));
  EXPECT_EQ(s16.length(), 18);
  const std::vector<int> sh = s16.shifts();
  EXPECT_EQ(sh.front(), 1);
  EXPECT_EQ(std::count(sh.begin(), sh.end(), 4), 2);
  EXPECT_EQ(std::count(sh.begin(), sh.end(), 13), 2);
  EXPECT_EQ(make_schedule(CordicMode::hyperbolic, 12).repeats, (std::vector<int>{4}));
  EXPECT_EQ(make_schedule(CordicMode::hyperbolic, 40).repeats,
            (std::vector<int>{4, 13, 40}));
}

TEST(Schedule, GainAndBound) {
  // tools/oracle_values.py
  EXPECT_NEAR(hyperbolic_gain(make_schedule(CordicMode::hyperbolic, 16)),
              0.828159360992352, 1e-12);
  EXPECT_NEAR(hyperbolic_convergence_bound(), 1.11817301552650, 1e-9);
}

TEST(Depth, Checked) {
  EXPECT_THROW(linear_rotation(q(1, kQ16_12), q(0, kQ16_12), q(0, kQ16_12), 0),
               ContractViolation);
  EXPECT_THROW(linear_rotation(q(1, kQ16_12), q(0, kQ16_12), q(0, kQ16_12), kMaxDepth + 1),
               ContractViolation);
}

TEST(LinearRotation, ZeroMultiplier) {
  const LinearResult r = linear_rotation(q(1.0, kQ16_12), q(0, kQ16_12), q(0, kQ16_12), 8);
  EXPECT_EQ(r.value.raw(), 0);
  EXPECT_EQ(r.cycles, 8);
}

TEST(LinearRotation, UnitTimesHalfPlusQuarter) {
  const LinearResult r =
      linear_rotation(q(1.0, kQ16_12), q(0.25, kQ16_12), q(0.5, kQ16_12), 16);
  EXPECT_NEAR(r.value.value(), 0.75, rotation_bound(1.0, 16, kQ16_12));
  EXPECT_EQ(r.cycles, 16);
}

TEST(LinearRotation, Product) {
  // tools/oracle_values.py: 0.8125 * 0.6875 = 143/256
  const LinearResult r =
      linear_rotation(q(0.8125, kQ16_12), q(0, kQ16_12), q(0.6875, kQ16_12), 16);
  EXPECT_NEAR(r.value.value(), 143.0 / 256, rotation_bound(0.8125, 16, kQ16_12));
}

TEST(LinearRotation, DomainError) {
  EXPECT_THROW(linear_rotation(q(1, kQ16_12), q(0, kQ16_12), q(2.0, kQ16_12), 16),
               ConvergenceError);
  EXPECT_THROW(linear_rotation(q(1, kQ16_12), q(0, kQ16_12), q(-2.0, kQ16_12), 16),
               ConvergenceError);
}

TEST(LinearVectoring, Cases) {
  EXPECT_EQ(linear_vectoring(q(1.0, kQ16_12), q(0, kQ16_12), 8).value.raw(), 0);
  const LinearResult one = linear_vectoring(q(0.5, kQ16_12), q(0.5, kQ16_12), 16);
  EXPECT_NEAR(one.value.value(), 1.0, std::ldexp(1.0, -15) + kQ16_12.ulp());
  EXPECT_EQ(one.cycles, 16);
  // tools/oracle_values.py: 0.3 / 0.75 = 0.4 (operands quantized first)
  const FxPWord x = q(0.75, kQ16_12);
  const FxPWord y = q(0.3, kQ16_12);
  const LinearResult r = linear_vectoring(x, y, 16);
  EXPECT_NEAR(r.value.value(), y.value() / x.value(),
              std::ldexp(1.0, -15) + 17 * std::ldexp(1.0, -16) + kQ16_12.ulp() / 2);
  EXPECT_NEAR(r.value.value(), 0.4, 1e-3);
}

TEST(LinearVectoring, Errors) {
  EXPECT_THROW(linear_vectoring(q(0, kQ16_12), q(0.5, kQ16_12), 16), DomainError);
  EXPECT_THROW(linear_vectoring(q(-1, kQ16_12), q(0.5, kQ16_12), 16), DomainError);
  EXPECT_THROW(linear_vectoring(q(0.25, kQ16_12), q(0.5, kQ16_12), 16), ConvergenceError);
}

TEST(Hyperbolic, AtZero) {
  const HyperbolicResult r = hyperbolic_rotation(q(0, kQ16_12), 16, kQ16_14);
  EXPECT_EQ(r.sinh.raw(), 0);
  EXPECT_NEAR(r.cosh.value(), 1.0, 2 * kQ16_14.ulp());
  EXPECT_EQ(r.cycles, 18);
}

TEST(Hyperbolic, AtOne) {
  // tools/oracle_values.py: sinh 1 = 1.1752011936..., cosh 1 = 1.5430806348...
  const FxPFormat out{16, 13};
  const HyperbolicResult r = hyperbolic_rotation(q(1.0, kQ16_12), 16, out);
  EXPECT_NEAR(r.sinh.value(), 1.1752011936438014, 4 * out.ulp());
  EXPECT_NEAR(r.cosh.value(), 1.5430806348152437, 4 * out.ulp());
}

TEST(Hyperbolic, Symmetry) {
  for (std::int64_t raw = -4580; raw <= 4580; raw += 7) {
    const HyperbolicResult p = hyperbolic_rotation(FxPWord::from_raw(raw, kQ16_12), 16);
    const HyperbolicResult n = hyperbolic_rotation(FxPWord::from_raw(-raw, kQ16_12), 16);
    ASSERT_EQ(p.sinh.raw(), -n.sinh.raw());
    ASSERT_EQ(p.cosh.raw(), n.cosh.raw());
  }
}

TEST(Hyperbolic, DomainError) {
  EXPECT_THROW(hyperbolic_rotation(q(1.2, kQ16_12), 16), ConvergenceError);
  EXPECT_NO_THROW(hyperbolic_rotation(q(1.1, kQ16_12), 16));
}

TEST(Exp, Cases) {
  const LinearResult one = exp_fxp(q(0, kQ16_12), 16);
  EXPECT_NEAR(one.value.value(), 1.0, kQ16_12.ulp());
  const LinearResult two = exp_fxp(q(std::log(2.0), kQ16_12), 16);
  EXPECT_NEAR(two.value.value(), 2.0, 2 * kQ16_12.ulp());
  // tools/oracle_values.py: e^-1 = 0.36787944117...
  const LinearResult em1 = exp_fxp(q(-1.0, kQ16_12), 16, kQ16_14);
  EXPECT_NEAR(em1.value.value(), 0.36787944117144233, 4 * kQ16_14.ulp());
  EXPECT_EQ(em1.cycles, 18 + kExpReductionCycles);
}

TEST(Exp, WithinFourUlpOnMinusEightToZero) {
  for (std::int64_t raw = -8 * 4096; raw <= 0; ++raw) {
    const FxPWord z = FxPWord::from_raw(raw, kQ16_12);
    const LinearResult e = exp_fxp(z, 16, kQ16_14);
    ASSERT_LE(std::fabs(e.value.value() - std::exp(z.value())), 4 * kQ16_14.ulp())
        << z.value();
  }
}

TEST(Exp, SaturatesAndUnderflows) {
  const LinearResult big = exp_fxp(q(7.0, kQ16_12), 16, kQ16_12);
  EXPECT_TRUE(big.saturated);
  EXPECT_EQ(big.value.raw(), kQ16_12.max_raw());
  const LinearResult tiny = exp_fxp(q(-7.9, kQ16_12), 16, FxPFormat{16, 8});
  EXPECT_EQ(tiny.value.raw(), 0);
  EXPECT_EQ(big.cycles, tiny.cycles);
}

// Properties.

TEST(CordicProperty, Deterministic) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::int64_t> d(-8191, 8191);
  for (int i = 0; i < 1000; ++i) {
    const FxPWord x = FxPWord::from_raw(d(rng), kQ16_12);
    const FxPWord z = FxPWord::from_raw(d(rng), kQ16_12);
    const LinearResult a = linear_rotation(x, q(0, kQ16_12), z, 12);
    const LinearResult b = linear_rotation(x, q(0, kQ16_12), z, 12);
    ASSERT_EQ(a.value, b.value);
    ASSERT_EQ(a.cycles, b.cycles);
  }
}

TEST(CordicProperty, RotationResidualDecays) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<std::int64_t> d(-8191, 8191);
  for (int t = 0; t < 2000; ++t) {
    CordicState s;
    s.frac_xy = 16;
    s.frac_z = 16;
    s.x = std::int64_t{1} << 16;
    s.z = d(rng) << 4;
    std::int64_t prev = detail::abs64(s.z);
    const std::int64_t z0 = prev;
    while (s.iter < 16) {
      linear_rotation_step(s);
      const std::int64_t now = detail::abs64(s.z);
      ASSERT_LE(now, prev);
      prev = now;
    }
    // |z_n| <= |z0| 2^(1-n) + n ulp
    ASSERT_LE(static_cast<double>(prev),
              static_cast<double>(z0) * std::ldexp(1.0, -15) + 16);
  }
}

TEST(CordicProperty, VectoringResidualDecays) {
  std::mt19937 rng(12);
  std::uniform_int_distribution<std::int64_t> d(1, 8191);
  for (int t = 0; t < 2000; ++t) {
    CordicState s;
    s.frac_xy = 20;
    s.frac_z = 20;
    s.x = d(rng) << 8;
    s.y = (d(rng) % (s.x >> 8)) << 8;
    if (rng() & 1) s.y = -s.y;
    std::int64_t prev = detail::abs64(s.y);
    while (s.iter < 16) {
      linear_vectoring_step(s);
      const std::int64_t now = detail::abs64(s.y);
      ASSERT_LE(now, prev);
      prev = now;
    }
  }
}

TEST(CordicProperty, HyperbolicIdentity) {
  const FxPFormat out{16, 13};
  const double eps = 16 * std::ldexp(1.0, -(out.frac_bits));
  for (std::int64_t raw = -4580; raw <= 4580; ++raw) {
    const HyperbolicResult r = hyperbolic_rotation(FxPWord::from_raw(raw, kQ16_12), 16, out);
    const double c = r.cosh.value();
    const double s = r.sinh.value();
    ASSERT_NEAR(c * c - s * s, 1.0, eps) << raw;
    ASSERT_GE(c, 1.0 - out.ulp());
  }
}

TEST(CordicProperty, MonotoneAccuracyInDepth) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<std::int64_t> d(-8191, 8191);
  const FxPFormat out{32, 24};
  const double internal = std::ldexp(1.0, -(out.frac_bits + kGuardBits));
  for (int t = 0; t < 500; ++t) {
    const FxPWord x = FxPWord::from_raw(d(rng), kQ16_13);
    const FxPWord z = FxPWord::from_raw(d(rng), kQ16_12);
    const double exact = x.value() * z.value();
    for (int n = 2; n + 2 <= 24; ++n) {
      const double e0 =
          std::fabs(linear_rotation(x, FxPWord::zero(out), z, n, out).value.value() - exact);
      const double e2 =
          std::fabs(linear_rotation(x, FxPWord::zero(out), z, n + 2, out).value.value() - exact);
      ASSERT_LE(e2, e0 + 2 * internal + out.ulp()) << n;
    }
    // Hyperbolic errors are not monotone at small depths (the residual
    // angle can cancel early); they stay under the residual-angle envelope.
    const FxPWord h = FxPWord::from_raw(d(rng) / 8, kQ16_12);
    for (int n = 2; n <= 24; ++n) {
      const double err =
          std::fabs(hyperbolic_rotation(h, n, out).sinh.value() - std::sinh(h.value()));
      ASSERT_LE(err, std::cosh(h.value()) * std::ldexp(1.0, 1 - n) + 4 * out.ulp())
          << n << " " << h.value();
    }
  }
}
