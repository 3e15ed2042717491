// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Unified iterative CORDIC engine. One shift-add triple per cycle; the
// linear modes provide multiply and divide, the hyperbolic rotation mode
// provides sinh/cosh and, via range reduction, exp.
//
// Every register is modelled as an int64 raw value with an explicit binary
// point. Results are narrowed (round-to-nearest-even, saturating) into the
// caller's output format on exit; the internal x/y registers carry
// kGuardBits fraction bits beyond that format.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "carmen/error.hpp"
#include "carmen/fxp.hpp"

namespace carmen {

inline constexpr int kGuardBits = 4;
inline constexpr int kMaxDepth = 48;
// Cycles spent outside the rotation loop by exp_fxp: one for the quotient
// estimate k = round(z/ln2) with the residual subtraction, one for the final
// barrel shift by k.
inline constexpr int kExpReductionCycles = 2;

enum class CordicMode { linear, hyperbolic };

/// Shift-index sequence for one CORDIC evaluation.
struct IterSchedule {
  CordicMode mode = CordicMode::linear;
  int depth = 0;
  std::vector<int> repeats;

  /// Shift index of every micro-iteration, in execution order.
  std::vector<int> shifts() const {
    std::vector<int> out;
    if (mode == CordicMode::linear) {
      for (int i = 0; i < depth; ++i) out.push_back(i);
      return out;
    }
    for (int i = 1; i <= depth; ++i) {
      out.push_back(i);
      for (int r : repeats) {
        if (r == i) out.push_back(i);
      }
    }
    return out;
  }

  int length() const { return static_cast<int>(shifts().size()); }
};

inline IterSchedule make_schedule(CordicMode mode, int depth) {
  if (depth < 1 || depth > kMaxDepth) {
    throw ContractViolation("CORDIC depth " + std::to_string(depth) +
                            " outside [1, " + std::to_string(kMaxDepth) + "]");
  }
  IterSchedule s{mode, depth, {}};
  if (mode == CordicMode::hyperbolic) {
    // Indices 3k+1 (4, 13, 40, ...) must run twice or the hyperbolic
    // iteration does not converge.
    for (int r : {4, 13, 40}) {
      if (r <= depth) s.repeats.push_back(r);
    }
  }
  return s;
}

/// Product of sqrt(1 - 2^-2i) over the schedule.
inline double hyperbolic_gain(const IterSchedule& s) {
  double k = 1.0;
  for (int i : s.shifts()) k *= std::sqrt(1.0 - std::ldexp(1.0, -2 * i));
  return k;
}

/// Largest |z| the hyperbolic rotation converges for (sum of atanh 2^-i over
/// the unbounded schedule, repeats included): about 1.1182.
inline double hyperbolic_convergence_bound() {
  static const double bound = [] {
    double sum = 0.0;
    for (int i : make_schedule(CordicMode::hyperbolic, kMaxDepth).shifts()) {
      sum += std::atanh(std::ldexp(1.0, -i));
    }
    return sum;
  }();
  return bound;
}

/// Micro-architectural accumulators of one CORDIC evaluation.
struct CordicState {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;
  int frac_xy = 0;  // binary point of x and y
  int frac_z = 0;   // binary point of z
  int iter = 0;
  std::int64_t cycles = 0;
};

namespace detail {

inline int sign_of(std::int64_t v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }
inline std::int64_t abs64(std::int64_t v) { return v < 0 ? -v : v; }

}  // namespace detail

// Linear modes select d in {-1, 0, +1}: a step is taken only when it shrinks
// the driven residual, so |residual| never grows and an exactly cancelled
// residual stays at zero. The cycle is spent either way.

/// y += d * x * 2^-i, z -= d * 2^-i with d chosen from z.
inline void linear_rotation_step(CordicState& s) {
  const int i = s.iter;
  const std::int64_t half = std::int64_t{1} << (s.frac_z - i - 1);
  if (detail::abs64(s.z) > half) {
    const int d = detail::sign_of(s.z);
    s.y += d * (s.x >> i);
    s.z -= d * (std::int64_t{1} << (s.frac_z - i));
  }
  ++s.iter;
  ++s.cycles;
}

/// y -= d * x * 2^-i, z += d * 2^-i with d chosen from y.
inline void linear_vectoring_step(CordicState& s) {
  const int i = s.iter;
  if (detail::abs64(s.y) > (s.x >> (i + 1))) {
    const int d = detail::sign_of(s.y);
    s.y -= d * (s.x >> i);
    s.z += d * (std::int64_t{1} << (s.frac_z - i));
  }
  ++s.iter;
  ++s.cycles;
}

/// One hyperbolic rotation at shift index `shift`; d = +1 when z >= 0.
inline void hyperbolic_rotation_step(CordicState& s, int shift,
                                     std::int64_t atanh_raw) {
  const int d = s.z >= 0 ? 1 : -1;
  const std::int64_t dx = s.y >> shift;
  const std::int64_t dy = s.x >> shift;
  s.x += d * dx;
  s.y += d * dy;
  s.z -= d * atanh_raw;
  ++s.iter;
  ++s.cycles;
}

namespace detail {

inline void check_depth(int n) {
  if (n < 1 || n > kMaxDepth) {
    throw ContractViolation("CORDIC depth " + std::to_string(n) +
                            " outside [1, " + std::to_string(kMaxDepth) + "]");
  }
}

inline void check_internal(const FxPFormat& out) {
  require_valid(out);
  if (out.frac_bits + kGuardBits > 56) {
    throw ContractViolation("output format " + out.to_string() +
                            " too fine for the internal datapath");
  }
}

struct HyperbolicCore {
  std::int64_t cosh = 0;
  std::int64_t sinh = 0;
  std::int64_t cycles = 0;
};

// Hyperbolic rotation on a non-negative angle `z_raw` (binary point frac_z);
// outputs sit at binary point frac_xy with the gain folded into x0.
inline HyperbolicCore hyperbolic_core(std::int64_t z_raw, int frac_z, int n,
                                      int frac_xy) {
  const IterSchedule sched = make_schedule(CordicMode::hyperbolic, n);
  CordicState s;
  s.frac_xy = frac_xy;
  s.frac_z = frac_z;
  s.x = static_cast<std::int64_t>(
      std::nearbyint(std::ldexp(1.0 / hyperbolic_gain(sched), frac_xy)));
  s.y = 0;
  s.z = z_raw;
  for (int i : sched.shifts()) {
    const auto atanh_raw = static_cast<std::int64_t>(
        std::nearbyint(std::ldexp(std::atanh(std::ldexp(1.0, -i)), frac_z)));
    hyperbolic_rotation_step(s, i, atanh_raw);
  }
  return {s.x, s.y, s.cycles};
}

}  // namespace detail

struct LinearResult {
  FxPWord value;
  std::int64_t cycles = 0;
  bool saturated = false;
};

struct HyperbolicResult {
  FxPWord sinh;
  FxPWord cosh;
  std::int64_t cycles = 0;
  bool saturated = false;
};

/// Linear rotation: y = y0 + x0 * z0 in n iterations (multiply-accumulate).
///
/// Requires |z0| < 2. The result lands in `out` (default: y0's format).
/// Error before narrowing is at most |x0| 2^(1-n) + (n+1) 2^-(out.frac+4).
inline LinearResult linear_rotation(const FxPWord& x0, const FxPWord& y0,
                                    const FxPWord& z0, int n,
                                    std::optional<FxPFormat> out = {}) {
  detail::check_depth(n);
  const FxPFormat ofmt = out.value_or(y0.format());
  detail::check_internal(ofmt);
  const std::int64_t two = std::int64_t{2} << z0.format().frac_bits;
  if (detail::abs64(z0.raw()) >= two) {
    throw ConvergenceError("linear rotation needs |z0| < 2, got " +
                           std::to_string(z0.value()));
  }
  CordicState s;
  s.frac_xy = ofmt.frac_bits + kGuardBits;
  s.frac_z = std::max(z0.format().frac_bits, n);
  s.x = detail::rescale_rne(x0.raw(), x0.format().frac_bits, s.frac_xy);
  s.y = detail::rescale_rne(y0.raw(), y0.format().frac_bits, s.frac_xy);
  s.z = z0.raw() << (s.frac_z - z0.format().frac_bits);
  while (s.iter < n) linear_rotation_step(s);
  const Narrowed r =
      saturate(detail::shift_right_rne(s.y, kGuardBits), ofmt);
  return {r.word, s.cycles, r.saturated};
}

/// Linear vectoring: z = y0 / x0 in n iterations (divide).
///
/// Requires x0 > 0 and |y0 / x0| < 2. The quotient lands in `out` (default:
/// y0's format).
inline LinearResult linear_vectoring(const FxPWord& x0, const FxPWord& y0,
                                     int n, std::optional<FxPFormat> out = {}) {
  detail::check_depth(n);
  const FxPFormat ofmt = out.value_or(y0.format());
  detail::check_internal(ofmt);
  if (x0.raw() <= 0) {
    throw DomainError("linear vectoring needs a positive divisor, got " +
                      std::to_string(x0.value()));
  }
  const int common = std::max(x0.format().frac_bits, y0.format().frac_bits);
  const std::int64_t xc = x0.raw() << (common - x0.format().frac_bits);
  const std::int64_t yc = y0.raw() << (common - y0.format().frac_bits);
  if (detail::abs64(yc) >= 2 * xc) {
    throw ConvergenceError("linear vectoring needs |y0/x0| < 2, got " +
                           std::to_string(y0.value() / x0.value()));
  }
  CordicState s;
  s.frac_z = std::max(ofmt.frac_bits + kGuardBits, n);
  s.frac_xy = std::max(common, s.frac_z) + kGuardBits;
  s.x = xc << (s.frac_xy - common);
  s.y = yc << (s.frac_xy - common);
  s.z = 0;
  while (s.iter < n) linear_vectoring_step(s);
  const Narrowed r = saturate(
      detail::rescale_rne(s.z, s.frac_z, ofmt.frac_bits), ofmt);
  return {r.word, s.cycles, r.saturated};
}

/// Default sinh/cosh format: z0's width with at least two integer bits.
inline FxPFormat hyperbolic_output_format(const FxPFormat& z) {
  return {z.width, std::min(z.frac_bits, z.width - 3)};
}

/// Hyperbolic rotation: gain-compensated sinh(z0), cosh(z0).
///
/// Requires |z0| <= hyperbolic_convergence_bound(). The angle is processed as
/// |z0| and the sign reapplied to sinh, so sinh is odd and cosh even at the
/// raw level. Cycles: n plus one per repeated index.
inline HyperbolicResult hyperbolic_rotation(const FxPWord& z0, int n,
                                            std::optional<FxPFormat> out = {}) {
  detail::check_depth(n);
  const FxPFormat ofmt = out.value_or(hyperbolic_output_format(z0.format()));
  detail::check_internal(ofmt);
  if (std::fabs(z0.value()) > hyperbolic_convergence_bound()) {
    throw ConvergenceError("hyperbolic rotation needs |z0| <= 1.1182, got " +
                           std::to_string(z0.value()));
  }
  const int frac_xy = ofmt.frac_bits + kGuardBits;
  const int frac_z =
      std::max({z0.format().frac_bits, ofmt.frac_bits, n}) + kGuardBits;
  const std::int64_t mag = detail::abs64(z0.raw())
                           << (frac_z - z0.format().frac_bits);
  const detail::HyperbolicCore core =
      detail::hyperbolic_core(mag, frac_z, n, frac_xy);
  const std::int64_t sinh = z0.raw() < 0 ? -core.sinh : core.sinh;
  const Narrowed sh =
      saturate(detail::shift_right_rne(sinh, kGuardBits), ofmt);
  const Narrowed ch =
      saturate(detail::shift_right_rne(core.cosh, kGuardBits), ofmt);
  return {sh.word, ch.word, core.cycles, sh.saturated || ch.saturated};
}

/// e^z: z = k ln2 + r with |r| <= ln2/2, e^r = sinh r + cosh r, then a shift
/// by k. Result lands in `out` (default: z's format). When e^z is certain to
/// overflow `out` or to round to zero the result saturates without running
/// the loop; the cycle count is the same on every path.
inline LinearResult exp_fxp(const FxPWord& z, int n,
                            std::optional<FxPFormat> out = {}) {
  detail::check_depth(n);
  const FxPFormat ofmt = out.value_or(z.format());
  detail::check_internal(ofmt);
  const std::int64_t loop_cycles =
      make_schedule(CordicMode::hyperbolic, n).length();
  const std::int64_t cycles = loop_cycles + kExpReductionCycles;

  const int frac = std::max(z.format().frac_bits, ofmt.frac_bits) + kGuardBits;
  const std::int64_t zi = z.raw() << (frac - z.format().frac_bits);

  // k = round(z / ln2) through a 32-bit reciprocal constant.
  constexpr int kConstFrac = 32;
  const auto inv_ln2 = static_cast<std::int64_t>(
      std::nearbyint(std::ldexp(1.0 / std::log(2.0), kConstFrac)));
  __extension__ using wide = __int128;
  const wide prod = static_cast<wide>(zi) * inv_ln2;
  const int kshift = frac + kConstFrac;
  const wide half = static_cast<wide>(1) << (kshift - 1);
  const auto k = static_cast<std::int64_t>((prod + half) >> kshift);

  if (k > ofmt.integer_bits() + 1) {
    return {FxPWord::from_raw(ofmt.max_raw(), ofmt), cycles, true};
  }
  if (k < -(ofmt.frac_bits + kGuardBits + 1)) {
    return {FxPWord::zero(ofmt), cycles, false};
  }

  // r = z - k ln2, with ln2 carried 8 bits finer than the working point.
  constexpr int kLn2Guard = 8;
  const auto ln2 = static_cast<std::int64_t>(
      std::nearbyint(std::ldexp(std::log(2.0), frac + kLn2Guard)));
  const std::int64_t r = detail::shift_right_rne(
      (zi << kLn2Guard) - k * ln2, kLn2Guard);

  const int frac_z = std::max(frac, n) + kGuardBits;
  const int frac_xy = frac + kGuardBits;
  const detail::HyperbolicCore core = detail::hyperbolic_core(
      detail::abs64(r) << (frac_z - frac), frac_z, n, frac_xy);
  const std::int64_t sinh = r < 0 ? -core.sinh : core.sinh;
  const std::int64_t e = core.cosh + sinh;
  // Multiplying by 2^k moves the binary point; no bits are lost before the
  // final rounding.
  const std::int64_t raw =
      detail::rescale_rne(e, frac_xy - static_cast<int>(k), ofmt.frac_bits);
  const Narrowed res = saturate(raw, ofmt);
  return {res.word, cycles, res.saturated};
}

}  // namespace carmen
