// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Time-multiplexed multi-activation-function unit. All seven functions run
// on the shared CORDIC datapath: tanh and sigmoid through hyperbolic
// rotation plus a vectoring divide, softmax through exp plus a vectoring
// normalization, the derived functions through those units and the linear
// multiplier. ReLU is a bypass.
//
// Intermediate values live in 48-bit work registers carrying kGuardBits
// fraction bits beyond the finer of the input and output formats.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "carmen/cordic.hpp"
#include "carmen/error.hpp"
#include "carmen/fxp.hpp"
#include "carmen/mac.hpp"

namespace carmen {

enum class AfKind { relu, tanh, sigmoid, softmax, gelu, swish, selu };

inline constexpr std::array<AfKind, 7> kAllAfKinds = {
    AfKind::relu, AfKind::tanh,  AfKind::sigmoid, AfKind::softmax,
    AfKind::gelu, AfKind::swish, AfKind::selu};

inline std::string_view to_string(AfKind k) {
  switch (k) {
    case AfKind::relu: return "relu";
    case AfKind::tanh: return "tanh";
    case AfKind::sigmoid: return "sigmoid";
    case AfKind::softmax: return "softmax";
    case AfKind::gelu: return "gelu";
    case AfKind::swish: return "swish";
    case AfKind::selu: return "selu";
  }
  return "?";
}

inline AfKind parse_af_kind(std::string_view s) {
  for (AfKind k : kAllAfKinds) {
    if (to_string(k) == s) return k;
  }
  throw ContractViolation("unknown activation '" + std::string(s) + "'");
}

inline constexpr double kSeluLambda = 1.0507;
inline constexpr double kSeluAlpha = 1.6733;
inline constexpr double kGeluCubic = 0.044715;

/// Double-precision definitions the fixed-point unit is measured against.
namespace exact {

inline double tanh(double x) { return std::tanh(x); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double gelu(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + kGeluCubic * x * x * x)));
}
inline double swish(double x) { return x * sigmoid(x); }
inline double selu(double x) {
  return x > 0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

inline double elementwise(AfKind k, double x) {
  switch (k) {
    case AfKind::relu: return x > 0 ? x : 0.0;
    case AfKind::tanh: return tanh(x);
    case AfKind::sigmoid: return sigmoid(x);
    case AfKind::gelu: return gelu(x);
    case AfKind::swish: return swish(x);
    case AfKind::selu: return selu(x);
    case AfKind::softmax: break;
  }
  throw ContractViolation("softmax is not an elementwise function");
}

inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw ContractViolation("softmax of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& o : out) o /= sum;
  return out;
}

inline std::vector<double> apply(AfKind k, std::span<const double> v) {
  if (k == AfKind::softmax) return softmax(v);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = elementwise(k, v[i]);
  return out;
}

}  // namespace exact

struct AfResult {
  FxPWord y;
  std::int64_t cycles = 0;
  bool saturated = false;
};

struct AfVectorResult {
  std::vector<FxPWord> y;
  std::int64_t cycles = 0;
  int saturations = 0;
};

/// Default AF depth: one iteration per bit of the engine format.
inline int af_depth_for(const FxPFormat& fmt) { return fmt.width; }

namespace detail {

inline constexpr int kAfWorkWidth = 48;

inline FxPFormat af_work(int frac) { return {kAfWorkWidth, frac}; }

inline std::int64_t one_at(int frac) { return std::int64_t{1} << frac; }

// Narrowing for odd functions: saturate to [-max, max] so that negating the
// input negates the output exactly.
inline Narrowed narrow_symmetric(std::int64_t raw, int frac,
                                 const FxPFormat& out) {
  const std::int64_t r = rescale_rne(raw, frac, out.frac_bits);
  const std::int64_t lim = out.max_raw();
  if (r > lim) return {FxPWord::from_raw(lim, out), true};
  if (r < -lim) return {FxPWord::from_raw(-lim, out), true};
  return {FxPWord::from_raw(r, out), false};
}

inline Narrowed narrow_unit(std::int64_t raw, int frac, const FxPFormat& out) {
  const std::int64_t r = rescale_rne(raw, frac, out.frac_bits);
  if (r < 0) return {FxPWord::zero(out), false};
  return saturate(r, out);
}

// CORDIC multiply a*b into `out` (b drives the angle register).
inline MacResult multiply(const FxPWord& a, const FxPWord& b, int depth,
                          const FxPFormat& out) {
  return mac(FxPWord::zero(out), a, b, MacMode{MacKind::accurate, depth, 1});
}

inline FxPWord constant(double v, int frac) {
  return quantize(v, af_work(frac));
}

}  // namespace detail

/// Bypass: max(x, 0), one cycle. The output keeps x's format unless `out`
/// is given.
inline AfResult relu(const FxPWord& x, std::optional<FxPFormat> out = {}) {
  const FxPWord pos = x.raw() > 0 ? x : FxPWord::zero(x.format());
  if (!out || *out == x.format()) return {pos, 1, false};
  const Narrowed n = convert_checked(pos, *out);
  return {n.word, 1, n.saturated};
}

/// tanh on the hyperbolic datapath.
///
/// |x| <= 1: sinh/cosh by hyperbolic rotation, then a vectoring divide.
/// |x| > 1: 1 - 2/(e^{2|x|} + 1) with exp_fxp and a vectoring divide.
/// Inputs large enough that tanh rounds to 1 in `out` take a one-cycle
/// comparator path. Computed on |x| with the sign reapplied, so the result is
/// odd at the raw level.
inline AfResult tanh_af(const FxPWord& x, int depth,
                        std::optional<FxPFormat> out = {}) {
  const FxPFormat ofmt = out.value_or(x.format());
  require_valid(ofmt);
  const int frac =
      std::max(x.format().frac_bits, ofmt.frac_bits) + kGuardBits;
  const FxPFormat work = detail::af_work(frac);
  const std::int64_t one = detail::one_at(frac);
  const std::int64_t a =
      detail::abs64(x.raw()) << (frac - x.format().frac_bits);
  // 2 e^{-2a} < 2^-(f+1)  <=>  a > (f + 2) ln2 / 2.
  const auto a_sat = static_cast<std::int64_t>(std::ceil(
      std::ldexp((ofmt.frac_bits + 2) * std::numbers::ln2 / 2.0, frac)));

  std::int64_t t = 0;
  std::int64_t cycles = 0;
  if (a <= one) {
    const FxPFormat hfmt{detail::kAfWorkWidth, frac + kGuardBits};
    const HyperbolicResult h =
        hyperbolic_rotation(FxPWord::from_raw(a, work), depth, hfmt);
    const LinearResult q = linear_vectoring(h.cosh, h.sinh, depth, work);
    t = q.value.raw();
    cycles = h.cycles + q.cycles;
  } else if (a >= a_sat) {
    t = one;
    cycles = 1;
  } else {
    const FxPWord two_a = FxPWord::from_raw(a, detail::af_work(frac - 1));
    const LinearResult e = exp_fxp(two_a, depth, work);
    const FxPWord den = FxPWord::from_raw(e.value.raw() + one, work);
    const FxPWord two = FxPWord::from_raw(2 * one, work);
    const LinearResult q = linear_vectoring(den, two, depth, work);
    t = one - q.value.raw();
    cycles = e.cycles + 1 + q.cycles + 1;
  }
  const Narrowed y =
      detail::narrow_symmetric(x.raw() < 0 ? -t : t, frac, ofmt);
  return {y.word, cycles, y.saturated};
}

/// sigmoid(x) = (1 + tanh(x/2)) / 2: a free shift, tanh, one add and another
/// shift. The output is clamped to [0, 1].
inline AfResult sigmoid_af(const FxPWord& x, int depth,
                           std::optional<FxPFormat> out = {}) {
  const FxPFormat ofmt = out.value_or(x.format());
  require_valid(ofmt);
  const FxPWord half = FxPWord::from_raw(
      x.raw(), {x.format().width + 1, x.format().frac_bits + 1});
  const int frac =
      std::max(half.format().frac_bits, ofmt.frac_bits) + kGuardBits;
  const AfResult t = tanh_af(half, depth, detail::af_work(frac));
  const Narrowed y = detail::narrow_unit(
      t.y.raw() + detail::one_at(frac), frac + 1, ofmt);
  return {y.word, t.cycles + 1, y.saturated};
}

/// Softmax with max subtraction: exp of every (v_i - max) <= 0, a
/// saturating sum, and one vectoring divide per element.
///
/// Cycles: (n-1) compares for the max, n subtracts, n exps, (n-1) adds and
/// n divides.
inline AfVectorResult softmax_af(std::span<const FxPWord> v, int depth,
                                 std::optional<FxPFormat> out = {}) {
  if (v.empty()) throw ContractViolation("softmax of an empty vector");
  const FxPFormat in = v.front().format();
  for (const FxPWord& e : v) {
    if (e.format() != in) {
      throw ContractViolation("softmax operands must share one format");
    }
  }
  const FxPFormat ofmt = out.value_or(in);
  require_valid(ofmt);
  const std::int64_t n = static_cast<std::int64_t>(v.size());

  std::int64_t max_raw = v.front().raw();
  for (const FxPWord& e : v) max_raw = std::max(max_raw, e.raw());

  const FxPFormat diff_fmt = detail::af_work(in.frac_bits);
  const FxPFormat exp_fmt = detail::af_work(ofmt.frac_bits + kGuardBits);
  AfVectorResult res;
  res.cycles = (n - 1) + n;
  std::vector<FxPWord> exps;
  exps.reserve(v.size());
  FxPWord sum = FxPWord::zero(exp_fmt);
  for (const FxPWord& e : v) {
    const FxPWord d = FxPWord::from_raw(e.raw() - max_raw, diff_fmt);
    const LinearResult ex = exp_fxp(d, depth, exp_fmt);
    res.cycles += ex.cycles;
    exps.push_back(ex.value);
    sum = sat_add(sum, ex.value);
  }
  res.cycles += n - 1;
  res.y.reserve(v.size());
  for (const FxPWord& ex : exps) {
    const LinearResult q = linear_vectoring(sum, ex, depth, exp_fmt);
    res.cycles += q.cycles;
    const Narrowed y =
        detail::narrow_unit(q.value.raw(), exp_fmt.frac_bits, ofmt);
    if (y.saturated) ++res.saturations;
    res.y.push_back(y.word);
  }
  return res;
}

/// GELU (tanh form), Swish and SELU composed from the shared units.
///
/// gelu: x^2, x^3, the cubic term and the sqrt(2/pi) scale are four CORDIC
///       multiplies, then tanh, one add and a final multiply by x.
/// swish: sigmoid(x) then one multiply.
/// selu: a sign test, then lambda*x, or exp, a subtract and a multiply by
///       lambda*alpha.
inline AfResult derived_af(AfKind kind, const FxPWord& x, int depth,
                           std::optional<FxPFormat> out = {}) {
  const FxPFormat ofmt = out.value_or(x.format());
  require_valid(ofmt);
  const int frac =
      std::max(x.format().frac_bits, ofmt.frac_bits) + kGuardBits;
  const FxPFormat work = detail::af_work(frac);
  const FxPWord xw = convert(x, work);

  switch (kind) {
    case AfKind::gelu: {
      const MacResult x2 = detail::multiply(xw, xw, depth, work);
      const MacResult x3 = detail::multiply(x2.acc, xw, depth, work);
      const MacResult u =
          mac(xw, x3.acc, detail::constant(kGeluCubic, frac),
              MacMode{MacKind::accurate, depth, 1});
      const MacResult v = detail::multiply(
          u.acc, detail::constant(std::sqrt(2.0 / std::numbers::pi), frac),
          depth, work);
      const AfResult t = tanh_af(v.acc, depth, work);
      // (1 + t) / 2 in [0, 1]: the add lands one binary place lower.
      const FxPWord h = FxPWord::from_raw(t.y.raw() + detail::one_at(frac),
                                          detail::af_work(frac + 1));
      const MacResult y = detail::multiply(xw, h, depth, ofmt);
      return {y.acc, x2.cycles + x3.cycles + u.cycles + v.cycles + t.cycles +
                         1 + y.cycles,
              y.saturated};
    }
    case AfKind::swish: {
      const AfResult s = sigmoid_af(x, depth, work);
      const MacResult y = detail::multiply(xw, s.y, depth, ofmt);
      return {y.acc, s.cycles + y.cycles, y.saturated};
    }
    case AfKind::selu: {
      if (x.raw() > 0) {
        const MacResult y = detail::multiply(
            xw, detail::constant(kSeluLambda, frac), depth, ofmt);
        return {y.acc, 1 + y.cycles, y.saturated};
      }
      const LinearResult e = exp_fxp(xw, depth, work);
      const FxPWord em1 =
          FxPWord::from_raw(e.value.raw() - detail::one_at(frac), work);
      const MacResult y = detail::multiply(
          em1, detail::constant(kSeluLambda * kSeluAlpha, frac), depth, ofmt);
      return {y.acc, 1 + e.cycles + 1 + y.cycles, y.saturated};
    }
    default:
      break;
  }
  throw ContractViolation("derived_af: '" + std::string(to_string(kind)) +
                          "' is not a derived activation");
}

/// Dispatches a whole vector through the single AFU. Softmax consumes the
/// vector at once; every other function queues element by element, so the
/// cycle count is the serialized sum.
inline AfVectorResult apply(AfKind kind, std::span<const FxPWord> data,
                            int depth, std::optional<FxPFormat> out = {}) {
  if (kind == AfKind::softmax) return softmax_af(data, depth, out);
  AfVectorResult res;
  res.y.reserve(data.size());
  for (const FxPWord& x : data) {
    AfResult r;
    switch (kind) {
      case AfKind::relu: r = relu(x, out); break;
      case AfKind::tanh: r = tanh_af(x, depth, out); break;
      case AfKind::sigmoid: r = sigmoid_af(x, depth, out); break;
      default: r = derived_af(kind, x, depth, out); break;
    }
    res.y.push_back(r.y);
    res.cycles += r.cycles;
    if (r.saturated) ++res.saturations;
  }
  return res;
}

}  // namespace carmen
