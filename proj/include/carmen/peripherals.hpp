// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "carmen/cordic.hpp"
#include "carmen/error.hpp"
#include "carmen/fxp.hpp"
#include "carmen/mac.hpp"

namespace carmen {

enum class PoolKind { max, avg, aad };

inline std::string_view to_string(PoolKind k) {
  switch (k) {
    case PoolKind::max: return "max";
    case PoolKind::avg: return "avg";
    case PoolKind::aad: return "aad";
  }
  return "?";
}

inline PoolKind parse_pool_kind(std::string_view s) {
  if (s == "max") return PoolKind::max;
  if (s == "avg") return PoolKind::avg;
  if (s == "aad") return PoolKind::aad;
  throw ContractViolation("unknown pool kind '" + std::string(s) + "'");
}

struct PoolSpec {
  PoolKind kind = PoolKind::max;
  int window_h = 1;
  int window_w = 2;
  int stride_h = 1;
  int stride_w = 2;

  bool valid() const {
    return window_h > 0 && window_w > 0 && stride_h > 0 && stride_w > 0;
  }
  int window_size() const { return window_h * window_w; }
};

/// Per-channel folded scale-and-shift (batch-norm style at inference time).
struct NormSpec {
  std::vector<FxPWord> scale;
  std::vector<FxPWord> shift;
};

struct PoolResult {
  FxPWord y;
  std::int64_t cycles = 0;
  bool saturated = false;
};

namespace detail {

inline constexpr int kPoolWorkWidth = 48;

// Divides a sum (binary point `frac`) by the window size n, narrowing into
// `out`. Power-of-two windows shift; other sizes run a vectoring divide
// against n * 2^e, where 2^e bounds |mean| by the output range.
struct MeanResult {
  std::int64_t raw = 0;  // at binary point `frac` of the returned value
  int frac = 0;
  std::int64_t cycles = 0;
};

inline MeanResult mean_of(std::int64_t sum, int frac, std::int64_t n,
                          const FxPFormat& out) {
  if (std::has_single_bit(static_cast<std::uint64_t>(n))) {
    return {sum, frac + std::countr_zero(static_cast<std::uint64_t>(n)), 1};
  }
  const int e = std::max(0, out.integer_bits() + 1);
  const int depth = std::min(kMaxDepth, out.width + 3);
  const FxPFormat num_fmt{kPoolWorkWidth, frac};
  const FxPWord y0 = FxPWord::from_raw(sum, num_fmt);
  const FxPWord x0 = FxPWord::from_raw(n << e, {kPoolWorkWidth, 0});
  const int qfrac = out.frac_bits + e + kGuardBits;
  const LinearResult q =
      linear_vectoring(x0, y0, depth, FxPFormat{kPoolWorkWidth, qfrac});
  return {q.value.raw(), qfrac - e, q.cycles};
}

}  // namespace detail

/// Reduces one pooling window.
///
/// max: exact maximum, n-1 compares.
/// avg: n-1 adds, then a shift (power-of-two n) or a CORDIC divide.
/// aad: mu = mean(window), d = mean(|x_i - mu|), y = mu + d, using only
///      adders, shifts and (for non-power-of-two windows) the divider.
inline PoolResult pool(std::span<const FxPWord> window, PoolKind kind) {
  if (window.empty()) throw ContractViolation("pool: empty window");
  const FxPFormat fmt = window.front().format();
  for (const FxPWord& w : window) {
    if (w.format() != fmt) {
      throw ContractViolation("pool: window elements must share one format");
    }
  }
  const auto n = static_cast<std::int64_t>(window.size());

  if (kind == PoolKind::max) {
    FxPWord best = window.front();
    for (const FxPWord& w : window) {
      if (w.raw() > best.raw()) best = w;
    }
    return {best, n - 1, false};
  }

  const int frac = fmt.frac_bits + kGuardBits;
  std::int64_t sum = 0;
  for (const FxPWord& w : window) sum += w.raw() << kGuardBits;
  std::int64_t cycles = n - 1;
  const detail::MeanResult mu = detail::mean_of(sum, frac, n, fmt);
  cycles += mu.cycles;

  if (kind == PoolKind::avg) {
    const Narrowed y =
        saturate(detail::rescale_rne(mu.raw, mu.frac, fmt.frac_bits), fmt);
    return {y.word, cycles, y.saturated};
  }

  // Deviations are taken at the mean's binary point so nothing is rounded
  // before the final narrowing.
  std::int64_t dev_sum = 0;
  for (const FxPWord& w : window) {
    dev_sum += detail::abs64((w.raw() << (mu.frac - fmt.frac_bits)) - mu.raw);
  }
  cycles += n + (n - 1);
  const detail::MeanResult dev = detail::mean_of(dev_sum, mu.frac, n, fmt);
  cycles += dev.cycles;
  const int f = std::max(mu.frac, dev.frac);
  const std::int64_t total =
      (mu.raw << (f - mu.frac)) + (dev.raw << (f - dev.frac));
  cycles += 1;
  const Narrowed y =
      saturate(detail::rescale_rne(total, f, fmt.frac_bits), fmt);
  return {y.word, cycles, y.saturated};
}

struct NormResult {
  std::vector<FxPWord> y;
  std::int64_t cycles = 0;
  int saturations = 0;
};

/// y_i = scale_i * x_i + shift_i, one CORDIC MAC per element. Outputs land
/// in `out` (default: x's format).
inline NormResult normalize(std::span<const FxPWord> x, const NormSpec& spec,
                            const MacMode& mode,
                            std::optional<FxPFormat> out = {}) {
  if (x.size() != spec.scale.size() || x.size() != spec.shift.size()) {
    throw ContractViolation(
        "normalize: " + std::to_string(x.size()) + " values vs " +
        std::to_string(spec.scale.size()) + " scales / " +
        std::to_string(spec.shift.size()) + " shifts");
  }
  NormResult res;
  res.y.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Narrowed b = convert_checked(spec.shift[i], out.value_or(x[i].format()));
    const MacResult m = mac(b.word, x[i], spec.scale[i], mode);
    res.y.push_back(m.acc);
    res.cycles += m.cycles;
    if (m.saturated || b.saturated) ++res.saturations;
  }
  return res;
}

}  // namespace carmen
