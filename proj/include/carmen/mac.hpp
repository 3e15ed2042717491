// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Runtime-adaptive iterative CORDIC MAC. The multiplier operand x drives the
// angle register; approximate mode simply stops the loop early (the last
// iterations, which carry the least significant corrections, are dropped).

#include <algorithm>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "carmen/cordic.hpp"
#include "carmen/error.hpp"
#include "carmen/fxp.hpp"

namespace carmen {

namespace detail {
inline constexpr int kMacRegisterBits = 62;
}  // namespace detail

enum class MacKind { accurate, approximate };

inline std::string_view to_string(MacKind k) {
  return k == MacKind::accurate ? "accurate" : "approximate";
}

inline MacKind parse_mac_kind(std::string_view s) {
  if (s == "accurate") return MacKind::accurate;
  if (s == "approximate" || s == "approx") return MacKind::approximate;
  throw ContractViolation("unknown execution mode '" + std::string(s) + "'");
}

/// Default iteration depth: the format width when accurate, ceil(2w/3) when
/// approximate (6 for FxP8, 11 for FxP16).
inline int iterations_for(MacKind kind, const FxPFormat& fmt) {
  if (kind == MacKind::accurate) return fmt.width;
  return (2 * fmt.width + 2) / 3;
}

struct MacMode {
  MacKind kind = MacKind::accurate;
  int depth_accurate = 16;
  int depth_approx = 11;

  static MacMode defaults(const FxPFormat& fmt,
                          MacKind kind = MacKind::accurate) {
    return {kind, iterations_for(MacKind::accurate, fmt),
            iterations_for(MacKind::approximate, fmt)};
  }

  int depth() const {
    return kind == MacKind::accurate ? depth_accurate : depth_approx;
  }

  MacMode with_kind(MacKind k) const { return {k, depth_accurate, depth_approx}; }

  void validate() const {
    if (depth_approx < 1 || depth_accurate > kMaxDepth ||
        depth_approx >= depth_accurate) {
      throw ContractViolation(
          "iteration depths need 1 <= approximate < accurate <= " +
          std::to_string(kMaxDepth) + " (got approximate=" +
          std::to_string(depth_approx) +
          ", accurate=" + std::to_string(depth_accurate) + ")");
    }
  }

  /// Fraction of MAC cycles saved by approximate mode.
  double cycle_reduction() const {
    return 1.0 - static_cast<double>(depth_approx) / depth_accurate;
  }
};

struct MacResult {
  FxPWord acc;
  std::int64_t cycles = 0;
  bool saturated = false;
};

/// acc' = acc + w * x in acc's format.
///
/// x is normalized to m * 2^k with 1 <= |m| < 2 before it enters the angle
/// register (a leading-one detect); w is pre-scaled by 2^k on the way into
/// the x register, or for k < 0 the x/y registers simply gain -k fraction
/// bits. Both happen while the operands are fetched, so a MAC costs exactly
/// `mode.depth()` cycles and a truncated loop leaves a relative error of at
/// most 2^-(depth-1) in the product.
inline MacResult mac(const FxPWord& acc, const FxPWord& w, const FxPWord& x,
                     const MacMode& mode) {
  const int n = mode.depth();
  detail::check_depth(n);
  const FxPFormat& afmt = acc.format();
  detail::check_internal(afmt);

  const auto mag = static_cast<std::uint64_t>(detail::abs64(x.raw()));
  const int xf = x.format().frac_bits;
  const int wf = w.format().frac_bits;
  const int k = mag == 0 ? 0 : static_cast<int>(std::bit_width(mag)) - 1 - xf;
  const int down = std::max(0, k);

  // y register precision: guard bits below the output, and never coarser
  // than w * 2^k so the pre-scaled multiplicand enters exactly.
  const int g = std::max(afmt.frac_bits + kGuardBits, wf - down);
  const int w_bits =
      static_cast<int>(std::bit_width(
          static_cast<std::uint64_t>(detail::abs64(w.raw())))) - wf + down;
  const int headroom = std::max(afmt.integer_bits() + 1, w_bits + 1) + 2;
  if (headroom + g > detail::kMacRegisterBits) {
    throw ContractViolation("mac: operands " + w.format().to_string() + " x " +
                            x.format().to_string() + " into " +
                            afmt.to_string() + " overflow the datapath");
  }
  // Left normalization of small x widens the registers by `up` bits, as far
  // as they reach.
  const int up = std::min(std::max(0, -k), detail::kMacRegisterBits - headroom - g);

  CordicState s;
  s.frac_xy = g + up;
  s.frac_z = std::max(xf - up + down, n);
  s.x = w.raw() << (g - wf + down);
  s.y = acc.raw() << (s.frac_xy - afmt.frac_bits);
  s.z = x.raw() << (s.frac_z - xf + up - down);
  while (s.iter < n) linear_rotation_step(s);
  const Narrowed r =
      saturate(detail::shift_right_rne(s.y, s.frac_xy - afmt.frac_bits), afmt);
  return {r.word, s.cycles, r.saturated};
}

struct DotResult {
  FxPWord y;
  std::int64_t cycles = 0;
  int saturations = 0;
};

/// PE accumulator: four guard fraction bits plus four integer headroom bits
/// over the output format.
inline FxPFormat accumulator_format(const FxPFormat& out) {
  return {out.width + 2 * kGuardBits, out.frac_bits + kGuardBits};
}

/// Serial dot product on one PE: a left-to-right fold of mac() starting from
/// `init`, narrowed once into `out`.
inline DotResult dot(std::span<const FxPWord> w, std::span<const FxPWord> x,
                     const MacMode& mode, const FxPFormat& out,
                     const FxPWord& init) {
  if (w.size() != x.size()) {
    throw ContractViolation("dot: length mismatch " +
                            std::to_string(w.size()) + " vs " +
                            std::to_string(x.size()));
  }
  if (w.empty()) throw ContractViolation("dot: empty operands");
  const FxPFormat afmt = accumulator_format(out);
  Narrowed acc = convert_checked(init, afmt);
  DotResult res;
  res.saturations = acc.saturated ? 1 : 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    MacResult m = mac(acc.word, w[i], x[i], mode);
    acc.word = m.acc;
    res.cycles += m.cycles;
    if (m.saturated) ++res.saturations;
  }
  const Narrowed y = convert_checked(acc.word, out);
  if (y.saturated) ++res.saturations;
  res.y = y.word;
  return res;
}

inline DotResult dot(std::span<const FxPWord> w, std::span<const FxPWord> x,
                     const MacMode& mode, const FxPFormat& out) {
  return dot(w, x, mode, out, FxPWord::zero(out));
}

inline DotResult dot(std::span<const FxPWord> w, std::span<const FxPWord> x,
                     const MacMode& mode) {
  if (x.empty()) throw ContractViolation("dot: empty operands");
  return dot(w, x, mode, x.front().format());
}

}  // namespace carmen
