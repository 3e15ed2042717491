// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <string>

#include "carmen/error.hpp"

namespace carmen {

/// Two's-complement fixed-point format: `width` total bits, `frac_bits` of
/// them below the binary point.
///
/// Engine-boundary tensors are 8 or 16 bits wide (see is_engine_format());
/// wider formats describe guard-extended registers inside the datapath.
struct FxPFormat {
  int width = 16;
  int frac_bits = 8;

  static constexpr int kMaxWidth = 62;

  constexpr bool valid() const {
    return width >= 2 && width <= kMaxWidth && frac_bits >= 0 &&
           frac_bits <= width - 1;
  }
  constexpr bool is_engine_format() const {
    return (width == 8 || width == 16) && frac_bits >= 0 &&
           frac_bits <= width - 1;
  }
  constexpr int integer_bits() const { return width - 1 - frac_bits; }
  constexpr std::int64_t max_raw() const {
    return (std::int64_t{1} << (width - 1)) - 1;
  }
  constexpr std::int64_t min_raw() const {
    return -(std::int64_t{1} << (width - 1));
  }
  double ulp() const { return std::ldexp(1.0, -frac_bits); }
  double max_value() const {
    return std::ldexp(static_cast<double>(max_raw()), -frac_bits);
  }
  double min_value() const {
    return std::ldexp(static_cast<double>(min_raw()), -frac_bits);
  }

  /// Same range, `guard` extra fraction bits.
  constexpr FxPFormat extended(int guard) const {
    return {width + guard, frac_bits + guard};
  }

  std::string to_string() const {
    return "Q" + std::to_string(width) + "." + std::to_string(frac_bits);
  }

  friend constexpr bool operator==(const FxPFormat&, const FxPFormat&) =
      default;
};

inline void require_valid(const FxPFormat& fmt) {
  if (!fmt.valid()) {
    throw ContractViolation("invalid fixed-point format " + fmt.to_string());
  }
}

/// A quantized sample: raw two's-complement integer plus its format.
class FxPWord {
 public:
  FxPWord() = default;

  static FxPWord from_raw(std::int64_t raw, FxPFormat fmt) {
    require_valid(fmt);
    if (raw < fmt.min_raw() || raw > fmt.max_raw()) {
      throw ContractViolation("raw value " + std::to_string(raw) +
                              " does not fit " + fmt.to_string());
    }
    return FxPWord(raw, fmt);
  }

  static FxPWord zero(FxPFormat fmt) { return from_raw(0, fmt); }

  std::int64_t raw() const { return raw_; }
  const FxPFormat& format() const { return format_; }
  double value() const {
    return std::ldexp(static_cast<double>(raw_), -format_.frac_bits);
  }
  bool is_max() const { return raw_ == format_.max_raw(); }
  bool is_min() const { return raw_ == format_.min_raw(); }

  friend bool operator==(const FxPWord&, const FxPWord&) = default;

  // Ordering is only meaningful within one format.
  friend std::strong_ordering operator<=>(const FxPWord& a, const FxPWord& b) {
    if (a.format_ != b.format_) {
      throw ContractViolation("comparing words of different formats");
    }
    return a.raw_ <=> b.raw_;
  }

 private:
  FxPWord(std::int64_t raw, FxPFormat fmt) : raw_(raw), format_(fmt) {}

  std::int64_t raw_ = 0;
  FxPFormat format_{};
};

/// Result of a narrowing operation; `saturated` reports clipping.
struct Narrowed {
  FxPWord word;
  bool saturated = false;
};

namespace detail {

inline std::int64_t clamp_raw(std::int64_t raw, const FxPFormat& fmt,
                              bool* saturated) {
  if (raw > fmt.max_raw()) {
    if (saturated) *saturated = true;
    return fmt.max_raw();
  }
  if (raw < fmt.min_raw()) {
    if (saturated) *saturated = true;
    return fmt.min_raw();
  }
  return raw;
}

// Arithmetic right shift with round-to-nearest, ties to even. k >= 0.
inline std::int64_t shift_right_rne(std::int64_t v, int k) {
  if (k <= 0) return v;
  if (k >= 63) return 0;
  const std::int64_t floor = v >> k;
  const std::int64_t rem = v - (floor << k);
  const std::int64_t half = std::int64_t{1} << (k - 1);
  if (rem > half || (rem == half && (floor & 1) != 0)) return floor + 1;
  return floor;
}

// Rescales a raw value between binary points; exact when widening.
inline std::int64_t rescale_rne(std::int64_t raw, int from_frac, int to_frac) {
  if (to_frac >= from_frac) return raw << (to_frac - from_frac);
  return shift_right_rne(raw, from_frac - to_frac);
}

inline std::int64_t rescale_floor(std::int64_t raw, int from_frac,
                                  int to_frac) {
  if (to_frac >= from_frac) return raw << (to_frac - from_frac);
  const int k = from_frac - to_frac;
  return k >= 63 ? (raw < 0 ? -1 : 0) : (raw >> k);
}

}  // namespace detail

/// Saturates an arbitrary raw integer (at `fmt`'s binary point) into `fmt`.
inline Narrowed saturate(std::int64_t raw, FxPFormat fmt) {
  require_valid(fmt);
  bool sat = false;
  const std::int64_t r = detail::clamp_raw(raw, fmt, &sat);
  return {FxPWord::from_raw(r, fmt), sat};
}

/// Round-to-nearest-even of v * 2^frac_bits, then saturation.
inline Narrowed quantize_checked(double v, FxPFormat fmt) {
  require_valid(fmt);
  if (!std::isfinite(v)) {
    throw InvalidModelData("cannot quantize non-finite value");
  }
  const double scaled = std::nearbyint(std::ldexp(v, fmt.frac_bits));
  if (scaled > static_cast<double>(fmt.max_raw())) {
    return {FxPWord::from_raw(fmt.max_raw(), fmt), true};
  }
  if (scaled < static_cast<double>(fmt.min_raw())) {
    return {FxPWord::from_raw(fmt.min_raw(), fmt), true};
  }
  return {FxPWord::from_raw(static_cast<std::int64_t>(scaled), fmt), false};
}

inline FxPWord quantize(double v, FxPFormat fmt) {
  return quantize_checked(v, fmt).word;
}

inline double dequantize(const FxPWord& w) { return w.value(); }

/// Converts to another format: RNE when dropping fraction bits, saturating.
inline Narrowed convert_checked(const FxPWord& a, FxPFormat to) {
  require_valid(to);
  const int from = a.format().frac_bits;
  // Values far beyond the target range saturate before the shift can overflow.
  if (to.frac_bits > from && a.raw() != 0) {
    const int shift = to.frac_bits - from;
    const std::int64_t limit = std::int64_t{1} << (62 - shift);
    if (a.raw() >= limit || a.raw() <= -limit) {
      return saturate(a.raw() > 0 ? to.max_raw() + 1 : to.min_raw() - 1, to);
    }
  }
  return saturate(detail::rescale_rne(a.raw(), from, to.frac_bits), to);
}

inline FxPWord convert(const FxPWord& a, FxPFormat to) {
  return convert_checked(a, to).word;
}

inline void require_same_format(const FxPWord& a, const FxPWord& b,
                                const char* op) {
  if (a.format() != b.format()) {
    throw ContractViolation(std::string(op) + ": format mismatch " +
                            a.format().to_string() + " vs " +
                            b.format().to_string());
  }
}

inline Narrowed sat_add_checked(const FxPWord& a, const FxPWord& b) {
  require_same_format(a, b, "sat_add");
  return saturate(a.raw() + b.raw(), a.format());
}

inline FxPWord sat_add(const FxPWord& a, const FxPWord& b) {
  return sat_add_checked(a, b).word;
}

inline FxPWord sat_sub(const FxPWord& a, const FxPWord& b) {
  require_same_format(a, b, "sat_sub");
  return saturate(a.raw() - b.raw(), a.format()).word;
}

inline FxPWord sat_neg(const FxPWord& a) {
  return saturate(-a.raw(), a.format()).word;
}

/// Arithmetic right shift by k, truncating toward negative infinity, as the
/// datapath shifters do. Error is below one ULP of the format.
inline FxPWord shift_round(const FxPWord& a, int k) {
  if (k < 0 || k >= a.format().width) {
    throw ContractViolation("shift count " + std::to_string(k) +
                            " out of range for " + a.format().to_string());
  }
  return FxPWord::from_raw(a.raw() >> k, a.format());
}

}  // namespace carmen
