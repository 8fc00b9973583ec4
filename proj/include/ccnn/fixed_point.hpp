#pragma once

#include <cstdint>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

inline constexpr int kMinWordlength = 2;
inline constexpr int kMaxWordlength = 16;

// Signed two's-complement code of `wordlength` bits scaled by 2^-frac_bits.
// frac_bits is a pure exponent and may be negative or exceed wordlength - 1.
struct FixedPointFormat {
    int wordlength = 8;
    int frac_bits = 0;

    std::int64_t min_code() const { return -(std::int64_t{1} << (wordlength - 1)); }
    std::int64_t max_code() const { return (std::int64_t{1} << (wordlength - 1)) - 1; }
    double step() const;
    double min_value() const { return static_cast<double>(min_code()) * step(); }
    double max_value() const { return static_cast<double>(max_code()) * step(); }

    void validate() const;

    friend bool operator==(const FixedPointFormat&, const FixedPointFormat&) = default;
};

struct QuantizedTensor {
    Shape shape;
    std::vector<std::int32_t> values;
    FixedPointFormat format;

    std::size_t size() const { return values.size(); }
    void validate() const;

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

struct QuantizeStats {
    std::size_t saturated = 0;
};

std::int64_t saturate(std::int64_t code, const FixedPointFormat& fmt);

// Round-half-to-even of x * 2^frac_bits, saturated to the format range.
std::int64_t quantize_value(double x, const FixedPointFormat& fmt, bool* saturated = nullptr);
double dequantize_value(std::int64_t code, const FixedPointFormat& fmt);

// shift > 0: arithmetic right shift with round-half-to-even.
// shift < 0: left shift, saturating at the int64 limits.
std::int64_t shift_round(std::int64_t value, int shift);

// Re-express `value` (scaled by 2^-from_frac) in `to`, rounding and saturating.
std::int64_t rescale(std::int64_t value, int from_frac, const FixedPointFormat& to);

QuantizedTensor quantize_tensor(const Tensor& t, const FixedPointFormat& fmt, QuantizeStats* stats = nullptr);
Tensor dequantize(const QuantizedTensor& q);

// Weight sharing: derive low-precision codes from high-precision codes by a
// rounding shift, never from the real-valued master weights.
QuantizedTensor derive_lpu_weights(const QuantizedTensor& hpu_weights, const FixedPointFormat& lpu_format);

// Largest frac_bits for which max_abs is representable without saturation;
// wordlength - 1 when max_abs == 0. Clamped to [kMinFracBits, kMaxFracBits].
inline constexpr int kMinFracBits = -32;
inline constexpr int kMaxFracBits = 32;
int range_frac_bits(double max_abs, int wordlength);

}  // namespace ccnn
