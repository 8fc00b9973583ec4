#include "ccnn/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ccnn {

double FixedPointFormat::step() const { return std::ldexp(1.0, -frac_bits); }

void FixedPointFormat::validate() const {
    if (wordlength < kMinWordlength || wordlength > kMaxWordlength) {
        throw Error(ErrorCode::invalid_config, "wordlength " + std::to_string(wordlength) + " outside [" +
                                                   std::to_string(kMinWordlength) + ", " +
                                                   std::to_string(kMaxWordlength) + "]");
    }
}

void QuantizedTensor::validate() const {
    format.validate();
    if (shape_size(shape) != values.size()) throw Error(ErrorCode::shape_mismatch, "quantized tensor shape/data mismatch");
    for (auto v : values) {
        if (v < format.min_code() || v > format.max_code()) {
            throw Error(ErrorCode::format_mismatch, "code " + std::to_string(v) + " outside the format range");
        }
    }
}

std::int64_t saturate(std::int64_t code, const FixedPointFormat& fmt) {
    return std::clamp(code, fmt.min_code(), fmt.max_code());
}

std::int64_t quantize_value(double x, const FixedPointFormat& fmt, bool* saturated) {
    const double scaled = std::ldexp(x, fmt.frac_bits);
    const double lo = static_cast<double>(fmt.min_code());
    const double hi = static_cast<double>(fmt.max_code());
    // nearbyint honours the default round-to-nearest-even mode.
    const double r = std::nearbyint(scaled);
    const bool clipped = r < lo || r > hi;
    if (saturated) *saturated = clipped;
    return static_cast<std::int64_t>(std::clamp(r, lo, hi));
}

double dequantize_value(std::int64_t code, const FixedPointFormat& fmt) {
    return std::ldexp(static_cast<double>(code), -fmt.frac_bits);
}

std::int64_t shift_round(std::int64_t value, int shift) {
    if (shift == 0) return value;
    if (shift < 0) {
        const int s = -shift;
        if (value == 0) return 0;
        constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
        constexpr auto kMin = std::numeric_limits<std::int64_t>::min();
        if (s >= 63) return value > 0 ? kMax : kMin;
        if (value > (kMax >> s)) return kMax;
        if (value < (kMin >> s)) return kMin;
        return value * (std::int64_t{1} << s);
    }
    if (shift >= 64) return 0;
    using Wide = __int128;
    const Wide v = value;
    const Wide q = v >> shift;  // floor
    const Wide rem = v - q * (Wide{1} << shift);
    const Wide half = Wide{1} << (shift - 1);
    if (rem > half || (rem == half && (q & 1) != 0)) return static_cast<std::int64_t>(q + 1);
    return static_cast<std::int64_t>(q);
}

std::int64_t rescale(std::int64_t value, int from_frac, const FixedPointFormat& to) {
    return saturate(shift_round(value, from_frac - to.frac_bits), to);
}

QuantizedTensor quantize_tensor(const Tensor& t, const FixedPointFormat& fmt, QuantizeStats* stats) {
    fmt.validate();
    QuantizedTensor q{t.shape, {}, fmt};
    q.values.reserve(t.size());
    std::size_t clipped = 0;
    for (float x : t.data) {
        bool sat = false;
        q.values.push_back(static_cast<std::int32_t>(quantize_value(x, fmt, &sat)));
        clipped += sat ? 1 : 0;
    }
    if (stats) stats->saturated += clipped;
    return q;
}

Tensor dequantize(const QuantizedTensor& q) {
    Tensor t;
    t.shape = q.shape;
    t.data.reserve(q.size());
    for (auto v : q.values) t.data.push_back(static_cast<float>(dequantize_value(v, q.format)));
    return t;
}

QuantizedTensor derive_lpu_weights(const QuantizedTensor& hpu_weights, const FixedPointFormat& lpu_format) {
    lpu_format.validate();
    if (lpu_format.wordlength > hpu_weights.format.wordlength) {
        throw Error(ErrorCode::format_mismatch, "LPU wordlength " + std::to_string(lpu_format.wordlength) +
                                                    " exceeds HPU wordlength " +
                                                    std::to_string(hpu_weights.format.wordlength));
    }
    QuantizedTensor out{hpu_weights.shape, {}, lpu_format};
    out.values.reserve(hpu_weights.size());
    for (auto v : hpu_weights.values) {
        out.values.push_back(static_cast<std::int32_t>(rescale(v, hpu_weights.format.frac_bits, lpu_format)));
    }
    return out;
}

int range_frac_bits(double max_abs, int wordlength) {
    if (!(max_abs > 0.0)) return wordlength - 1;
    const FixedPointFormat probe{wordlength, 0};
    const double hi = static_cast<double>(probe.max_code());
    // Largest f with round(max_abs * 2^f) <= max_code; search downward from a
    // log2 estimate to stay exact under rounding.
    int f = static_cast<int>(std::floor(std::log2(hi / max_abs))) + 1;
    f = std::clamp(f, kMinFracBits, kMaxFracBits);
    while (f > kMinFracBits && std::nearbyint(std::ldexp(max_abs, f)) > hi) --f;
    return f;
}

}  // namespace ccnn
