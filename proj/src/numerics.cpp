#include "melfront/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace melfront {

namespace {

inline std::uint32_t f32_bits(float x) {
    std::uint32_t u;
    std::memcpy(&u, &x, sizeof(u));
    return u;
}

inline float bits_f32(std::uint32_t u) {
    float x;
    std::memcpy(&x, &u, sizeof(x));
    return x;
}

}  // namespace

std::uint16_t float_to_half_bits(float x) {
    const std::uint32_t bits = f32_bits(x);
    const std::uint32_t sign = (bits >> 16) & 0x8000u;
    const std::uint32_t exp  = (bits >> 23) & 0xffu;
    std::uint32_t mant       = bits & 0x7fffffu;

    if (exp == 0xffu) {  // inf / nan, keep a nonzero payload for nan
        if (mant != 0) {
            return static_cast<std::uint16_t>(sign | 0x7c00u | 0x200u | (mant >> 13));
        }
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }

    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 0x1f) {  // too large: overflow to inf
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    if (e <= 0) {  // subnormal half or zero
        if (e < -10) {
            return static_cast<std::uint16_t>(sign);
        }
        mant |= 0x800000u;  // implicit bit
        const std::uint32_t shift   = static_cast<std::uint32_t>(14 - e);
        std::uint32_t half_mant     = mant >> shift;
        const std::uint32_t rem     = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) {
            ++half_mant;  // carry into the exponent field is the correct encoding
        }
        return static_cast<std::uint16_t>(sign | half_mant);
    }

    std::uint32_t half      = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) {
        ++half;  // rounding carry may roll into the exponent, including up to inf
    }
    return static_cast<std::uint16_t>(half);
}

float half_bits_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp  = (h >> 10) & 0x1fu;
    std::uint32_t mant       = h & 0x3ffu;

    if (exp == 0) {
        if (mant == 0) {
            return bits_f32(sign);
        }
        // normalize the subnormal
        int shifts = 0;
        while (!(mant & 0x400u)) {
            mant <<= 1;
            ++shifts;
        }
        mant &= 0x3ffu;
        const std::uint32_t e = static_cast<std::uint32_t>(127 - 15 + 1 - shifts);
        return bits_f32(sign | (e << 23) | (mant << 13));
    }
    if (exp == 0x1fu) {
        return bits_f32(sign | 0x7f800000u | (mant << 13));
    }
    return bits_f32(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

void quantize_half_inplace(Mat& m) {
    float* p = m.data();
    const Eigen::Index n = m.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        p[i] = quantize_half(p[i]);
    }
}

float stable_softplus(float x) {
    // log1pexp; the branch bounds keep every exp/log1p call inside the region
    // where it is exact and finite. NaN falls through the comparisons.
    if (x <= -37.0f) {
        return std::exp(x);
    }
    if (x <= 18.0f) {
        return std::log1p(std::exp(x));
    }
    if (x <= 33.3f) {
        return x + std::exp(-x);
    }
    if (x > 33.3f) {
        return x;
    }
    return x;  // NaN
}

float approx_tanh(float x) {
    return x / (1.0f + std::fabs(x));
}

Vec softmax(const Vec& v) {
    if (v.size() == 0) {
        throw std::invalid_argument("softmax: empty vector");
    }
    const float m = v.maxCoeff();
    Vec e = (v.array() - m).exp();
    return e / e.sum();
}

double standard_normal(std::mt19937& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u1 = 1.0 - unif(rng);  // (0, 1], keeps log() finite
    const double u2 = unif(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

float sample_truncated_gaussian(float mu, float sigma, float lo, float hi, std::mt19937& rng) {
    if (!(lo < hi)) {
        throw std::invalid_argument("sample_truncated_gaussian: empty truncation interval");
    }
    if (sigma < 0.0f) {
        throw std::invalid_argument("sample_truncated_gaussian: negative sigma");
    }
    if (sigma == 0.0f) {
        return std::clamp(mu, lo, hi);
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        const float z = mu + sigma * static_cast<float>(standard_normal(rng));
        if (z >= lo && z <= hi) {
            return z;
        }
    }
    return std::clamp(mu, lo, hi);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace melfront
