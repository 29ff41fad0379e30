#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace melfront {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

// Storage width of activations. Attention internals and optimizer state are
// pinned to 32 bits regardless of this setting.
enum class Precision { f16, f32 };

struct PrecisionPolicy {
    Precision activations = Precision::f32;

    static constexpr int attention_internal_bits = 32;
    static constexpr int optimizer_state_bits    = 32;

    int activation_bits() const { return activations == Precision::f16 ? 16 : 32; }
};

// IEEE 754 binary16 <-> binary32. 32->16 rounds to nearest even, 16->32 is exact.
std::uint16_t float_to_half_bits(float x);
float half_bits_to_float(std::uint16_t h);

// Round a 32-bit value through binary16 storage.
inline float quantize_half(float x) { return half_bits_to_float(float_to_half_bits(x)); }
void quantize_half_inplace(Mat& m);

// log(1 + exp(x)) evaluated piecewise so that no branch sees inputs outside
// its own region of numerical stability. NaN propagates.
float stable_softplus(float x);

// x / (1 + |x|): odd, strictly increasing, range (-1, 1).
float approx_tanh(float x);

// Max-subtracted exponential normalization. Throws on an empty vector.
Vec softmax(const Vec& v);

// Standard normal via Box-Muller; consumes exactly two uniforms, keeps no state.
double standard_normal(std::mt19937& rng);

// Draw from N(mu, sigma^2) conditioned on [lo, hi]. Rejection sampling with a
// clamp fallback after 100 rejections; sigma == 0 returns clamp(mu, lo, hi).
// Throws if lo >= hi.
float sample_truncated_gaussian(float mu, float sigma, float lo, float hi, std::mt19937& rng);

// Deterministic seed mixer for derived rng streams (splitmix64 over seed+stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

inline std::mt19937 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937(static_cast<std::uint32_t>(mix_seed(seed, stream) & 0xffffffffu));
}

}  // namespace melfront
