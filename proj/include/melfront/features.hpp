#pragma once

#include <string>
#include <vector>

#include "melfront/grid.hpp"

namespace melfront {

struct AudioConfig {
    int sample_rate = 22050;
    int window_length = 1200;  // 6 x hop
    int hop = 200;
    int n_mels = 256;
    int target_frames = 448;
};

// Reads 16-bit PCM mono WAV at the configured sample rate. Samples are scaled
// by 1/32768. Anything else (rate, channels, bit depth, truncation) throws
// with the offending field named.
std::vector<float> load_wav(const std::string& path, int expected_rate = 22050);

void save_wav(const std::string& path, const std::vector<float>& samples, int sample_rate = 22050);

// Hann-windowed magnitude STFT, 256-band triangular mel filterbank (HTK mel
// scale, 0 Hz .. Nyquist), log(x + 1e-5), padded or truncated in time to
// target_frames. Result is a full-resolution grid.
MelGrid extract_logmel(const std::vector<float>& waveform, const AudioConfig& cfg = {});

// Strided decimation: out[t, f] = in[4t, 8f]; (448, 256) -> (112, 32).
MelGrid downsample_tier1(const MelGrid& mel);

// Per-frequency-bin mean/std pooled over all frames of all grids (population
// std, floored at 1e-5), plus the min/max of the normalized corpus.
NormStats compute_norm_stats(const std::vector<MelGrid>& grids);

MelGrid normalize(const MelGrid& mel, const NormStats& stats);
MelGrid denormalize(const MelGrid& mel, const NormStats& stats);

// Per-bin piecewise-linear upsampling in time by a fixed factor. Input frame t
// lands exactly at output index factor*t; the final factor-1 frames replicate
// the last input frame.
MelGrid interpolate_time(const MelGrid& mel, int factor = 4);

constexpr float kLogFloor = 1e-5f;

}  // namespace melfront
