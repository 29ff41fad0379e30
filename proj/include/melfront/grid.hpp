#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace melfront {

enum class GridResolution : std::uint8_t {
    full = 0,     // (448, 256) log-mel
    tier1 = 1,    // (112, 32) model currency
    vocoder = 2,  // (4*T, 32) time-interpolated handoff grid
};

// A frames x bins matrix of log-mel values, stored row-major (time-major),
// tagged with its resolution and normalization state.
struct MelGrid {
    int frames = 0;
    int bins = 0;
    GridResolution resolution = GridResolution::full;
    bool normalized = false;
    std::vector<float> values;  // frames * bins, row-major

    MelGrid() = default;
    MelGrid(int t, int f, GridResolution res, bool norm = false)
        : frames(t), bins(f), resolution(res), normalized(norm),
          values(static_cast<std::size_t>(t) * f, 0.0f) {}

    float& at(int t, int f) { return values[static_cast<std::size_t>(t) * bins + f]; }
    float at(int t, int f) const { return values[static_cast<std::size_t>(t) * bins + f]; }

    bool finite() const;
};

// Per-frequency-bin normalization statistics pooled over a corpus, plus the
// extremes of the normalized training data.
struct NormStats {
    std::vector<float> mean;
    std::vector<float> std_dev;  // floored at 1e-5
    float data_min = 0.0f;
    float data_max = 0.0f;
};

// RMG1 grid file format:
//   bytes 0-3   magic "RMG1"
//   u32 LE      version = 1
//   u32 LE      frames (T)
//   u32 LE      bins (F)
//   u8          resolution (0 = full, 1 = tier1, 2 = vocoder handoff)
//   u8          normalized flag
//   6 bytes     reserved, zero
//   T*F f32 LE  values, row-major (time-major)
void save_rmg(const std::string& path, const MelGrid& grid);
MelGrid load_rmg(const std::string& path);

// NormStats as JSON: {"mean": [...], "std": [...], "data_min": x,
// "data_max": y, "n_mels": F}.
void save_stats_json(const std::string& path, const NormStats& stats);
NormStats load_stats_json(const std::string& path);

}  // namespace melfront
