#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "melfront/forward.hpp"
#include "melfront/grid.hpp"
#include "melfront/model.hpp"

namespace melfront {

struct SamplerConfig {
    int noise_samples = 100;       // Q
    float noise_range = 0.33f;     // R, sigma ~ Uniform(0, R) per bin step
    int max_frames = 112;          // cap on generated frames (0 is legal: empty output)
    int termination_patience = 3;  // consecutive end-of-text frames; <= 0 disables
    std::uint64_t seed = 0;
};

enum class TerminatedBy { attention, max_frames };

struct SampleResult {
    MelGrid grid;  // tier1, normalized; frame count equals attention.steps()
    AttentionRecord attention;
    std::uint64_t seed = 0;
    int steps_used = 0;
    TerminatedBy terminated_by = TerminatedBy::max_frames;
};

struct PrimeInput {
    MelGrid grid;          // normalized tier1 prefix, teacher-forced before generation
    std::vector<int> ids;  // prime text ids, prepended to the target ids
};

struct CacheCounters {
    std::int64_t td_evals = 0;  // frame-level time-delayed stack advances
    std::int64_t cz_evals = 0;  // frame-level centralized stack advances
    std::int64_t fq_evals = 0;  // bin-level frequency stack advances
};

// Incremental decoder state over Q parallel noise variants.
//
// Frame-level work (time-delayed stack, centralized stack, attention) runs
// once per frame in begin_frame(); the per-frame outputs are cached and
// reused by every bin step. predict_next_bin() advances only the frequency
// stacks and must be followed by commit_bin() with the chosen variant inputs.
class GenerationEngine {
public:
    GenerationEngine(const FrontendModel& model, Mat memory, int variants);

    void begin_frame();
    Eigen::RowVectorXf predict_next_bin();            // (1 x Q) mean predictions
    void commit_bin(const Eigen::RowVectorXf& values);  // per-variant inputs for this bin
    void finish_frame();

    // Teacher-forces one frame (shared across variants) without running the
    // frequency sweep; used for audio priming.
    void teacher_force_frame(const Vec& frame);

    // Mean over variants of the current frame's attention row / dominant
    // component location. Valid after begin_frame().
    const Vec& attention_row() const { return attention_row_; }
    float dominant_location() const { return dominant_location_; }

    const CacheCounters& counters() const { return counters_; }
    int memory_length() const { return static_cast<int>(memory_.cols()); }
    int bins() const { return cfg_.bins; }
    int variants() const { return variants_; }

private:
    void attention_step();
    Mat gru(const GruWeights& w, const Mat& x, const Mat& h) const;
    Mat maybe_quantize(Mat m) const;

    const FrontendModel* model_;
    FrontendConfig cfg_;
    Mat memory_;  // (D x U)
    int variants_;
    bool half_;

    // recurrent state per layer
    std::vector<Mat> td_time_h_;  // (h x F*Q)
    std::vector<Mat> cz_h_;       // (h x Q)
    std::vector<Mat> fq_h_;       // (h x Q), reset each frame
    Mat attn_kappa_;              // (M x Q)

    // per-frame caches; valid for cache_frame_
    std::vector<Mat> td_out_;  // (h x F*Q)
    std::vector<Mat> cz_out_;  // (h x Q)
    Mat ctx_h_;                // (h x Q)
    int cache_frame_ = -1;

    Mat prev_frame_;  // (F x Q) variant inputs of the last finished frame
    Mat cur_frame_;   // (F x Q) being filled
    int bin_cursor_ = 0;
    int frame_index_ = 0;

    Vec attention_row_;
    float dominant_location_ = 0.0f;
    CacheCounters counters_;
};

// Cell-by-cell stochastic generation per the Q-sample scheme: per bin step the
// Q mean predictions are averaged into mu^, mu^ is committed to the output
// grid, sigma_r ~ Uniform(0, R) is drawn once, and each variant receives its
// own truncated-Gaussian draw around (mu^, sigma_r) as the next input.
// Truncation bounds are [stats.data_min - 1, stats.data_max + 1].
SampleResult generate(const FrontendModel& model, const std::vector<int>& ids,
                      const SamplerConfig& cfg, const NormStats& stats,
                      const std::optional<PrimeInput>& prime = std::nullopt);

}  // namespace melfront
