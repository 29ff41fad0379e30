#pragma once

#include <vector>

#include "melfront/graph.hpp"

namespace melfront {

struct AttentionConfig {
    int mixture_components = 10;  // M
    float eps_kappa = 0.001f;     // minimum location advance per step
    float eps_beta = 0.01f;       // lower bound on the multiplicative sharpness
};

// Location / sharpness / weight per mixture component, one column per batch
// item. kappa is measured in memory-index units and never decreases.
struct MixtureParams {
    Mat kappa;  // (M x B)
    Mat beta;   // (M x B), >= 0
    Mat alpha;  // (M x B), columns sum to 1
};

// Full alignment history of one generated (or teacher-forced) sequence.
struct AttentionRecord {
    int memory_length = 0;                    // U
    std::vector<std::vector<float>> weights;  // steps x U
    std::vector<std::vector<float>> kappa;    // steps x M snapshots

    int steps() const { return static_cast<int>(weights.size()); }
};

// --- tape ops (training path and recompute oracle) ---

struct MixtureVars {
    Var kappa;
    Var beta;
    Var alpha;
};

// Projects a query column-batch h (H x B) through w_g/b_g to 3M rows split as
// kappa^/beta^/alpha^, then advances the mixture:
//   kappa += max(eps_kappa, softplus(kappa^) + eps_kappa)
//   beta   = softplus(beta^)
//   alpha  = column softmax(alpha^)
// Everything is evaluated at full precision regardless of the graph policy.
MixtureVars attn_step_params(Graph& g, Var w_g, Var b_g, Var h, const MixtureVars& prev,
                             const AttentionConfig& cfg);

// Monotonic mixture-of-logistics weights over memory positions 0..U-1:
//   T(u) = 1/2 + 1/2 * approx_tanh((u - kappa) * (beta + eps_beta) / 2)
//   phi(u) = sum_m alpha_m * (T(u + 1/2) - T(u - 1/2))
// Internals run at full precision; the result is cast back to the activation
// width. Entries are clamped at zero (the exact difference is nonnegative;
// rounding may not be).
Var attn_weights(Graph& g, const MixtureVars& params, int memory_length,
                 const AttentionConfig& cfg);

// Zero-initialized mixture state for the first step.
MixtureVars attn_initial_state(Graph& g, int mixture_components, int batch);

// --- plain evaluation (sampler fast path) ---

struct MixtureState {
    Mat kappa;  // (M x Q)
};

struct MixtureValues {
    Mat kappa, beta, alpha;  // (M x Q)
};

MixtureValues attn_step_params_plain(const Mat& w_g, const Mat& b_g, const Mat& h,
                                     const Mat& prev_kappa, const AttentionConfig& cfg);

// Weights for every variant column: (U x Q).
Mat attn_weights_plain(const MixtureValues& params, int memory_length, const AttentionConfig& cfg);

// Location of the component with the largest weight, per column.
Vec dominant_kappa(const MixtureValues& params);

}  // namespace melfront
