#pragma once

#include <vector>

#include "melfront/grid.hpp"
#include "melfront/model.hpp"

namespace melfront {

struct TeacherForcingItem {
    MelGrid grid;          // tier1, normalized, (cfg.frames x cfg.bins)
    std::vector<int> ids;  // symbol ids, non-empty
    int valid_frames = -1; // frames contributing to the loss; -1 means all
};

struct TeacherForcingBatch {
    std::vector<TeacherForcingItem> items;
};

struct ForwardOptions {
    bool capture_stacks = false;  // expose per-layer stack inputs/outputs
};

// Per-layer stack handles, all in the same column layout per stack, so a
// test can compare input and output values elementwise.
struct StackCapture {
    Var td_in, td_out;  // frequency-major grid layout
    Var cz_in, cz_out;  // frame layout
    Var fq_in, fq_out;  // frequency-major grid layout
};

struct ForwardResult {
    Var loss;   // scalar; mean over items of per-item masked MSE
    Var means;  // (1 x F*T*B), column (f*T + t)*B + b
    std::vector<Var> phi;    // per time step, (U_max x B)
    std::vector<Var> kappa;  // per time step, (M x B)
    std::vector<Var> params; // lifted parameter leaves, model visit order
    std::vector<StackCapture> stacks;  // filled when capture_stacks is set

    int frames = 0, bins = 0, batch = 0, memory_max = 0;
    std::vector<int> memory_lengths;

    Mat predicted_means(const Graph& g, int item) const;  // (T x F)
    AttentionRecord attention_record(const Graph& g, int item) const;
};

// Builds the full 5-layer time-delayed / centralized / frequency stack
// computation with attention at the middle layer on the tape, teacher-forced
// on the batch grids. Gradients flow to every parameter leaf in
// ForwardResult::params.
ForwardResult forward_teacher_forced(Graph& g, const FrontendModel& model,
                                     const TeacherForcingBatch& batch, ForwardOptions opt = {});

// Embedding lookup plus one bidirectional LSTM; one column per text position,
// each column the concatenated forward/backward states (2 * encoder_hidden).
Mat encode_text(const FrontendModel& model, const std::vector<int>& ids);

// Mean of squared differences over cells where mask is nonzero.
float mse_loss(const Mat& pred, const Mat& target, const Mat& mask);

}  // namespace melfront
