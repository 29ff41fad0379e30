#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "melfront/attention.hpp"
#include "melfront/numerics.hpp"

namespace melfront {

struct FrontendConfig {
    int n_layers = 5;
    int hidden = 256;           // GRU hidden size for all grid recurrence
    int mixture_components = 10;
    int embedding_dim = 128;
    int encoder_hidden = 256;   // biLSTM hidden per direction; memory width is twice this
    int frames = 112;           // tier1 T
    int bins = 32;              // tier1 F
    int vocab_size = 0;
    float eps_kappa = 0.001f;
    float eps_beta = 0.01f;
    PrecisionPolicy precision;

    // middle of the combined layers, 1-based
    int attention_layer() const { return (n_layers + 1) / 2; }
    int memory_dim() const { return 2 * encoder_hidden; }
    AttentionConfig attention() const { return {mixture_components, eps_kappa, eps_beta}; }

    static FrontendConfig paper_scale(int vocab);
    static FrontendConfig desk_scale(int vocab);

    void validate() const;
};

// Gate order z, r, n; biases one per gate, so a cell holds 3*(h*d + h*h + h)
// scalars.
struct GruWeights {
    Mat wx_z, wx_r, wx_n;  // (h x d)
    Mat wh_z, wh_r, wh_n;  // (h x h)
    Mat b_z, b_r, b_n;     // (h x 1)
};

// Gate order i, f, g, o; 4*(h*d + h*h + h) scalars.
struct LstmWeights {
    Mat wx_i, wx_f, wx_g, wx_o;
    Mat wh_i, wh_f, wh_g, wh_o;
    Mat b_i, b_f, b_g, b_o;
};

// One combined layer: time-delayed stack (time GRU, then a bidirectional
// frequency GRU projected back to hidden), centralized stack, frequency stack.
struct LayerWeights {
    GruWeights td_time, td_freq_fwd, td_freq_bwd;
    Mat td_proj_w;  // (h x 2h)
    Mat td_proj_b;  // (h x 1)
    GruWeights cz, fq;
};

struct FrontendModel {
    FrontendConfig cfg;

    Mat embedding;  // (embedding_dim x vocab_size)
    LstmWeights enc_fwd, enc_bwd;

    // raw-grid input projections feeding layer 1
    Mat in_td_w, in_td_b;  // (h x 1), (h x 1)
    Mat in_fq_w, in_fq_b;
    Mat in_cz_w, in_cz_b;  // (h x F), (h x 1)

    std::vector<LayerWeights> layers;

    Mat attn_w, attn_b;  // (3M x h), (3M x 1)
    Mat ctx_w, ctx_b;    // (h x 2*encoder_hidden), (h x 1)
    Mat out_w, out_b;    // (1 x h), (1 x 1)

    // Canonical parameter enumeration; serialization, optimizer state and
    // gradient collection all rely on this order.
    void visit(const std::function<void(const std::string&, Mat&)>& fn);
    void visit(const std::function<void(const std::string&, const Mat&)>& fn) const;
};

FrontendModel init_model(const FrontendConfig& cfg, std::uint64_t seed);
std::int64_t count_parameters(const FrontendModel& model);

// Checkpoint file "RMCK": magic, u32 version, length-prefixed JSON config
// block, then named parameter blobs (name, rank, dims, f32 LE data).
// extra_json, when non-empty, must be a JSON object; it is merged into the
// config block (used for vocabulary and normalization stats).
void save_checkpoint(const std::string& path, const FrontendModel& model,
                     const std::string& extra_json = "");

struct Checkpoint {
    FrontendModel model;
    std::string config_json;  // full config block, including any extras
};

Checkpoint load_checkpoint(const std::string& path);

std::string config_to_json(const FrontendConfig& cfg);
FrontendConfig config_from_json(const std::string& json_text);

}  // namespace melfront
