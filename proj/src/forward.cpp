#include "melfront/forward.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>

namespace melfront {

namespace {

struct GruVars {
    Var wx_z, wx_r, wx_n, wh_z, wh_r, wh_n, b_z, b_r, b_n;
};

struct LstmVars {
    Var wx_i, wx_f, wx_g, wx_o, wh_i, wh_f, wh_g, wh_o, b_i, b_f, b_g, b_o;
};

struct LayerVars {
    GruVars td_time, td_freq_fwd, td_freq_bwd;
    Var td_proj_w, td_proj_b;
    GruVars cz, fq;
};

struct LiftedModel {
    Var embedding;
    LstmVars enc_fwd, enc_bwd;
    Var in_td_w, in_td_b, in_fq_w, in_fq_b, in_cz_w, in_cz_b;
    std::vector<LayerVars> layers;
    Var attn_w, attn_b, ctx_w, ctx_b, out_w, out_b;
};

class NameTable {
public:
    void put(const std::string& name, Var v) { map_[name] = v; }
    Var get(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw std::logic_error("lift: missing parameter " + name);
        return it->second;
    }

private:
    std::unordered_map<std::string, Var> map_;
};

GruVars lift_gru(const NameTable& t, const std::string& p) {
    return {t.get(p + ".wx_z"), t.get(p + ".wx_r"), t.get(p + ".wx_n"),
            t.get(p + ".wh_z"), t.get(p + ".wh_r"), t.get(p + ".wh_n"),
            t.get(p + ".b_z"),  t.get(p + ".b_r"),  t.get(p + ".b_n")};
}

LstmVars lift_lstm(const NameTable& t, const std::string& p) {
    return {t.get(p + ".wx_i"), t.get(p + ".wx_f"), t.get(p + ".wx_g"), t.get(p + ".wx_o"),
            t.get(p + ".wh_i"), t.get(p + ".wh_f"), t.get(p + ".wh_g"), t.get(p + ".wh_o"),
            t.get(p + ".b_i"),  t.get(p + ".b_f"),  t.get(p + ".b_g"),  t.get(p + ".b_o")};
}

LiftedModel lift_model(Graph& g, const FrontendModel& m, std::vector<Var>& params_out) {
    const bool half = g.policy().activations == Precision::f16;
    NameTable table;
    m.visit([&](const std::string& name, const Mat& mat) {
        Mat v = mat;
        if (half) quantize_half_inplace(v);  // forward copies at fp16; masters stay fp32
        Var var = g.leaf(std::move(v));
        params_out.push_back(var);
        table.put(name, var);
    });

    LiftedModel lm;
    lm.embedding = table.get("embedding");
    lm.enc_fwd = lift_lstm(table, "encoder.fwd");
    lm.enc_bwd = lift_lstm(table, "encoder.bwd");
    lm.in_td_w = table.get("in.td.w");
    lm.in_td_b = table.get("in.td.b");
    lm.in_fq_w = table.get("in.fq.w");
    lm.in_fq_b = table.get("in.fq.b");
    lm.in_cz_w = table.get("in.cz.w");
    lm.in_cz_b = table.get("in.cz.b");
    lm.layers.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l + 1);
        lm.layers[l].td_time = lift_gru(table, p + ".td_time");
        lm.layers[l].td_freq_fwd = lift_gru(table, p + ".td_freq_fwd");
        lm.layers[l].td_freq_bwd = lift_gru(table, p + ".td_freq_bwd");
        lm.layers[l].td_proj_w = table.get(p + ".td_proj.w");
        lm.layers[l].td_proj_b = table.get(p + ".td_proj.b");
        lm.layers[l].cz = lift_gru(table, p + ".cz");
        lm.layers[l].fq = lift_gru(table, p + ".fq");
    }
    lm.attn_w = table.get("attn.w");
    lm.attn_b = table.get("attn.b");
    lm.ctx_w = table.get("ctx.w");
    lm.ctx_b = table.get("ctx.b");
    lm.out_w = table.get("out.w");
    lm.out_b = table.get("out.b");
    return lm;
}

Var gru_cell(Graph& g, const GruVars& w, Var x, Var h) {
    Var z = g.sigmoid(g.add_colvec(g.add(g.matmul(w.wx_z, x), g.matmul(w.wh_z, h)), w.b_z));
    Var r = g.sigmoid(g.add_colvec(g.add(g.matmul(w.wx_r, x), g.matmul(w.wh_r, h)), w.b_r));
    Var n = g.tanh_exact(
        g.add_colvec(g.add(g.matmul(w.wx_n, x), g.cmul(r, g.matmul(w.wh_n, h))), w.b_n));
    // h' = h + z * (n - h)
    return g.add(h, g.cmul(z, g.sub(n, h)));
}

struct LstmState {
    Var h, c;
};

LstmState lstm_cell(Graph& g, const LstmVars& w, Var x, const LstmState& s) {
    Var i = g.sigmoid(g.add_colvec(g.add(g.matmul(w.wx_i, x), g.matmul(w.wh_i, s.h)), w.b_i));
    Var f = g.sigmoid(g.add_colvec(g.add(g.matmul(w.wx_f, x), g.matmul(w.wh_f, s.h)), w.b_f));
    Var cand = g.tanh_exact(g.add_colvec(g.add(g.matmul(w.wx_g, x), g.matmul(w.wh_g, s.h)), w.b_g));
    Var o = g.sigmoid(g.add_colvec(g.add(g.matmul(w.wx_o, x), g.matmul(w.wh_o, s.h)), w.b_o));
    LstmState out;
    out.c = g.add(g.cmul(f, s.c), g.cmul(i, cand));
    out.h = g.cmul(o, g.tanh_exact(out.c));
    return out;
}

// Embedding lookup + biLSTM over one id sequence; (2*enc_hidden x U).
Var encode_text_t(Graph& g, const LiftedModel& lm, const FrontendConfig& cfg,
                  const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("encode_text: empty id sequence");
    for (int id : ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw std::invalid_argument("encode_text: id " + std::to_string(id) +
                                        " outside the vocabulary");
        }
    }
    const int u_len = static_cast<int>(ids.size());
    Var emb = g.gather_cols(lm.embedding, ids);  // (E x U)

    Var zero = g.constant(Mat::Zero(cfg.encoder_hidden, 1));
    LstmState fwd{zero, zero}, bwd{zero, zero};
    std::vector<Var> fwd_h(static_cast<std::size_t>(u_len));
    std::vector<Var> bwd_h(static_cast<std::size_t>(u_len));
    for (int u = 0; u < u_len; ++u) {
        fwd = lstm_cell(g, lm.enc_fwd, g.slice_cols(emb, u, 1), fwd);
        fwd_h[static_cast<std::size_t>(u)] = fwd.h;
    }
    for (int u = u_len - 1; u >= 0; --u) {
        bwd = lstm_cell(g, lm.enc_bwd, g.slice_cols(emb, u, 1), bwd);
        bwd_h[static_cast<std::size_t>(u)] = bwd.h;
    }
    std::vector<Var> cols(static_cast<std::size_t>(u_len));
    for (int u = 0; u < u_len; ++u) {
        cols[static_cast<std::size_t>(u)] = g.concat_rows(
            {fwd_h[static_cast<std::size_t>(u)], bwd_h[static_cast<std::size_t>(u)]});
    }
    return g.concat_cols(cols);
}

void check_finite(const Graph& g, Var v, int layer, const char* stage) {
    if (!g.value(v).allFinite()) {
        throw std::runtime_error("forward: non-finite activations in layer " +
                                 std::to_string(layer) + " (" + stage + ")");
    }
}

}  // namespace

ForwardResult forward_teacher_forced(Graph& g, const FrontendModel& model,
                                     const TeacherForcingBatch& batch, ForwardOptions opt) {
    const FrontendConfig& cfg = model.cfg;
    cfg.validate();
    const int T = cfg.frames, F = cfg.bins, B = static_cast<int>(batch.items.size());
    if (B == 0) throw std::invalid_argument("forward: empty batch");
    for (const TeacherForcingItem& item : batch.items) {
        if (item.grid.frames != T || item.grid.bins != F) {
            throw std::invalid_argument("forward: grid shape does not match the configuration");
        }
        if (item.grid.resolution != GridResolution::tier1 || !item.grid.normalized) {
            throw std::invalid_argument("forward: grids must be normalized tier1");
        }
        if (!item.grid.finite()) throw std::invalid_argument("forward: non-finite grid values");
        if (item.ids.empty()) throw std::invalid_argument("forward: empty symbol sequence");
        const int vf = item.valid_frames < 0 ? T : item.valid_frames;
        if (vf < 1 || vf > T) throw std::invalid_argument("forward: bad valid_frames");
    }

    const bool half = cfg.precision.activations == Precision::f16;
    auto quant_in = [half](Mat m) {
        if (half) quantize_half_inplace(m);
        return m;
    };

    // column layouts
    auto main_col = [F, B](int t, int f, int b) { return (t * F + f) * B + b; };
    auto freq_col = [T, B](int f, int t, int b) { return (f * T + t) * B + b; };
    const int n_cells = T * F * B;

    ForwardResult res;
    res.frames = T;
    res.bins = F;
    res.batch = B;

    LiftedModel lm = lift_model(g, model, res.params);

    // per-item text memories
    std::vector<Var> memories;
    for (const TeacherForcingItem& item : batch.items) {
        memories.push_back(encode_text_t(g, lm, cfg, item.ids));
        res.memory_lengths.push_back(static_cast<int>(item.ids.size()));
        res.memory_max = std::max(res.memory_max, static_cast<int>(item.ids.size()));
    }

    // shifted input constants
    Mat xt = Mat::Zero(1, n_cells);       // x[t-1, f], main layout
    Mat xf = Mat::Zero(1, n_cells);       // x[t, f-1], frequency-major layout
    Mat xc = Mat::Zero(F, T * B);         // previous full frame, frame layout
    Mat target = Mat::Zero(1, n_cells);   // x[t, f], frequency-major layout
    Mat weight = Mat::Zero(1, n_cells);   // per-cell loss weights
    for (int b = 0; b < B; ++b) {
        const MelGrid& grid = batch.items[static_cast<std::size_t>(b)].grid;
        const int vf = batch.items[static_cast<std::size_t>(b)].valid_frames < 0
                           ? T
                           : batch.items[static_cast<std::size_t>(b)].valid_frames;
        const float w = 1.0f / (static_cast<float>(B) * static_cast<float>(vf) * static_cast<float>(F));
        for (int t = 0; t < T; ++t) {
            for (int f = 0; f < F; ++f) {
                if (t > 0) xt(0, main_col(t, f, b)) = grid.at(t - 1, f);
                if (f > 0) xf(0, freq_col(f, t, b)) = grid.at(t, f - 1);
                if (t > 0) xc(f, t * B + b) = grid.at(t - 1, f);
                target(0, freq_col(f, t, b)) = grid.at(t, f);
                if (t < vf) weight(0, freq_col(f, t, b)) = w;
            }
        }
    }

    // gather maps between layouts
    std::vector<int> to_freq(static_cast<std::size_t>(n_cells));   // freq <- main
    std::vector<int> to_main(static_cast<std::size_t>(n_cells));   // main <- freq
    std::vector<int> rep_frame(static_cast<std::size_t>(n_cells)); // freq <- frame layout
    for (int t = 0; t < T; ++t) {
        for (int f = 0; f < F; ++f) {
            for (int b = 0; b < B; ++b) {
                to_freq[static_cast<std::size_t>(freq_col(f, t, b))] = main_col(t, f, b);
                to_main[static_cast<std::size_t>(main_col(t, f, b))] = freq_col(f, t, b);
                rep_frame[static_cast<std::size_t>(freq_col(f, t, b))] = t * B + b;
            }
        }
    }

    Var xt_v = g.constant(quant_in(xt));
    Var xf_v = g.constant(quant_in(xf));
    Var xc_v = g.constant(quant_in(xc));

    const int h = cfg.hidden;
    const int att_layer = cfg.attention_layer();
    const AttentionConfig att_cfg = cfg.attention();

    Var td_prev_main;   // previous layer's time-delayed output, main layout
    Var cz_prev;        // previous layer's centralized output, frame layout
    Var fq_prev_freq;   // previous layer's frequency output, frequency layout
    Var ctx_h;          // projected context, frame layout; set at the attention layer

    for (int layer = 1; layer <= cfg.n_layers; ++layer) {
        const LayerVars& lv = lm.layers[static_cast<std::size_t>(layer - 1)];

        // --- time-delayed stack ---
        Var td_in_main =
            (layer == 1) ? g.add_colvec(g.matmul(lm.in_td_w, xt_v), lm.in_td_b) : td_prev_main;
        Var td_hidden = g.constant(Mat::Zero(h, F * B));
        std::vector<Var> td_steps(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            td_hidden = gru_cell(g, lv.td_time, g.slice_cols(td_in_main, t * F * B, F * B), td_hidden);
            td_steps[static_cast<std::size_t>(t)] = td_hidden;
        }
        Var z_main = g.concat_cols(td_steps);
        Var z_freq = g.gather_cols(z_main, to_freq);

        Var bi_zero = g.constant(Mat::Zero(h, T * B));
        std::vector<Var> fwd_steps(static_cast<std::size_t>(F));
        std::vector<Var> bwd_steps(static_cast<std::size_t>(F));
        Var bi_h = bi_zero;
        for (int f = 0; f < F; ++f) {
            bi_h = gru_cell(g, lv.td_freq_fwd, g.slice_cols(z_freq, f * T * B, T * B), bi_h);
            fwd_steps[static_cast<std::size_t>(f)] = bi_h;
        }
        bi_h = bi_zero;
        for (int f = F - 1; f >= 0; --f) {
            bi_h = gru_cell(g, lv.td_freq_bwd, g.slice_cols(z_freq, f * T * B, T * B), bi_h);
            bwd_steps[static_cast<std::size_t>(f)] = bi_h;
        }
        Var bi_cat = g.concat_rows({g.concat_cols(fwd_steps), g.concat_cols(bwd_steps)});
        Var td_raw = g.add_colvec(g.matmul(lv.td_proj_w, bi_cat), lv.td_proj_b);
        Var td_in_freq = g.gather_cols(td_in_main, to_freq);
        Var td_out_freq = g.add(td_in_freq, td_raw);
        Var td_out_main = g.gather_cols(td_out_freq, to_main);
        check_finite(g, td_out_freq, layer, "time-delayed stack");

        // --- centralized stack, with attention at the middle layer ---
        Var cz_in =
            (layer == 1) ? g.add_colvec(g.matmul(lm.in_cz_w, xc_v), lm.in_cz_b) : cz_prev;
        if (layer > att_layer) cz_in = g.add(cz_in, ctx_h);
        Var cz_hidden = g.constant(Mat::Zero(h, B));
        std::vector<Var> cz_steps(static_cast<std::size_t>(T));
        std::vector<Var> ctx_steps;
        MixtureVars attn_state;
        if (layer == att_layer) {
            attn_state = attn_initial_state(g, cfg.mixture_components, B);
            ctx_steps.reserve(static_cast<std::size_t>(T));
        }
        for (int t = 0; t < T; ++t) {
            cz_hidden = gru_cell(g, lv.cz, g.slice_cols(cz_in, t * B, B), cz_hidden);
            cz_steps[static_cast<std::size_t>(t)] = cz_hidden;
            if (layer == att_layer) {
                attn_state = attn_step_params(g, lm.attn_w, lm.attn_b, cz_hidden, attn_state, att_cfg);
                Var phi = attn_weights(g, attn_state, res.memory_max, att_cfg);
                phi = g.straight_through_scale(phi, cfg.mixture_components);
                res.phi.push_back(phi);
                res.kappa.push_back(attn_state.kappa);
                ctx_steps.push_back(g.attend(phi, memories));
            }
        }
        Var cz_out = g.add(cz_in, g.concat_cols(cz_steps));
        check_finite(g, cz_out, layer, "centralized stack");
        if (layer == att_layer) {
            Var ctx_all = g.concat_cols(ctx_steps);  // (D x T*B)
            ctx_h = g.add_colvec(g.matmul(lm.ctx_w, ctx_all), lm.ctx_b);
        }

        // --- frequency stack ---
        Var fq_base = (layer == 1)
                          ? g.add_colvec(g.matmul(lm.in_fq_w, xf_v), lm.in_fq_b)
                          : fq_prev_freq;
        Var fq_in = g.add(fq_base, g.add(td_out_freq, g.gather_cols(cz_out, rep_frame)));
        if (layer >= att_layer) fq_in = g.add(fq_in, g.gather_cols(ctx_h, rep_frame));
        Var fq_hidden = g.constant(Mat::Zero(h, T * B));
        std::vector<Var> fq_steps(static_cast<std::size_t>(F));
        for (int f = 0; f < F; ++f) {
            fq_hidden = gru_cell(g, lv.fq, g.slice_cols(fq_in, f * T * B, T * B), fq_hidden);
            fq_steps[static_cast<std::size_t>(f)] = fq_hidden;
        }
        Var fq_out_freq = g.add(fq_in, g.concat_cols(fq_steps));
        check_finite(g, fq_out_freq, layer, "frequency stack");

        if (opt.capture_stacks) {
            res.stacks.push_back(
                {td_in_freq, td_out_freq, cz_in, cz_out, fq_in, fq_out_freq});
        }

        td_prev_main = td_out_main;
        cz_prev = cz_out;
        fq_prev_freq = fq_out_freq;
    }

    res.means = g.add_colvec(g.matmul(lm.out_w, fq_prev_freq), lm.out_b);

    // per-item masked MSE, averaged over items; reductions stay at 32-bit
    {
        Graph::ScopedFullPrecision full(g);
        Var diff = g.sub(res.means, g.constant(target));
        Var sq = g.cmul(diff, diff);
        res.loss = g.sum_all(g.cmul(sq, g.constant(weight)));
    }
    return res;
}

Mat ForwardResult::predicted_means(const Graph& g, int item) const {
    Mat out(frames, bins);
    const Mat& m = g.value(means);
    for (int t = 0; t < frames; ++t) {
        for (int f = 0; f < bins; ++f) {
            out(t, f) = m(0, (f * frames + t) * batch + item);
        }
    }
    return out;
}

AttentionRecord ForwardResult::attention_record(const Graph& g, int item) const {
    AttentionRecord rec;
    rec.memory_length = memory_lengths[static_cast<std::size_t>(item)];
    for (std::size_t t = 0; t < phi.size(); ++t) {
        const Mat& w = g.value(phi[t]);
        const Mat& k = g.value(kappa[t]);
        std::vector<float> row(static_cast<std::size_t>(rec.memory_length));
        for (int u = 0; u < rec.memory_length; ++u) {
            row[static_cast<std::size_t>(u)] = w(u, item);
        }
        std::vector<float> ks(static_cast<std::size_t>(k.rows()));
        for (Eigen::Index i = 0; i < k.rows(); ++i) ks[static_cast<std::size_t>(i)] = k(i, item);
        rec.weights.push_back(std::move(row));
        rec.kappa.push_back(std::move(ks));
    }
    return rec;
}

Mat encode_text(const FrontendModel& model, const std::vector<int>& ids) {
    Graph g(model.cfg.precision);
    std::vector<Var> params;
    LiftedModel lm = lift_model(g, model, params);
    Var mem = encode_text_t(g, lm, model.cfg, ids);
    return g.value(mem);
}

float mse_loss(const Mat& pred, const Mat& target, const Mat& mask) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
        pred.rows() != mask.rows() || pred.cols() != mask.cols()) {
        throw std::invalid_argument("mse_loss: shape mismatch");
    }
    double acc = 0.0;
    std::int64_t count = 0;
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        for (Eigen::Index i = 0; i < pred.rows(); ++i) {
            if (mask(i, j) != 0.0f) {
                const double d = static_cast<double>(pred(i, j)) - target(i, j);
                acc += d * d;
                ++count;
            }
        }
    }
    if (count == 0) throw std::invalid_argument("mse_loss: empty mask");
    return static_cast<float>(acc / static_cast<double>(count));
}

}  // namespace melfront
