#include "melfront/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "melfront/attention.hpp"

namespace melfront {

namespace {

inline Mat sigmoid_mat(Mat m) {
    return m.unaryExpr([](float x) { return 1.0f / (1.0f + std::exp(-x)); });
}

}  // namespace

GenerationEngine::GenerationEngine(const FrontendModel& model, Mat memory, int variants)
    : model_(&model),
      cfg_(model.cfg),
      memory_(std::move(memory)),
      variants_(variants),
      half_(model.cfg.precision.activations == Precision::f16) {
    if (variants_ < 1) throw std::invalid_argument("engine: variants must be >= 1");
    if (memory_.rows() != cfg_.memory_dim() || memory_.cols() < 1) {
        throw std::invalid_argument("engine: memory shape mismatch");
    }
    const int h = cfg_.hidden, fq = cfg_.bins * variants_;
    td_time_h_.assign(static_cast<std::size_t>(cfg_.n_layers), Mat::Zero(h, fq));
    cz_h_.assign(static_cast<std::size_t>(cfg_.n_layers), Mat::Zero(h, variants_));
    fq_h_.assign(static_cast<std::size_t>(cfg_.n_layers), Mat::Zero(h, variants_));
    td_out_.assign(static_cast<std::size_t>(cfg_.n_layers), Mat::Zero(h, fq));
    cz_out_.assign(static_cast<std::size_t>(cfg_.n_layers), Mat::Zero(h, variants_));
    ctx_h_ = Mat::Zero(h, variants_);
    attn_kappa_ = Mat::Zero(cfg_.mixture_components, variants_);
    prev_frame_ = Mat::Zero(cfg_.bins, variants_);
    cur_frame_ = Mat::Zero(cfg_.bins, variants_);
}

Mat GenerationEngine::maybe_quantize(Mat m) const {
    if (half_) quantize_half_inplace(m);
    return m;
}

Mat GenerationEngine::gru(const GruWeights& w, const Mat& x, const Mat& h) const {
    Mat z = sigmoid_mat(((w.wx_z * x + w.wh_z * h).colwise() + Vec(w.b_z.col(0))));
    Mat r = sigmoid_mat(((w.wx_r * x + w.wh_r * h).colwise() + Vec(w.b_r.col(0))));
    Mat n = ((w.wx_n * x + r.cwiseProduct(w.wh_n * h)).colwise() + Vec(w.b_n.col(0)))
                .array()
                .tanh()
                .matrix();
    Mat out = h + z.cwiseProduct(n - h);
    return maybe_quantize(std::move(out));
}

void GenerationEngine::attention_step() {
    const Mat& query = cz_h_[static_cast<std::size_t>(cfg_.attention_layer() - 1)];
    const AttentionConfig att = cfg_.attention();
    // attention internals run at full precision; only the emitted weights and
    // context are recast to the activation width
    MixtureValues vals =
        attn_step_params_plain(model_->attn_w, model_->attn_b, query, attn_kappa_, att);
    attn_kappa_ = vals.kappa;
    Mat phi = maybe_quantize(attn_weights_plain(vals, memory_length(), att));
    Mat ctx = maybe_quantize(memory_ * phi);  // (D x Q)
    ctx_h_ = maybe_quantize((model_->ctx_w * ctx).colwise() + Vec(model_->ctx_b.col(0)));
    attention_row_ = phi.rowwise().mean();
    dominant_location_ = dominant_kappa(vals).mean();
}

void GenerationEngine::begin_frame() {
    if (bin_cursor_ != 0) throw std::logic_error("engine: begin_frame inside an open frame");
    const int h = cfg_.hidden, f_bins = cfg_.bins, q = variants_;
    const int att_layer = cfg_.attention_layer();

    for (int layer = 1; layer <= cfg_.n_layers; ++layer) {
        const LayerWeights& lw = model_->layers[static_cast<std::size_t>(layer - 1)];
        const std::size_t li = static_cast<std::size_t>(layer - 1);

        // time-delayed stack: one time step over every (bin, variant) column,
        // then a bidirectional frequency pass over the new hiddens
        Mat u;
        if (layer == 1) {
            u = Mat(h, f_bins * q);
            for (int f = 0; f < f_bins; ++f) {
                for (int v = 0; v < q; ++v) {
                    u.col(f * q + v) = model_->in_td_w.col(0) * prev_frame_(f, v);
                }
            }
            u.colwise() += Vec(model_->in_td_b.col(0));
            u = maybe_quantize(std::move(u));
        } else {
            u = td_out_[li - 1];
        }
        td_time_h_[li] = gru(lw.td_time, u, td_time_h_[li]);

        Mat fwd = Mat::Zero(h, q), bwd = Mat::Zero(h, q);
        Mat bi(2 * h, f_bins * q);
        for (int f = 0; f < f_bins; ++f) {
            fwd = gru(lw.td_freq_fwd, td_time_h_[li].middleCols(f * q, q), fwd);
            bi.block(0, f * q, h, q) = fwd;
        }
        for (int f = f_bins - 1; f >= 0; --f) {
            bwd = gru(lw.td_freq_bwd, td_time_h_[li].middleCols(f * q, q), bwd);
            bi.block(h, f * q, h, q) = bwd;
        }
        Mat td_raw = maybe_quantize((lw.td_proj_w * bi).colwise() + Vec(lw.td_proj_b.col(0)));
        td_out_[li] = maybe_quantize(u + td_raw);

        // centralized stack
        Mat cz_in;
        if (layer == 1) {
            cz_in = maybe_quantize((model_->in_cz_w * prev_frame_).colwise() +
                                   Vec(model_->in_cz_b.col(0)));
        } else {
            cz_in = cz_out_[li - 1];
        }
        if (layer > att_layer) cz_in = maybe_quantize(cz_in + ctx_h_);
        cz_h_[li] = gru(lw.cz, cz_in, cz_h_[li]);
        cz_out_[li] = maybe_quantize(cz_in + cz_h_[li]);

        if (layer == att_layer) attention_step();

        fq_h_[li].setZero();  // frequency recurrence restarts every frame
    }

    ++counters_.td_evals;
    ++counters_.cz_evals;
    cache_frame_ = frame_index_;
    cur_frame_.setZero();
}

Eigen::RowVectorXf GenerationEngine::predict_next_bin() {
    if (cache_frame_ != frame_index_) {
        throw std::logic_error("engine: predict_next_bin without begin_frame");
    }
    if (bin_cursor_ >= cfg_.bins) throw std::logic_error("engine: frame already complete");
    const int q = variants_;
    const int att_layer = cfg_.attention_layer();

    // layer-1 frequency input is the previous bin's committed variant values
    Mat x_prev = Mat::Zero(1, q);
    if (bin_cursor_ > 0) x_prev = cur_frame_.row(bin_cursor_ - 1);
    Mat chain = maybe_quantize((model_->in_fq_w * x_prev).colwise() + Vec(model_->in_fq_b.col(0)));

    for (int layer = 1; layer <= cfg_.n_layers; ++layer) {
        const LayerWeights& lw = model_->layers[static_cast<std::size_t>(layer - 1)];
        const std::size_t li = static_cast<std::size_t>(layer - 1);
        Mat combined = chain + td_out_[li].middleCols(bin_cursor_ * q, q) + cz_out_[li];
        if (layer >= att_layer) combined += ctx_h_;
        combined = maybe_quantize(std::move(combined));
        fq_h_[li] = gru(lw.fq, combined, fq_h_[li]);
        chain = maybe_quantize(combined + fq_h_[li]);
    }
    ++counters_.fq_evals;
    Mat mu = maybe_quantize((model_->out_w * chain).colwise() + Vec(model_->out_b.col(0)));
    return mu.row(0);
}

void GenerationEngine::commit_bin(const Eigen::RowVectorXf& values) {
    if (values.cols() != variants_) throw std::invalid_argument("engine: commit width mismatch");
    if (bin_cursor_ >= cfg_.bins) throw std::logic_error("engine: commit past the frame end");
    cur_frame_.row(bin_cursor_) = values;
    ++bin_cursor_;
}

void GenerationEngine::finish_frame() {
    if (bin_cursor_ != cfg_.bins) throw std::logic_error("engine: finish_frame on a partial frame");
    prev_frame_ = cur_frame_;
    bin_cursor_ = 0;
    ++frame_index_;
}

void GenerationEngine::teacher_force_frame(const Vec& frame) {
    if (frame.size() != cfg_.bins) {
        throw std::invalid_argument("engine: teacher-forced frame has wrong bin count");
    }
    begin_frame();
    // frequency-stack state never crosses a frame boundary, so the bin sweep
    // is skipped; only the committed values matter for the next frame
    cur_frame_ = frame.replicate(1, variants_);
    bin_cursor_ = cfg_.bins;
    finish_frame();
}

SampleResult generate(const FrontendModel& model, const std::vector<int>& ids,
                      const SamplerConfig& cfg, const NormStats& stats,
                      const std::optional<PrimeInput>& prime) {
    if (cfg.noise_samples < 1) throw std::invalid_argument("sampler: Q must be >= 1");
    if (cfg.noise_range < 0.0f || cfg.noise_range > 0.75f) {
        throw std::invalid_argument("sampler: R must lie in [0, 0.75]");
    }
    if (cfg.max_frames < 0) throw std::invalid_argument("sampler: max_frames must be >= 0");
    if (static_cast<std::size_t>(model.cfg.bins) != stats.mean.size()) {
        throw std::invalid_argument("sampler: stats bin count does not match the model");
    }

    std::vector<int> full_ids;
    if (prime) {
        if (prime->grid.bins != model.cfg.bins || prime->grid.resolution != GridResolution::tier1 ||
            !prime->grid.normalized) {
            throw std::invalid_argument("sampler: prime grid must be a normalized tier1 grid");
        }
        full_ids = prime->ids;
    }
    full_ids.insert(full_ids.end(), ids.begin(), ids.end());

    const Mat memory = encode_text(model, full_ids);
    GenerationEngine engine(model, memory, cfg.noise_samples);

    if (prime) {
        for (int t = 0; t < prime->grid.frames; ++t) {
            Vec frame(model.cfg.bins);
            for (int f = 0; f < model.cfg.bins; ++f) frame(f) = prime->grid.at(t, f);
            engine.teacher_force_frame(frame);
        }
    }

    const float lo = stats.data_min - 1.0f;
    const float hi = stats.data_max + 1.0f;
    const int f_bins = model.cfg.bins;
    const int q = cfg.noise_samples;
    const int u_len = static_cast<int>(full_ids.size());

    std::mt19937 step_rng = make_rng(cfg.seed, 1);
    std::vector<std::mt19937> var_rng;
    var_rng.reserve(static_cast<std::size_t>(q));
    for (int v = 0; v < q; ++v) var_rng.push_back(make_rng(cfg.seed, 100 + static_cast<std::uint64_t>(v)));
    std::uniform_real_distribution<float> sigma_dist(0.0f, cfg.noise_range);

    SampleResult result;
    result.seed = cfg.seed;
    result.attention.memory_length = u_len;
    std::vector<std::vector<float>> rows;

    MelGrid grid(std::max(cfg.max_frames, 1), f_bins, GridResolution::tier1, true);
    int generated = 0;
    int end_streak = 0;
    result.terminated_by = TerminatedBy::max_frames;

    for (int t = 0; t < cfg.max_frames; ++t) {
        engine.begin_frame();
        for (int f = 0; f < f_bins; ++f) {
            const Eigen::RowVectorXf mu = engine.predict_next_bin();
            if (!mu.allFinite()) {
                throw std::runtime_error("sampler: non-finite prediction at frame " +
                                         std::to_string(t) + ", bin " + std::to_string(f));
            }
            const float mu_hat = mu.mean();
            grid.at(t, f) = mu_hat;
            const float sigma_r = cfg.noise_range == 0.0f ? 0.0f : sigma_dist(step_rng);
            Eigen::RowVectorXf inputs(q);
            for (int v = 0; v < q; ++v) {
                inputs(v) = sample_truncated_gaussian(mu_hat, sigma_r, lo, hi,
                                                      var_rng[static_cast<std::size_t>(v)]);
            }
            engine.commit_bin(inputs);
        }
        engine.finish_frame();
        ++generated;

        const Vec& att_row = engine.attention_row();
        std::vector<float> row(att_row.data(), att_row.data() + att_row.size());
        rows.push_back(std::move(row));
        const Vec ks = engine.kappa_mean();
        result.attention.kappa.emplace_back(ks.data(), ks.data() + ks.size());

        if (cfg.termination_patience > 0) {
            if (engine.dominant_location() > static_cast<float>(u_len) - 0.5f) {
                ++end_streak;
            } else {
                end_streak = 0;
            }
            if (end_streak >= cfg.termination_patience) {
                result.terminated_by = TerminatedBy::attention;
                break;
            }
        }
    }

    result.steps_used = generated;
    result.attention.weights = std::move(rows);
    MelGrid final_grid(std::max(generated, 0), f_bins, GridResolution::tier1, true);
    for (int t = 0; t < generated; ++t) {
        for (int f = 0; f < f_bins; ++f) final_grid.at(t, f) = grid.at(t, f);
    }
    result.grid = std::move(final_grid);
    return result;
}

}  // namespace melfront
