#include "melfront/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace melfront {

FrontendConfig FrontendConfig::paper_scale(int vocab) {
    FrontendConfig cfg;
    cfg.vocab_size = vocab;
    return cfg;
}

FrontendConfig FrontendConfig::desk_scale(int vocab) {
    FrontendConfig cfg;
    cfg.hidden = 64;
    cfg.mixture_components = 4;
    cfg.embedding_dim = 32;
    cfg.encoder_hidden = 64;
    cfg.frames = 28;
    cfg.bins = 8;
    cfg.vocab_size = vocab;
    return cfg;
}

void FrontendConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
    if (hidden < 1) throw std::invalid_argument("config: hidden must be positive");
    if (mixture_components < 1) throw std::invalid_argument("config: M must be >= 1");
    if (frames < 1 || bins < 1) throw std::invalid_argument("config: bad tier shape");
    if (vocab_size < 2) throw std::invalid_argument("config: vocabulary too small");
    if (eps_kappa <= 0.0f || eps_beta <= 0.0f) {
        throw std::invalid_argument("config: eps values must be strictly positive");
    }
}

namespace {

Mat uniform_init(int rows, int cols, int fan_in, std::mt19937& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in > 0 ? fan_in : 1));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = dist(rng);
        }
    }
    return m;
}

GruWeights init_gru(int hidden, int input, std::mt19937& rng) {
    GruWeights w;
    w.wx_z = uniform_init(hidden, input, input, rng);
    w.wx_r = uniform_init(hidden, input, input, rng);
    w.wx_n = uniform_init(hidden, input, input, rng);
    w.wh_z = uniform_init(hidden, hidden, hidden, rng);
    w.wh_r = uniform_init(hidden, hidden, hidden, rng);
    w.wh_n = uniform_init(hidden, hidden, hidden, rng);
    w.b_z = Mat::Zero(hidden, 1);
    w.b_r = Mat::Zero(hidden, 1);
    w.b_n = Mat::Zero(hidden, 1);
    return w;
}

LstmWeights init_lstm(int hidden, int input, std::mt19937& rng) {
    LstmWeights w;
    w.wx_i = uniform_init(hidden, input, input, rng);
    w.wx_f = uniform_init(hidden, input, input, rng);
    w.wx_g = uniform_init(hidden, input, input, rng);
    w.wx_o = uniform_init(hidden, input, input, rng);
    w.wh_i = uniform_init(hidden, hidden, hidden, rng);
    w.wh_f = uniform_init(hidden, hidden, hidden, rng);
    w.wh_g = uniform_init(hidden, hidden, hidden, rng);
    w.wh_o = uniform_init(hidden, hidden, hidden, rng);
    w.b_i = Mat::Zero(hidden, 1);
    w.b_f = Mat::Zero(hidden, 1);
    w.b_g = Mat::Zero(hidden, 1);
    w.b_o = Mat::Zero(hidden, 1);
    return w;
}

template <typename Fn>
void visit_gru(const std::string& prefix, GruWeights& w, const Fn& fn) {
    fn(prefix + ".wx_z", w.wx_z);
    fn(prefix + ".wx_r", w.wx_r);
    fn(prefix + ".wx_n", w.wx_n);
    fn(prefix + ".wh_z", w.wh_z);
    fn(prefix + ".wh_r", w.wh_r);
    fn(prefix + ".wh_n", w.wh_n);
    fn(prefix + ".b_z", w.b_z);
    fn(prefix + ".b_r", w.b_r);
    fn(prefix + ".b_n", w.b_n);
}

template <typename Fn>
void visit_lstm(const std::string& prefix, LstmWeights& w, const Fn& fn) {
    fn(prefix + ".wx_i", w.wx_i);
    fn(prefix + ".wx_f", w.wx_f);
    fn(prefix + ".wx_g", w.wx_g);
    fn(prefix + ".wx_o", w.wx_o);
    fn(prefix + ".wh_i", w.wh_i);
    fn(prefix + ".wh_f", w.wh_f);
    fn(prefix + ".wh_g", w.wh_g);
    fn(prefix + ".wh_o", w.wh_o);
    fn(prefix + ".b_i", w.b_i);
    fn(prefix + ".b_f", w.b_f);
    fn(prefix + ".b_g", w.b_g);
    fn(prefix + ".b_o", w.b_o);
}

template <typename Fn>
void visit_impl(FrontendModel& m, const Fn& fn) {
    fn("embedding", m.embedding);
    visit_lstm("encoder.fwd", m.enc_fwd, fn);
    visit_lstm("encoder.bwd", m.enc_bwd, fn);
    fn("in.td.w", m.in_td_w);
    fn("in.td.b", m.in_td_b);
    fn("in.fq.w", m.in_fq_w);
    fn("in.fq.b", m.in_fq_b);
    fn("in.cz.w", m.in_cz_w);
    fn("in.cz.b", m.in_cz_b);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l + 1);
        visit_gru(p + ".td_time", m.layers[l].td_time, fn);
        visit_gru(p + ".td_freq_fwd", m.layers[l].td_freq_fwd, fn);
        visit_gru(p + ".td_freq_bwd", m.layers[l].td_freq_bwd, fn);
        fn(p + ".td_proj.w", m.layers[l].td_proj_w);
        fn(p + ".td_proj.b", m.layers[l].td_proj_b);
        visit_gru(p + ".cz", m.layers[l].cz, fn);
        visit_gru(p + ".fq", m.layers[l].fq, fn);
    }
    fn("attn.w", m.attn_w);
    fn("attn.b", m.attn_b);
    fn("ctx.w", m.ctx_w);
    fn("ctx.b", m.ctx_b);
    fn("out.w", m.out_w);
    fn("out.b", m.out_b);
}

}  // namespace

void FrontendModel::visit(const std::function<void(const std::string&, Mat&)>& fn) {
    visit_impl(*this, fn);
}

void FrontendModel::visit(const std::function<void(const std::string&, const Mat&)>& fn) const {
    visit_impl(const_cast<FrontendModel&>(*this),
               [&fn](const std::string& name, Mat& m) { fn(name, m); });
}

FrontendModel init_model(const FrontendConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937 rng = make_rng(seed, 0xdecafull);
    FrontendModel m;
    m.cfg = cfg;
    const int h = cfg.hidden;

    m.embedding = uniform_init(cfg.embedding_dim, cfg.vocab_size, cfg.embedding_dim, rng);
    m.enc_fwd = init_lstm(cfg.encoder_hidden, cfg.embedding_dim, rng);
    m.enc_bwd = init_lstm(cfg.encoder_hidden, cfg.embedding_dim, rng);

    m.in_td_w = uniform_init(h, 1, 1, rng);
    m.in_td_b = Mat::Zero(h, 1);
    m.in_fq_w = uniform_init(h, 1, 1, rng);
    m.in_fq_b = Mat::Zero(h, 1);
    m.in_cz_w = uniform_init(h, cfg.bins, cfg.bins, rng);
    m.in_cz_b = Mat::Zero(h, 1);

    m.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (LayerWeights& layer : m.layers) {
        layer.td_time = init_gru(h, h, rng);
        layer.td_freq_fwd = init_gru(h, h, rng);
        layer.td_freq_bwd = init_gru(h, h, rng);
        layer.td_proj_w = uniform_init(h, 2 * h, 2 * h, rng);
        layer.td_proj_b = Mat::Zero(h, 1);
        layer.cz = init_gru(h, h, rng);
        layer.fq = init_gru(h, h, rng);
    }

    m.attn_w = uniform_init(3 * cfg.mixture_components, h, h, rng);
    m.attn_b = Mat::Zero(3 * cfg.mixture_components, 1);
    m.ctx_w = uniform_init(h, cfg.memory_dim(), cfg.memory_dim(), rng);
    m.ctx_b = Mat::Zero(h, 1);
    m.out_w = uniform_init(1, h, h, rng);
    m.out_b = Mat::Zero(1, 1);
    return m;
}

std::int64_t count_parameters(const FrontendModel& model) {
    std::int64_t n = 0;
    model.visit([&n](const std::string&, const Mat& m) { n += m.size(); });
    return n;
}

std::string config_to_json(const FrontendConfig& cfg) {
    nlohmann::json j;
    j["n_layers"] = cfg.n_layers;
    j["hidden"] = cfg.hidden;
    j["mixture_components"] = cfg.mixture_components;
    j["embedding_dim"] = cfg.embedding_dim;
    j["encoder_hidden"] = cfg.encoder_hidden;
    j["frames"] = cfg.frames;
    j["bins"] = cfg.bins;
    j["vocab_size"] = cfg.vocab_size;
    j["eps_kappa"] = cfg.eps_kappa;
    j["eps_beta"] = cfg.eps_beta;
    j["activation_bits"] = cfg.precision.activation_bits();
    return j.dump();
}

FrontendConfig config_from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    FrontendConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.mixture_components = j.at("mixture_components").get<int>();
    cfg.embedding_dim = j.at("embedding_dim").get<int>();
    cfg.encoder_hidden = j.at("encoder_hidden").get<int>();
    cfg.frames = j.at("frames").get<int>();
    cfg.bins = j.at("bins").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.eps_kappa = j.at("eps_kappa").get<float>();
    cfg.eps_beta = j.at("eps_beta").get<float>();
    cfg.precision.activations =
        j.at("activation_bits").get<int>() == 16 ? Precision::f16 : Precision::f32;
    return cfg;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error(std::string("RMCK: truncated while reading ") + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const FrontendModel& model,
                     const std::string& extra_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("RMCK: cannot open for writing: " + path);

    nlohmann::json j = nlohmann::json::parse(config_to_json(model.cfg));
    if (!extra_json.empty()) {
        const nlohmann::json extra = nlohmann::json::parse(extra_json);
        for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    }
    const std::string config = j.dump();

    os.write("RMCK", 4);
    write_u32(os, 1u);
    write_u32(os, static_cast<std::uint32_t>(config.size()));
    os.write(config.data(), static_cast<std::streamsize>(config.size()));

    model.visit([&os](const std::string& name, const Mat& m) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, 2u);
        write_u32(os, static_cast<std::uint32_t>(m.rows()));
        write_u32(os, static_cast<std::uint32_t>(m.cols()));
        os.write(reinterpret_cast<const char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
    });
    if (!os) throw std::runtime_error("RMCK: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("RMCK: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RMCK", 4) != 0) {
        throw std::runtime_error("RMCK: bad magic in " + path);
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != 1) throw std::runtime_error("RMCK: unsupported version");
    const std::uint32_t config_len = read_u32(is, "config length");
    std::string config(config_len, '\0');
    if (!is.read(config.data(), config_len)) throw std::runtime_error("RMCK: truncated config");

    Checkpoint ckpt;
    ckpt.config_json = config;
    ckpt.model = init_model(config_from_json(config), 0);

    ckpt.model.visit([&is, &path](const std::string& name, Mat& m) {
        const std::uint32_t name_len = read_u32(is, "blob name length");
        std::string stored(name_len, '\0');
        if (!is.read(stored.data(), name_len)) throw std::runtime_error("RMCK: truncated blob name");
        if (stored != name) {
            throw std::runtime_error("RMCK: parameter order mismatch, expected " + name + " got " +
                                     stored + " in " + path);
        }
        const std::uint32_t rank = read_u32(is, "blob rank");
        if (rank != 2) throw std::runtime_error("RMCK: unexpected blob rank");
        const std::uint32_t rows = read_u32(is, "blob rows");
        const std::uint32_t cols = read_u32(is, "blob cols");
        if (rows != static_cast<std::uint32_t>(m.rows()) ||
            cols != static_cast<std::uint32_t>(m.cols())) {
            throw std::runtime_error("RMCK: shape mismatch for " + name);
        }
        if (!is.read(reinterpret_cast<char*>(m.data()),
                     static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())))) {
            throw std::runtime_error("RMCK: truncated blob data for " + name);
        }
    });
    return ckpt;
}

}  // namespace melfront
