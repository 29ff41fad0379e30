#include "melfront/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace melfront {

MixtureVars attn_initial_state(Graph& g, int mixture_components, int batch) {
    MixtureVars s;
    s.kappa = g.constant(Mat::Zero(mixture_components, batch));
    s.beta = g.constant(Mat::Zero(mixture_components, batch));
    s.alpha = g.constant(Mat::Constant(mixture_components, batch,
                                       1.0f / static_cast<float>(mixture_components)));
    return s;
}

MixtureVars attn_step_params(Graph& g, Var w_g, Var b_g, Var h, const MixtureVars& prev,
                             const AttentionConfig& cfg) {
    const int m = cfg.mixture_components;
    if (!g.value(h).allFinite()) {
        throw std::runtime_error("attention: non-finite query hidden state");
    }
    Graph::ScopedFullPrecision full(g);
    Var raw = g.add_colvec(g.matmul(w_g, h), b_g);
    Var kappa_hat = g.slice_rows(raw, 0, m);
    Var beta_hat = g.slice_rows(raw, m, m);
    Var alpha_hat = g.slice_rows(raw, 2 * m, m);

    // Advance by at least eps_kappa even when softplus(kappa^) + eps_kappa
    // rounds just below it (a one-ulp float guard on the bound).
    Var advance = g.affine(g.softplus(kappa_hat), 1.0f, cfg.eps_kappa);
    Mat adv_clamped = g.value(advance).cwiseMax(cfg.eps_kappa);
    if ((adv_clamped.array() != g.value(advance).array()).any()) {
        advance = g.add(advance, g.constant(adv_clamped - g.value(advance)));
    }

    MixtureVars out;
    out.kappa = g.add(prev.kappa, advance);
    out.beta = g.softplus(beta_hat);
    out.alpha = g.softmax_cols(alpha_hat);
    return out;
}

Var attn_weights(Graph& g, const MixtureVars& params, int memory_length,
                 const AttentionConfig& cfg) {
    if (memory_length < 1) throw std::invalid_argument("attention: memory length must be >= 1");
    const int m = static_cast<int>(g.value(params.kappa).rows());

    Var phi;
    {
        Graph::ScopedFullPrecision full(g);
        Mat pos_hi(memory_length, 1), pos_lo(memory_length, 1);
        for (int u = 0; u < memory_length; ++u) {
            pos_hi(u, 0) = static_cast<float>(u) + 0.5f;
            pos_lo(u, 0) = static_cast<float>(u) - 0.5f;
        }
        Var hi = g.constant(pos_hi);
        Var lo = g.constant(pos_lo);

        for (int k = 0; k < m; ++k) {
            Var kappa_k = g.slice_rows(params.kappa, k, 1);   // (1 x B)
            Var beta_k = g.slice_rows(params.beta, k, 1);     // (1 x B)
            Var alpha_k = g.slice_rows(params.alpha, k, 1);   // (1 x B)
            Var half_sharp = g.affine(beta_k, 0.5f, 0.5f * cfg.eps_beta);  // (beta + eps)/2

            Var arg_hi = g.cmul_rowvec(g.colvec_minus_rowvec(hi, kappa_k), half_sharp);
            Var arg_lo = g.cmul_rowvec(g.colvec_minus_rowvec(lo, kappa_k), half_sharp);
            // T(u+1/2) - T(u-1/2) = (approx_tanh(hi) - approx_tanh(lo)) / 2
            Var delta = g.affine(g.sub(g.approx_tanh(arg_hi), g.approx_tanh(arg_lo)), 0.5f, 0.0f);
            Var contrib = g.cmul_rowvec(delta, alpha_k);
            phi = (k == 0) ? contrib : g.add(phi, contrib);
        }

        // The exact CDF difference is nonnegative; division rounding can
        // produce a stray negative ulp, which the contract forbids.
        const Mat& v = g.value(phi);
        if ((v.array() < 0.0f).any()) {
            phi = g.add(phi, g.constant((-v).cwiseMax(0.0f)));
        }
    }
    return g.quantize_activation(phi);
}

MixtureValues attn_step_params_plain(const Mat& w_g, const Mat& b_g, const Mat& h,
                                     const Mat& prev_kappa, const AttentionConfig& cfg) {
    const int m = cfg.mixture_components;
    Mat raw = (w_g * h).colwise() + Vec(b_g.col(0));
    MixtureValues out;
    out.kappa = prev_kappa;
    out.beta = raw.middleRows(m, m).unaryExpr([](float x) { return stable_softplus(x); });
    Mat advance = raw.topRows(m).unaryExpr(
        [&cfg](float x) { return std::max(cfg.eps_kappa, stable_softplus(x) + cfg.eps_kappa); });
    out.kappa += advance;
    out.alpha = raw.middleRows(2 * m, m);
    for (Eigen::Index j = 0; j < out.alpha.cols(); ++j) {
        const float mx = out.alpha.col(j).maxCoeff();
        out.alpha.col(j) = (out.alpha.col(j).array() - mx).exp();
        out.alpha.col(j) /= out.alpha.col(j).sum();
    }
    return out;
}

Mat attn_weights_plain(const MixtureValues& params, int memory_length,
                       const AttentionConfig& cfg) {
    const Eigen::Index m = params.kappa.rows();
    const Eigen::Index q = params.kappa.cols();
    Mat phi = Mat::Zero(memory_length, q);
    for (Eigen::Index j = 0; j < q; ++j) {
        for (Eigen::Index k = 0; k < m; ++k) {
            const float kappa = params.kappa(k, j);
            const float half_sharp = 0.5f * (params.beta(k, j) + cfg.eps_beta);
            const float alpha = params.alpha(k, j);
            for (int u = 0; u < memory_length; ++u) {
                const float hi = approx_tanh((static_cast<float>(u) + 0.5f - kappa) * half_sharp);
                const float lo = approx_tanh((static_cast<float>(u) - 0.5f - kappa) * half_sharp);
                phi(u, j) += alpha * std::max(0.0f, 0.5f * (hi - lo));
            }
        }
    }
    return phi;
}

Vec dominant_kappa(const MixtureValues& params) {
    Vec out(params.kappa.cols());
    for (Eigen::Index j = 0; j < params.kappa.cols(); ++j) {
        Eigen::Index best;
        params.alpha.col(j).maxCoeff(&best);
        out(j) = params.kappa(best, j);
    }
    return out;
}

}  // namespace melfront
