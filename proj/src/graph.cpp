#include "melfront/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace melfront {

Graph::Graph(PrecisionPolicy policy) : policy_(policy) {}

Var Graph::push(Mat value, bool needs_grad, std::function<void(Graph&)> backprop, bool quantizable) {
    if (quantizable && policy_.activations == Precision::f16 && full_precision_depth_ == 0) {
        quantize_half_inplace(value);
    }
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Mat value) {
    return push(std::move(value), false, nullptr, false);
}

Var Graph::leaf(Mat value) {
    return push(std::move(value), true, nullptr, false);
}

Var Graph::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    Mat v = value(a) * value(b);
    const int ai = a.id, bi = b.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(v), tracked(a) || tracked(b), [ai, bi, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad.noalias() += gout * g.nodes_[bi].value.transpose();
        if (g.nodes_[bi].needs_grad) g.nodes_[bi].grad.noalias() += g.nodes_[ai].value.transpose() * gout;
    });
}

Var Graph::matmul_tA(Var a, Var b) {
    if (value(a).rows() != value(b).rows()) {
        throw std::invalid_argument("matmul_tA: inner dimension mismatch");
    }
    Mat v = value(a).transpose() * value(b);
    const int ai = a.id, bi = b.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(v), tracked(a) || tracked(b), [ai, bi, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad.noalias() += g.nodes_[bi].value * gout.transpose();
        if (g.nodes_[bi].needs_grad) g.nodes_[bi].grad.noalias() += g.nodes_[ai].value * gout;
    });
}

Var Graph::add(Var a, Var b) {
    Mat v = value(a) + value(b);
    const int ai = a.id, bi = b.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(v), tracked(a) || tracked(b), [ai, bi, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += gout;
        if (g.nodes_[bi].needs_grad) g.nodes_[bi].grad += gout;
    });
}

Var Graph::sub(Var a, Var b) {
    Mat v = value(a) - value(b);
    const int ai = a.id, bi = b.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(v), tracked(a) || tracked(b), [ai, bi, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += gout;
        if (g.nodes_[bi].needs_grad) g.nodes_[bi].grad -= gout;
    });
}

Var Graph::cmul(Var a, Var b) {
    Mat v = value(a).cwiseProduct(value(b));
    const int ai = a.id, bi = b.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(v), tracked(a) || tracked(b), [ai, bi, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += gout.cwiseProduct(g.nodes_[bi].value);
        if (g.nodes_[bi].needs_grad) g.nodes_[bi].grad += gout.cwiseProduct(g.nodes_[ai].value);
    });
}

Var Graph::add_colvec(Var a, Var v) {
    if (value(v).cols() != 1 || value(v).rows() != value(a).rows()) {
        throw std::invalid_argument("add_colvec: shape mismatch");
    }
    Mat out = value(a).colwise() + Eigen::VectorXf(value(v).col(0));
    const int ai = a.id, vi = v.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a) || tracked(v), [ai, vi, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += gout;
        if (g.nodes_[vi].needs_grad) g.nodes_[vi].grad += gout.rowwise().sum();
    });
}

Var Graph::cmul_rowvec(Var a, Var r) {
    if (value(r).rows() != 1 || value(r).cols() != value(a).cols()) {
        throw std::invalid_argument("cmul_rowvec: shape mismatch");
    }
    Mat out = value(a).array().rowwise() * value(r).row(0).array();
    const int ai = a.id, ri = r.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a) || tracked(r), [ai, ri, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[ai].needs_grad) {
            g.nodes_[ai].grad.array() += gout.array().rowwise() * g.nodes_[ri].value.row(0).array();
        }
        if (g.nodes_[ri].needs_grad) {
            g.nodes_[ri].grad += gout.cwiseProduct(g.nodes_[ai].value).colwise().sum();
        }
    });
}

Var Graph::colvec_minus_rowvec(Var v, Var r) {
    if (value(v).cols() != 1 || value(r).rows() != 1) {
        throw std::invalid_argument("colvec_minus_rowvec: expects (n x 1) and (1 x m)");
    }
    const Eigen::Index n = value(v).rows();
    const Eigen::Index m = value(r).cols();
    Mat out = value(v).col(0).replicate(1, m);
    out.array().rowwise() -= value(r).row(0).array();
    const int vi = v.id, ri = r.id;
    const int oi = static_cast<int>(nodes_.size());
    (void)n;
    return push(std::move(out), tracked(v) || tracked(r), [vi, ri, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        if (g.nodes_[vi].needs_grad) g.nodes_[vi].grad += gout.rowwise().sum();
        if (g.nodes_[ri].needs_grad) g.nodes_[ri].grad -= gout.colwise().sum();
    });
}

Var Graph::affine(Var a, float scale, float shift) {
    Mat out = (value(a).array() * scale + shift).matrix();
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi, scale](Graph& g) {
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += g.nodes_[oi].grad * scale;
    });
}

Var Graph::sigmoid(Var a) {
    Mat out = value(a).unaryExpr([](float x) { return 1.0f / (1.0f + std::exp(-x)); });
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi](Graph& g) {
        if (!g.nodes_[ai].needs_grad) return;
        const Mat& y = g.nodes_[oi].value;
        g.nodes_[ai].grad.array() +=
            g.nodes_[oi].grad.array() * y.array() * (1.0f - y.array());
    });
}

Var Graph::tanh_exact(Var a) {
    Mat out = value(a).array().tanh();
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi](Graph& g) {
        if (!g.nodes_[ai].needs_grad) return;
        const Mat& y = g.nodes_[oi].value;
        g.nodes_[ai].grad.array() += g.nodes_[oi].grad.array() * (1.0f - y.array().square());
    });
}

Var Graph::softplus(Var a) {
    Mat out = value(a).unaryExpr([](float x) { return stable_softplus(x); });
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi](Graph& g) {
        if (!g.nodes_[ai].needs_grad) return;
        // d/dx log1pexp = sigmoid(x)
        const Mat& x = g.nodes_[ai].value;
        g.nodes_[ai].grad.array() +=
            g.nodes_[oi].grad.array() * x.unaryExpr([](float v) { return 1.0f / (1.0f + std::exp(-v)); }).array();
    });
}

Var Graph::approx_tanh(Var a) {
    Mat out = value(a).unaryExpr([](float x) { return melfront::approx_tanh(x); });
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi](Graph& g) {
        if (!g.nodes_[ai].needs_grad) return;
        const Mat& x = g.nodes_[ai].value;
        g.nodes_[ai].grad.array() += g.nodes_[oi].grad.array() *
            x.unaryExpr([](float v) {
                const float d = 1.0f + std::fabs(v);
                return 1.0f / (d * d);
            }).array();
    });
}

Var Graph::softmax_cols(Var a) {
    Mat out = value(a);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const float m = out.col(j).maxCoeff();
        out.col(j) = (out.col(j).array() - m).exp();
        out.col(j) /= out.col(j).sum();
    }
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi](Graph& g) {
        if (!g.nodes_[ai].needs_grad) return;
        const Mat& y = g.nodes_[oi].value;
        const Mat& gout = g.nodes_[oi].grad;
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            const float dot = gout.col(j).dot(y.col(j));
            g.nodes_[ai].grad.col(j).array() +=
                y.col(j).array() * (gout.col(j).array() - dot);
        }
    });
}

Var Graph::sum_all(Var a) {
    double acc = 0.0;
    const Mat& m = value(a);
    const float* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) acc += static_cast<double>(p[i]);
    Mat out(1, 1);
    out(0, 0) = static_cast<float>(acc);
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a),
                [ai, oi](Graph& g) {
                    if (!g.nodes_[ai].needs_grad) return;
                    g.nodes_[ai].grad.array() += g.nodes_[oi].grad(0, 0);
                },
                /*quantizable=*/false);
}

Var Graph::slice_rows(Var a, int r0, int n) {
    Mat out = value(a).middleRows(r0, n);
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi, r0, n](Graph& g) {
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad.middleRows(r0, n) += g.nodes_[oi].grad;
    }, /*quantizable=*/false);
}

Var Graph::slice_cols(Var a, int c0, int n) {
    Mat out = value(a).middleCols(c0, n);
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi, c0, n](Graph& g) {
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad.middleCols(c0, n) += g.nodes_[oi].grad;
    }, /*quantizable=*/false);
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(parts[0]).cols();
    bool track = false;
    for (Var p : parts) {
        rows += value(p).rows();
        track = track || tracked(p);
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    std::vector<int> ids;
    std::vector<int> offsets;
    for (Var p : parts) {
        out.middleRows(r, value(p).rows()) = value(p);
        ids.push_back(p.id);
        offsets.push_back(static_cast<int>(r));
        r += value(p).rows();
    }
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), track, [ids, offsets, oi](Graph& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Node& p = g.nodes_[ids[k]];
            if (p.needs_grad) {
                p.grad += g.nodes_[oi].grad.middleRows(offsets[k], p.value.rows());
            }
        }
    }, /*quantizable=*/false);
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Eigen::Index cols = 0;
    const Eigen::Index rows = value(parts[0]).rows();
    bool track = false;
    for (Var p : parts) {
        cols += value(p).cols();
        track = track || tracked(p);
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    std::vector<int> ids;
    std::vector<int> offsets;
    for (Var p : parts) {
        out.middleCols(c, value(p).cols()) = value(p);
        ids.push_back(p.id);
        offsets.push_back(static_cast<int>(c));
        c += value(p).cols();
    }
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), track, [ids, offsets, oi](Graph& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Node& p = g.nodes_[ids[k]];
            if (p.needs_grad) {
                p.grad += g.nodes_[oi].grad.middleCols(offsets[k], p.value.cols());
            }
        }
    }, /*quantizable=*/false);
}

Var Graph::gather_cols(Var a, std::vector<int> idx) {
    const Mat& src = value(a);
    Mat out(src.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        out.col(static_cast<Eigen::Index>(j)) = src.col(idx[j]);
    }
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi, idx = std::move(idx)](Graph& g) {
        if (!g.nodes_[ai].needs_grad) return;
        const Mat& gout = g.nodes_[oi].grad;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            g.nodes_[ai].grad.col(idx[j]) += gout.col(static_cast<Eigen::Index>(j));
        }
    }, /*quantizable=*/false);
}

Var Graph::straight_through_scale(Var a, int mixture_count) {
    if (mixture_count < 1) throw std::invalid_argument("straight_through_scale: M must be >= 1");
    Mat out = value(a);
    const float scale = 1.0f / std::sqrt(static_cast<float>(mixture_count));
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi, scale](Graph& g) {
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += g.nodes_[oi].grad * scale;
    }, /*quantizable=*/false);
}

Var Graph::quantize_activation(Var a) {
    Mat out = value(a);
    if (policy_.activations == Precision::f16) {
        quantize_half_inplace(out);
    }
    const int ai = a.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), tracked(a), [ai, oi](Graph& g) {
        if (g.nodes_[ai].needs_grad) g.nodes_[ai].grad += g.nodes_[oi].grad;
    }, /*quantizable=*/false);
}

Var Graph::attend(Var phi, const std::vector<Var>& memories) {
    const Mat& w = value(phi);
    if (w.cols() != static_cast<Eigen::Index>(memories.size())) {
        throw std::invalid_argument("attend: one memory per phi column required");
    }
    if (memories.empty()) throw std::invalid_argument("attend: no memories");
    const Eigen::Index d = value(memories[0]).rows();
    Mat out(d, w.cols());
    bool track = tracked(phi);
    std::vector<int> mem_ids;
    for (Eigen::Index b = 0; b < w.cols(); ++b) {
        const Mat& mem = value(memories[static_cast<std::size_t>(b)]);
        if (mem.rows() != d || mem.cols() > w.rows()) {
            throw std::invalid_argument("attend: memory shape mismatch");
        }
        out.col(b).noalias() = mem * w.block(0, b, mem.cols(), 1);
        track = track || tracked(memories[static_cast<std::size_t>(b)]);
        mem_ids.push_back(memories[static_cast<std::size_t>(b)].id);
    }
    const int pi = phi.id;
    const int oi = static_cast<int>(nodes_.size());
    return push(std::move(out), track, [pi, mem_ids, oi](Graph& g) {
        const Mat& gout = g.nodes_[oi].grad;
        for (std::size_t b = 0; b < mem_ids.size(); ++b) {
            const Mat& mem = g.nodes_[mem_ids[b]].value;
            const Eigen::Index u = mem.cols();
            const Eigen::Index bj = static_cast<Eigen::Index>(b);
            if (g.nodes_[pi].needs_grad) {
                g.nodes_[pi].grad.block(0, bj, u, 1).noalias() += mem.transpose() * gout.col(bj);
            }
            if (g.nodes_[mem_ids[b]].needs_grad) {
                g.nodes_[mem_ids[b]].grad.noalias() +=
                    gout.col(bj) * g.nodes_[pi].value.block(0, bj, u, 1).transpose();
            }
        }
    });
}

void Graph::backward(Var loss) {
    if (value(loss).rows() != 1 || value(loss).cols() != 1) {
        throw std::invalid_argument("backward: loss must be 1x1");
    }
    for (Node& n : nodes_) {
        if (n.needs_grad) {
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        }
    }
    if (!nodes_[loss.id].needs_grad) {
        return;  // loss does not depend on any tracked leaf
    }
    nodes_[loss.id].grad(0, 0) = 1.0f;
    for (int i = loss.id; i >= 0; --i) {
        if (nodes_[i].backprop && nodes_[i].needs_grad) {
            nodes_[i].backprop(*this);
        }
    }
}

}  // namespace melfront
