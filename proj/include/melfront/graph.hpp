#pragma once

#include <functional>
#include <vector>

#include "melfront/numerics.hpp"

namespace melfront {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over 2-D float matrices.
//
// Every op records a closure that scatters the output gradient back into its
// parents. Under a 16-bit activation policy each op result is rounded through
// binary16 storage, except inside a ScopedFullPrecision region (attention
// internals) and for scalar reductions, which always accumulate at higher
// precision.
class Graph {
public:
    explicit Graph(PrecisionPolicy policy = {});
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Mat value);  // no gradient tracking
    Var leaf(Mat value);      // gradient-tracked input (parameters)

    Var matmul(Var a, Var b);
    Var matmul_tA(Var a, Var b);  // value = a^T * b
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);
    Var add_colvec(Var a, Var v);           // v: (rows x 1), broadcast over columns
    Var cmul_rowvec(Var a, Var r);          // r: (1 x cols), scales column j by r(j)
    Var colvec_minus_rowvec(Var v, Var r);  // out(i,j) = v(i,0) - r(0,j)
    Var affine(Var a, float scale, float shift);
    Var sigmoid(Var a);
    Var tanh_exact(Var a);
    Var softplus(Var a);     // stable_softplus elementwise
    Var approx_tanh(Var a);  // x / (1 + |x|) elementwise
    Var softmax_cols(Var a);
    Var sum_all(Var a);  // (1x1); accumulates in double, never quantized
    Var slice_rows(Var a, int r0, int n);
    Var slice_cols(Var a, int c0, int n);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_cols(Var a, std::vector<int> idx);  // duplicate indices allowed

    // Forward identity; backward multiplies the incoming gradient by
    // 1/sqrt(mixture_count).
    Var straight_through_scale(Var a, int mixture_count);

    // Explicit cast of a full-precision result back to the activation width.
    Var quantize_activation(Var a);

    // Weighted read over per-item memories. phi: (U_max x B), memories[b]:
    // (D x U_b) with U_b <= U_max. Result column b = memories[b] * phi(0:U_b, b).
    Var attend(Var phi, const std::vector<Var>& memories);

    void backward(Var loss);  // loss must be 1x1

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }
    const PrecisionPolicy& policy() const { return policy_; }

    // While alive, ops produce unquantized 32-bit results.
    class ScopedFullPrecision {
    public:
        explicit ScopedFullPrecision(Graph& g) : g_(g) { ++g_.full_precision_depth_; }
        ~ScopedFullPrecision() { --g_.full_precision_depth_; }
        ScopedFullPrecision(const ScopedFullPrecision&) = delete;
        ScopedFullPrecision& operator=(const ScopedFullPrecision&) = delete;

    private:
        Graph& g_;
    };

private:
    friend class ScopedFullPrecision;

    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Graph&)> backprop;  // empty for leaves/constants
        bool needs_grad = false;
    };

    Var push(Mat value, bool needs_grad, std::function<void(Graph&)> backprop, bool quantizable = true);
    bool tracked(Var v) const { return nodes_[v.id].needs_grad; }
    Mat& grad_ref(Var v) { return nodes_[v.id].grad; }

    std::vector<Node> nodes_;
    PrecisionPolicy policy_;
    int full_precision_depth_ = 0;
};

}  // namespace melfront
