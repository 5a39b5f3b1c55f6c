#pragma once

// Tape-free reverse-mode automatic differentiation over `Tensor`.
//
// Every op returns a `Var` whose node keeps its inputs alive; `backward`
// walks the resulting DAG in reverse topological order. Nodes are only
// recorded when at least one input requires a gradient and no
// `NoGradGuard` is active, so frozen-weight inference builds no graph.

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "cpae/tensor.hpp"

namespace cpae::ad {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    // Direct write access; only valid for leaves (optimizer updates, loading).
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad = Tensor(); }
    double item() const { return node_->value.item(); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    friend Var make_var(Tensor, std::vector<Var>, std::function<void(Node&)>);
    std::shared_ptr<Node> node_;
};

// Accumulates d(root)/d(leaf) into every reachable node with requires_grad.
// `root` must hold exactly one element.
void backward(const Var& root);

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// Builds a node from a computed value. `backward_fn` receives the result node
// and must add into the parents' grad buffers.
Var make_var(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

Var constant(Tensor value);

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);

// Rank-2 linear algebra.
Var matmul(const Var& a, const Var& b);         // (m,k)·(k,n)
Var matmul_nt(const Var& a, const Var& b);      // (m,k)·(n,k)^T
Var transpose(const Var& a);
Var add_row_bias(const Var& x, const Var& bias);  // (B,F) + (F)
Var scale_cols(const Var& x, const Var& v);       // (B,F) * (F), column-wise
// x W^T + b with x (B,in), W (out,in), b (out).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var reshape(const Var& a, Shape shape);
// Concatenate along axis 1; rank 2 or rank 4 inputs with matching other dims.
Var concat1(const Var& a, const Var& b);
// Columns [start, start+len) of a rank-2 value.
Var slice_cols(const Var& a, int start, int len);
// Rows [start, start+len) along axis 0, any rank.
Var slice_rows(const Var& a, int start, int len);

struct Conv2dParams {
    std::array<int, 2> stride{1, 1};
    std::array<int, 2> padding{0, 0};
};

// x (B,Cin,H,W), w (Cout,Cin,kh,kw), bias (Cout) or undefined.
Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dParams p);
// x (B,Cin,H,W), w (Cin,Cout,kh,kw); output H' = (H-1)s - 2p + k.
Var conv_transpose2d(const Var& x, const Var& w, const Var& bias, Conv2dParams p);

int conv_out_size(int in, int kernel, int stride, int pad);
int conv_transpose_out_size(int in, int kernel, int stride, int pad);

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Per-channel normalization of (B,C,H,W) or (B,C). In training mode uses the
// batch statistics and updates `state`; otherwise uses the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

}  // namespace cpae::ad
