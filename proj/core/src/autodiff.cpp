#include "cpae/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cpae::ad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using CArrMap = Eigen::Map<const Eigen::ArrayXd>;

thread_local bool g_grad_enabled = true;

ArrMap arr(Tensor& t) { return ArrMap(t.data(), static_cast<Eigen::Index>(t.size())); }
CArrMap arr(const Tensor& t) { return CArrMap(t.data(), static_cast<Eigen::Index>(t.size())); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

bool needs(const std::shared_ptr<Node>& n) { return n->requires_grad; }

// Unpacks an image geometry for im2col/col2im.
struct Geometry {
    int channels, in_h, in_w, kh, kw, sh, sw, ph, pw, out_h, out_w;
    int rows() const { return channels * kh * kw; }
    int cols() const { return out_h * out_w; }
};

// col[(c,i,j), (oh,ow)] = img[c, oh*sh - ph + i, ow*sw - pw + j]
void im2col(const double* img, const Geometry& g, double* col) {
    const int ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        const double* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                double* row = col + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * ncols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int y = oh * g.sh - g.ph + i;
                    double* dst = row + oh * g.out_w;
                    if (y < 0 || y >= g.in_h) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(y) * g.in_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int x = ow * g.sw - g.pw + j;
                        dst[ow] = (x >= 0 && x < g.in_w) ? src[x] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates col entries into img.
void col2im(const double* col, const Geometry& g, double* img) {
    const int ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        double* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                const double* row = col + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * ncols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int y = oh * g.sh - g.ph + i;
                    if (y < 0 || y >= g.in_h) continue;
                    double* dst = plane + static_cast<std::size_t>(y) * g.in_w;
                    const double* src = row + oh * g.out_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int x = ow * g.sw - g.pw + j;
                        if (x >= 0 && x < g.in_w) dst[x] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_var(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto& in : inputs)
        if (in.defined() && in.requires_grad()) any = true;
    if (!any) return out;
    out.node_->requires_grad = true;
    for (auto& in : inputs)
        if (in.defined()) out.node_->parents.push_back(in.node());
    out.node_->backward = std::move(backward_fn);
    return out;
}

Var constant(Tensor value) { return Var(std::move(value), false); }

void backward(const Var& root) {
    if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    arr(out) += arr(b.value());
    return make_var(std::move(out), {a, b}, [](Node& n) {
        for (auto& p : n.parents)
            if (needs(p)) arr(p->grad_buffer()) += arr(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    arr(out) -= arr(b.value());
    const bool a_grad = a.requires_grad(), b_grad = b.requires_grad();
    return make_var(std::move(out), {a, b}, [a_grad, b_grad](Node& n) {
        std::size_t k = 0;
        if (a_grad) arr(n.parents[k]->grad_buffer()) += arr(n.grad);
        ++k;
        if (b_grad) arr(n.parents[k]->grad_buffer()) -= arr(n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    arr(out) *= arr(b.value());
    return make_var(std::move(out), {a, b}, [](Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (needs(pa)) arr(pa->grad_buffer()) += arr(n.grad) * arr(pb->value);
        if (needs(pb)) arr(pb->grad_buffer()) += arr(n.grad) * arr(pa->value);
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    arr(out) *= c;
    return make_var(std::move(out), {a}, [c](Node& n) { arr(n.parents[0]->grad_buffer()) += c * arr(n.grad); });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = a.value();
    arr(out) += c;
    return make_var(std::move(out), {a}, [](Node& n) { arr(n.parents[0]->grad_buffer()) += arr(n.grad); });
}

Var square(const Var& a) {
    Tensor out = a.value();
    arr(out) = arr(out).square();
    return make_var(std::move(out), {a}, [](Node& n) {
        auto& p = n.parents[0];
        arr(p->grad_buffer()) += 2.0 * arr(n.grad) * arr(p->value);
    });
}

Var tanh(const Var& a) {
    Tensor out = a.value();
    arr(out) = arr(out).tanh();
    return make_var(std::move(out), {a}, [](Node& n) {
        arr(n.parents[0]->grad_buffer()) += arr(n.grad) * (1.0 - arr(n.value).square());
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    return make_var(std::move(out), {a}, [](Node& n) {
        arr(n.parents[0]->grad_buffer()) += arr(n.grad) * arr(n.value) * (1.0 - arr(n.value));
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    arr(out) = arr(out).max(0.0);
    return make_var(std::move(out), {a}, [](Node& n) {
        auto& p = n.parents[0];
        arr(p->grad_buffer()) += (arr(p->value) > 0.0).select(arr(n.grad), 0.0);
    });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a) {
    return make_var(Tensor::scalar(a.value().sum()), {a},
                    [](Node& n) { arr(n.parents[0]->grad_buffer()) += n.grad[0]; });
}

Var mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    return make_var(Tensor::scalar(a.value().sum() * inv), {a},
                    [inv](Node& n) { arr(n.parents[0]->grad_buffer()) += n.grad[0] * inv; });
}

Var sum_squares(const Var& a) {
    return make_var(Tensor::scalar(arr(a.value()).square().sum()), {a}, [](Node& n) {
        auto& p = n.parents[0];
        arr(p->grad_buffer()) += 2.0 * n.grad[0] * arr(p->value);
    });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
    Tensor out({m, nn});
    MapR(out.data(), m, nn).noalias() = CMapR(a.value().data(), m, k) * CMapR(b.value().data(), k, nn);
    return make_var(std::move(out), {a, b}, [m, k, nn](Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        CMapR g(n.grad.data(), m, nn);
        if (needs(pa)) MapR(pa->grad_buffer().data(), m, k).noalias() += g * CMapR(pb->value.data(), k, nn).transpose();
        if (needs(pb)) MapR(pb->grad_buffer().data(), k, nn).noalias() += CMapR(pa->value.data(), m, k).transpose() * g;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[1])
        throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[0];
    Tensor out({m, nn});
    MapR(out.data(), m, nn).noalias() = CMapR(a.value().data(), m, k) * CMapR(b.value().data(), nn, k).transpose();
    return make_var(std::move(out), {a, b}, [m, k, nn](Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        CMapR g(n.grad.data(), m, nn);
        if (needs(pa)) MapR(pa->grad_buffer().data(), m, k).noalias() += g * CMapR(pb->value.data(), nn, k);
        if (needs(pb)) MapR(pb->grad_buffer().data(), nn, k).noalias() += g.transpose() * CMapR(pa->value.data(), m, k);
    });
}

Var transpose(const Var& a) {
    if (a.value().rank() != 2) throw ShapeError("transpose: rank-2 input required, got " + shape_str(a.shape()));
    const int m = a.shape()[0], k = a.shape()[1];
    Tensor out({k, m});
    MapR(out.data(), k, m) = CMapR(a.value().data(), m, k).transpose();
    return make_var(std::move(out), {a}, [m, k](Node& n) {
        MapR(n.parents[0]->grad_buffer().data(), m, k) += CMapR(n.grad.data(), k, m).transpose();
    });
}

Var add_row_bias(const Var& x, const Var& bias) {
    if (x.value().rank() != 2 || bias.value().size() != static_cast<std::size_t>(x.shape()[1]))
        throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    const int rows = x.shape()[0], cols = x.shape()[1];
    Tensor out = x.value();
    MapR(out.data(), rows, cols).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), cols);
    return make_var(std::move(out), {x, bias}, [rows, cols](Node& n) {
        auto& px = n.parents[0];
        auto& pb = n.parents[1];
        if (needs(px)) arr(px->grad_buffer()) += arr(n.grad);
        if (needs(pb)) MapR(pb->grad_buffer().data(), 1, cols) += CMapR(n.grad.data(), rows, cols).colwise().sum();
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    Var y = matmul_nt(x, weight);
    return bias.defined() ? add_row_bias(y, bias) : y;
}

// ---- shape ops -------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_var(std::move(out), {a}, [](Node& n) { arr(n.parents[0]->grad_buffer()) += arr(n.grad); });
}

Var concat1(const Var& a, const Var& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || (sa.size() != 2 && sa.size() != 4) || sa[0] != sb[0] ||
        !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2))
        throw ShapeError("concat1: " + shape_str(sa) + " and " + shape_str(sb));
    const std::size_t inner = sa.size() == 4 ? static_cast<std::size_t>(sa[2]) * sa[3] : 1;
    const std::size_t blk_a = sa[1] * inner, blk_b = sb[1] * inner;
    Shape so = sa;
    so[1] = sa[1] + sb[1];
    Tensor out(so);
    for (int i = 0; i < sa[0]; ++i) {
        std::copy_n(a.value().data() + i * blk_a, blk_a, out.data() + i * (blk_a + blk_b));
        std::copy_n(b.value().data() + i * blk_b, blk_b, out.data() + i * (blk_a + blk_b) + blk_a);
    }
    const int batch = sa[0];
    return make_var(std::move(out), {a, b}, [batch, blk_a, blk_b](Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        for (int i = 0; i < batch; ++i) {
            const double* g = n.grad.data() + i * (blk_a + blk_b);
            if (needs(pa)) {
                double* d = pa->grad_buffer().data() + i * blk_a;
                for (std::size_t k = 0; k < blk_a; ++k) d[k] += g[k];
            }
            if (needs(pb)) {
                double* d = pb->grad_buffer().data() + i * blk_b;
                for (std::size_t k = 0; k < blk_b; ++k) d[k] += g[blk_a + k];
            }
        }
    });
}

Var scale_cols(const Var& x, const Var& v) {
    if (x.value().rank() != 2 || v.value().size() != static_cast<std::size_t>(x.shape()[1]))
        throw ShapeError("scale_cols: " + shape_str(x.shape()) + " * " + shape_str(v.shape()));
    const int rows = x.shape()[0], cols = x.shape()[1];
    Tensor out = x.value();
    MapR(out.data(), rows, cols).array().rowwise() *= Eigen::Map<const Eigen::RowVectorXd>(v.value().data(), cols).array();
    return make_var(std::move(out), {x, v}, [rows, cols](Node& n) {
        auto& px = n.parents[0];
        auto& pv = n.parents[1];
        CMapR g(n.grad.data(), rows, cols);
        if (needs(px)) {
            MapR gx(px->grad_buffer().data(), rows, cols);
            for (int c = 0; c < cols; ++c) gx.col(c) += g.col(c) * pv->value[c];
        }
        if (needs(pv)) {
            CMapR xv(px->value.data(), rows, cols);
            Tensor& gv = pv->grad_buffer();
            for (int c = 0; c < cols; ++c) gv[c] += g.col(c).dot(xv.col(c));
        }
    });
}

Var slice_cols(const Var& a, int start, int len) {
    if (a.value().rank() != 2 || start < 0 || len < 0 || start + len > a.shape()[1])
        throw ShapeError("slice_cols out of range for " + shape_str(a.shape()));
    const int rows = a.shape()[0], cols = a.shape()[1];
    Tensor out({rows, len});
    MapR(out.data(), rows, len) = CMapR(a.value().data(), rows, cols).middleCols(start, len);
    return make_var(std::move(out), {a}, [rows, cols, start, len](Node& n) {
        MapR(n.parents[0]->grad_buffer().data(), rows, cols).middleCols(start, len) += CMapR(n.grad.data(), rows, len);
    });
}

Var slice_rows(const Var& a, int start, int len) {
    const Shape& s = a.shape();
    if (s.empty() || start < 0 || len < 0 || start + len > s[0])
        throw ShapeError("slice_rows out of range for " + shape_str(s));
    const std::size_t inner = a.value().size() / static_cast<std::size_t>(s[0]);
    Shape so = s;
    so[0] = len;
    Tensor out(so);
    std::copy_n(a.value().data() + start * inner, len * inner, out.data());
    return make_var(std::move(out), {a}, [start, inner](Node& n) {
        double* d = n.parents[0]->grad_buffer().data() + start * inner;
        for (std::size_t k = 0; k < n.grad.size(); ++k) d[k] += n.grad[k];
    });
}

// ---- convolution -----------------------------------------------------------

int conv_out_size(int in, int kernel, int stride, int pad) {
    const int span = in + 2 * pad - kernel;
    if (span < 0) throw ShapeError("convolution kernel larger than padded input");
    return span / stride + 1;
}

int conv_transpose_out_size(int in, int kernel, int stride, int pad) {
    return (in - 1) * stride - 2 * pad + kernel;
}

Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dParams p) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw ShapeError("conv2d: input " + shape_str(xs) + ", weight " + shape_str(ws));
    if (p.stride[0] < 1 || p.stride[1] < 1 || p.padding[0] < 0 || p.padding[1] < 0)
        throw ShapeError("conv2d: invalid stride/padding");
    const int batch = xs[0], cin = xs[1], cout = ws[0];
    Geometry g{cin, xs[2], xs[3], ws[2], ws[3], p.stride[0], p.stride[1], p.padding[0], p.padding[1], 0, 0};
    g.out_h = conv_out_size(g.in_h, g.kh, g.sh, g.ph);
    g.out_w = conv_out_size(g.in_w, g.kw, g.sw, g.pw);
    if (bias.defined() && bias.value().size() != static_cast<std::size_t>(cout))
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()));

    const int K = g.rows(), P = g.cols();
    const std::size_t in_blk = static_cast<std::size_t>(cin) * g.in_h * g.in_w;
    const std::size_t out_blk = static_cast<std::size_t>(cout) * P;
    Tensor out({batch, cout, g.out_h, g.out_w});
    std::vector<double> cols(static_cast<std::size_t>(batch) * K * P);
    CMapR wm(w.value().data(), cout, K);
    for (int b = 0; b < batch; ++b) {
        double* col = cols.data() + static_cast<std::size_t>(b) * K * P;
        im2col(x.value().data() + b * in_blk, g, col);
        MapR o(out.data() + b * out_blk, cout, P);
        o.noalias() = wm * CMapR(col, K, P);
        if (bias.defined()) o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), cout);
    }
    const bool has_bias = bias.defined();
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_var(std::move(out), std::move(inputs),
                    [g, batch, cout, K, P, in_blk, out_blk, has_bias, cols = std::move(cols)](Node& n) {
                        auto& px = n.parents[0];
                        auto& pw = n.parents[1];
                        CMapR wm(pw->value.data(), cout, K);
                        std::vector<double> dcol(static_cast<std::size_t>(K) * P);
                        for (int b = 0; b < batch; ++b) {
                            CMapR go(n.grad.data() + b * out_blk, cout, P);
                            const double* col = cols.data() + static_cast<std::size_t>(b) * K * P;
                            if (needs(pw)) MapR(pw->grad_buffer().data(), cout, K).noalias() += go * CMapR(col, K, P).transpose();
                            if (has_bias && needs(n.parents[2]))
                                Eigen::Map<Eigen::VectorXd>(n.parents[2]->grad_buffer().data(), cout) += go.rowwise().sum();
                            if (needs(px)) {
                                MapR(dcol.data(), K, P).noalias() = wm.transpose() * go;
                                col2im(dcol.data(), g, px->grad_buffer().data() + b * in_blk);
                            }
                        }
                    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& bias, Conv2dParams p) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
        throw ShapeError("conv_transpose2d: input " + shape_str(xs) + ", weight " + shape_str(ws));
    const int batch = xs[0], cin = xs[1], cout = ws[1];
    const int out_h = conv_transpose_out_size(xs[2], ws[2], p.stride[0], p.padding[0]);
    const int out_w = conv_transpose_out_size(xs[3], ws[3], p.stride[1], p.padding[1]);
    if (out_h < 1 || out_w < 1) throw ShapeError("conv_transpose2d: empty output");
    // Geometry of the adjoint convolution: output image is the "input" side.
    Geometry g{cout, out_h, out_w, ws[2], ws[3], p.stride[0], p.stride[1], p.padding[0], p.padding[1], xs[2], xs[3]};
    if (conv_out_size(out_h, g.kh, g.sh, g.ph) != xs[2] || conv_out_size(out_w, g.kw, g.sw, g.pw) != xs[3])
        throw ShapeError("conv_transpose2d: inconsistent geometry");
    if (bias.defined() && bias.value().size() != static_cast<std::size_t>(cout))
        throw ShapeError("conv_transpose2d: bias " + shape_str(bias.shape()));

    const int K = g.rows(), P = g.cols();
    const std::size_t in_blk = static_cast<std::size_t>(cin) * P;
    const std::size_t out_blk = static_cast<std::size_t>(cout) * out_h * out_w;
    Tensor out({batch, cout, out_h, out_w});
    CMapR wm(w.value().data(), cin, K);
    std::vector<double> col(static_cast<std::size_t>(K) * P);
    for (int b = 0; b < batch; ++b) {
        MapR(col.data(), K, P).noalias() = wm.transpose() * CMapR(x.value().data() + b * in_blk, cin, P);
        double* o = out.data() + b * out_blk;
        col2im(col.data(), g, o);
        if (bias.defined())
            for (int c = 0; c < cout; ++c) {
                const double bv = bias.value()[c];
                double* plane = o + static_cast<std::size_t>(c) * out_h * out_w;
                for (int k = 0; k < out_h * out_w; ++k) plane[k] += bv;
            }
    }
    const bool has_bias = bias.defined();
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_var(std::move(out), std::move(inputs), [g, batch, cin, cout, K, P, in_blk, out_blk, has_bias](Node& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        CMapR wm(pw->value.data(), cin, K);
        std::vector<double> dcol(static_cast<std::size_t>(K) * P);
        const int plane = g.in_h * g.in_w;
        for (int b = 0; b < batch; ++b) {
            const double* go = n.grad.data() + b * out_blk;
            im2col(go, g, dcol.data());
            CMapR dc(dcol.data(), K, P);
            if (needs(px)) MapR(px->grad_buffer().data() + b * in_blk, cin, P).noalias() += wm * dc;
            if (needs(pw))
                MapR(pw->grad_buffer().data(), cin, K).noalias() += CMapR(px->value.data() + b * in_blk, cin, P) * dc.transpose();
            if (has_bias && needs(n.parents[2])) {
                double* db = n.parents[2]->grad_buffer().data();
                for (int c = 0; c < cout; ++c) {
                    const double* pl = go + static_cast<std::size_t>(c) * plane;
                    double s = 0.0;
                    for (int k = 0; k < plane; ++k) s += pl[k];
                    db[c] += s;
                }
            }
        }
    });
}

// ---- batch norm ------------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
    const Shape& s = x.shape();
    if ((s.size() != 4 && s.size() != 2) || gamma.value().size() != static_cast<std::size_t>(s[1]) ||
        beta.value().size() != static_cast<std::size_t>(s[1]))
        throw ShapeError("batch_norm: input " + shape_str(s));
    const int batch = s[0], ch = s[1];
    const int inner = s.size() == 4 ? s[2] * s[3] : 1;
    const double count = static_cast<double>(batch) * inner;
    if (state.running_mean.empty()) {
        state.running_mean = Tensor({ch}, 0.0);
        state.running_var = Tensor({ch}, 1.0);
    }
    auto at = [ch, inner](int b, int c) { return (static_cast<std::size_t>(b) * ch + c) * inner; };

    Tensor mu({ch}), inv_std({ch});
    if (training) {
        if (count < 2) throw ShapeError("batch_norm: training mode needs more than one value per channel");
        for (int c = 0; c < ch; ++c) {
            double m = 0.0;
            for (int b = 0; b < batch; ++b)
                for (int k = 0; k < inner; ++k) m += x.value()[at(b, c) + k];
            m /= count;
            double v = 0.0;
            for (int b = 0; b < batch; ++b)
                for (int k = 0; k < inner; ++k) {
                    const double d = x.value()[at(b, c) + k] - m;
                    v += d * d;
                }
            v /= count;
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(v + state.eps);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * v * count / (count - 1.0);
        }
    } else {
        for (int c = 0; c < ch; ++c) {
            mu[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }
    Tensor xhat(s), out(s);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c)
            for (int k = 0; k < inner; ++k) {
                const std::size_t i = at(b, c) + k;
                xhat[i] = (x.value()[i] - mu[c]) * inv_std[c];
                out[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
            }
    return make_var(std::move(out), {x, gamma, beta},
                    [batch, ch, inner, count, training, at, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                        auto& px = n.parents[0];
                        auto& pg = n.parents[1];
                        auto& pb = n.parents[2];
                        for (int c = 0; c < ch; ++c) {
                            double sg = 0.0, sgx = 0.0;
                            for (int b = 0; b < batch; ++b)
                                for (int k = 0; k < inner; ++k) {
                                    const std::size_t i = at(b, c) + k;
                                    sg += n.grad[i];
                                    sgx += n.grad[i] * xhat[i];
                                }
                            if (needs(pg)) pg->grad_buffer()[c] += sgx;
                            if (needs(pb)) pb->grad_buffer()[c] += sg;
                            if (!needs(px)) continue;
                            const double gm = pg->value[c] * inv_std[c];
                            Tensor& dx = px->grad_buffer();
                            for (int b = 0; b < batch; ++b)
                                for (int k = 0; k < inner; ++k) {
                                    const std::size_t i = at(b, c) + k;
                                    if (training)
                                        dx[i] += gm * (n.grad[i] - sg / count - xhat[i] * sgx / count);
                                    else
                                        dx[i] += gm * n.grad[i];
                                }
                        }
                    });
}

}  // namespace cpae::ad
