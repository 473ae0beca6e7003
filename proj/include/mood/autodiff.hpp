#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "mood/tensor.hpp"

namespace mood {

// Define-by-run reverse-mode tape. Every forward pass records nodes in
// creation order, which is a valid topological order, so backward() is a
// single reverse sweep. Values and gradients live on the tape; parameters
// are bound as leaves by the caller each pass.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily, same shape as value
        std::function<void()> backfn;
        bool needs_grad = false;
    };

    int leaf(Tensor v, bool needs_grad = false) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, needs_grad});
        return int(nodes_.size()) - 1;
    }

    const Tensor& val(int id) const { return nodes_[size_t(id)].value; }
    Tensor& val(int id) { return nodes_[size_t(id)].value; }

    bool needs_grad(int id) const { return nodes_[size_t(id)].needs_grad; }

    // Gradient accumulator for a node; allocates on first touch.
    Tensor& grad(int id) {
        Node& n = nodes_[size_t(id)];
        if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
        return n.grad;
    }

    bool has_grad(int id) const { return !nodes_[size_t(id)].grad.data.empty(); }

    int emit(Tensor value, std::initializer_list<int> parents, std::function<void()> backfn) {
        bool ng = false;
        for (int p : parents) ng = ng || nodes_[size_t(p)].needs_grad;
        return emit_explicit(std::move(value), ng, std::move(backfn));
    }

    int emit_explicit(Tensor value, bool ng, std::function<void()> backfn) {
        nodes_.push_back(Node{std::move(value), {}, ng ? std::move(backfn) : nullptr, ng});
        return int(nodes_.size()) - 1;
    }

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. The root must
    // be scalar-valued.
    void backward(int root) {
        assert(nodes_[size_t(root)].value.numel() == 1);
        grad(root).data[0] = 1.0;
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.backfn && !n.grad.data.empty()) n.backfn();
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

namespace detail {

// SAME-padding arithmetic (TensorFlow convention): output ceil(in/stride),
// front pad = total/2 rounded down.
inline int same_out(int in, int stride) { return (in + stride - 1) / stride; }

inline int same_pad_front(int in, int kernel, int stride) {
    int out = same_out(in, stride);
    int total = std::max(0, (out - 1) * stride + kernel - in);
    return total / 2;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline int relu(Tape& t, int x) {
    Tensor y = t.val(x);
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return t.emit(std::move(y), {x}, [&t, x, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& xv = t.val(x);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

inline int sigmoid(Tape& t, int x) {
    Tensor y = t.val(x);
    for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
    return t.emit(std::move(y), {x}, [&t, x, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& yv = t.val(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
}

inline int tanh_op(Tape& t, int x) {
    Tensor y = t.val(x);
    for (double& v : y.data) v = std::tanh(v);
    return t.emit(std::move(y), {x}, [&t, x, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& yv = t.val(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
    });
}

inline int add(Tape& t, int a, int b) {
    assert(t.val(a).same_shape(t.val(b)));
    Tensor y = t.val(a);
    const Tensor& bv = t.val(b);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
    return t.emit(std::move(y), {a, b}, [&t, a, b, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    });
}

inline int mul(Tape& t, int a, int b) {
    assert(t.val(a).same_shape(t.val(b)));
    Tensor y = t.val(a);
    const Tensor& bv = t.val(b);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= bv[i];
    return t.emit(std::move(y), {a, b}, [&t, a, b, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& av = t.val(a);
        const Tensor& bv2 = t.val(b);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

// y = alpha*a + beta*b, elementwise, same shapes. Used for scalar loss mixing.
inline int affine_combine(Tape& t, int a, double alpha, int b, double beta) {
    assert(t.val(a).same_shape(t.val(b)));
    Tensor y = t.val(a);
    const Tensor& bv = t.val(b);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = alpha * y[i] + beta * bv[i];
    return t.emit(std::move(y), {a, b}, [&t, a, b, alpha, beta, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += alpha * g[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += beta * g[i];
        }
    });
}

inline int scale(Tape& t, int x, double c) {
    Tensor y = t.val(x);
    for (double& v : y.data) v *= c;
    return t.emit(std::move(y), {x}, [&t, x, c, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += c * g[i];
    });
}

// Elementwise product where b's shape may have 1s in place of a's dims
// (numpy-style broadcast, b never larger than a). Handles attention gating:
// clip (N,T,H,W,C) * map (N,T,H,W,1) or (N,T,1,1,1).
inline int mul_bcast(Tape& t, int a, int b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    assert(av.rank() == bv.rank());
    const int r = av.rank();
    for (int i = 0; i < r; ++i) assert(bv.shape[i] == av.shape[i] || bv.shape[i] == 1);

    // Strides for mapping an a-index to the broadcast b-index.
    std::vector<int64_t> astr(static_cast<size_t>(r));
    std::vector<int64_t> bstr(static_cast<size_t>(r));
    int64_t sa = 1, sb = 1;
    for (int i = r - 1; i >= 0; --i) {
        astr[size_t(i)] = sa;
        bstr[size_t(i)] = bv.shape[i] == 1 ? 0 : sb;
        sa *= av.shape[i];
        sb *= bv.shape[i];
    }
    auto b_index = [r, ashape = av.shape, astr, bstr](int64_t ai) {
        int64_t bi = 0;
        for (int d = 0; d < r; ++d) {
            int64_t coord = (ai / astr[size_t(d)]) % ashape[size_t(d)];
            bi += coord * bstr[size_t(d)];
        }
        return bi;
    };

    Tensor y = av;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= bv[b_index(i)];
    return t.emit(std::move(y), {a, b}, [&t, a, b, b_index, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& av2 = t.val(a);
        const Tensor& bv2 = t.val(b);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[b_index(i)];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[b_index(i)] += g[i] * av2[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline int reshape(Tape& t, int x, std::vector<int> new_shape) {
    assert(Tensor::numel_of(new_shape) == t.val(x).numel());
    Tensor y = t.val(x);
    y.shape = std::move(new_shape);
    return t.emit(std::move(y), {x}, [&t, x, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

// Concatenate along the last axis; all other dims equal.
inline int concat_last(Tape& t, int a, int b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    assert(av.rank() == bv.rank());
    const int r = av.rank();
    for (int i = 0; i < r - 1; ++i) assert(av.shape[i] == bv.shape[i]);
    const int ca = av.shape[r - 1], cb = bv.shape[r - 1];
    std::vector<int> os = av.shape;
    os[size_t(r) - 1] = ca + cb;
    Tensor y(os);
    const int64_t rows = av.numel() / ca;
    for (int64_t i = 0; i < rows; ++i) {
        for (int j = 0; j < ca; ++j) y[i * (ca + cb) + j] = av[i * ca + j];
        for (int j = 0; j < cb; ++j) y[i * (ca + cb) + ca + j] = bv[i * cb + j];
    }
    return t.emit(std::move(y), {a, b}, [&t, a, b, ca, cb, rows, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad(a);
            for (int64_t i = 0; i < rows; ++i)
                for (int j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (int64_t i = 0; i < rows; ++i)
                for (int j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
    });
}

// (N,C) -> (N, c1-c0)
inline int slice_cols(Tape& t, int x, int c0, int c1) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 2 && c0 >= 0 && c1 <= xv.shape[1] && c0 < c1);
    const int n = xv.shape[0], c = xv.shape[1], w = c1 - c0;
    Tensor y({n, w});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) y.at(i, j) = xv.at(i, c0 + j);
    return t.emit(std::move(y), {x}, [&t, x, n, c, c0, w, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) gx[int64_t(i) * c + c0 + j] += g[int64_t(i) * w + j];
    });
}

// (N,T,C) -> (N,C) at timestep k.
inline int slice_time(Tape& t, int x, int k) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 3 && k >= 0 && k < xv.shape[1]);
    const int n = xv.shape[0], T = xv.shape[1], c = xv.shape[2];
    Tensor y({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) y.at(i, j) = xv.at(i, k, j);
    return t.emit(std::move(y), {x}, [&t, x, n, T, c, k, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                gx[(int64_t(i) * T + k) * c + j] += g[int64_t(i) * c + j];
    });
}

// T nodes of shape (N,U) -> (N,T,U)
inline int stack_time(Tape& t, const std::vector<int>& steps) {
    assert(!steps.empty());
    const Tensor& first = t.val(steps[0]);
    assert(first.rank() == 2);
    const int n = first.shape[0], u = first.shape[1], T = int(steps.size());
    Tensor y({n, T, u});
    bool ng = false;
    for (int k = 0; k < T; ++k) {
        const Tensor& sv = t.val(steps[size_t(k)]);
        assert(sv.shape[0] == n && sv.shape[1] == u);
        ng = ng || t.needs_grad(steps[size_t(k)]);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < u; ++j) y.at(i, k, j) = sv.at(i, j);
    }
    return t.emit_explicit(std::move(y), ng,
                           [&t, steps, n, u, T, id = int(t.size())]() {
                               const Tensor& g = t.grad(id);
                               for (int k = 0; k < T; ++k) {
                                   if (!t.needs_grad(steps[size_t(k)])) continue;
                                   Tensor& gs = t.grad(steps[size_t(k)]);
                                   for (int i = 0; i < n; ++i)
                                       for (int j = 0; j < u; ++j)
                                           gs[int64_t(i) * u + j] += g[(int64_t(i) * T + k) * u + j];
                               }
                           });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// (N,K) x (K,M) -> (N,M)
inline int matmul(Tape& t, int a, int b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    assert(av.rank() == 2 && bv.rank() == 2 && av.shape[1] == bv.shape[0]);
    const int n = av.shape[0], k = av.shape[1], m = bv.shape[1];
    Tensor y({n, m});
    for (int i = 0; i < n; ++i) {
        const double* arow = &av.data[size_t(i) * k];
        double* yrow = &y.data[size_t(i) * m];
        for (int p = 0; p < k; ++p) {
            const double aval = arow[p];
            if (aval == 0.0) continue;
            const double* brow = &bv.data[size_t(p) * m];
            for (int j = 0; j < m; ++j) yrow[j] += aval * brow[j];
        }
    }
    return t.emit(std::move(y), {a, b}, [&t, a, b, n, k, m, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& av2 = t.val(a);
        const Tensor& bv2 = t.val(b);
        if (t.needs_grad(a)) {  // dA = G * B^T
            Tensor& ga = t.grad(a);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    const double gv = g[int64_t(i) * m + j];
                    if (gv == 0.0) continue;
                    for (int p = 0; p < k; ++p)
                        ga[int64_t(i) * k + p] += gv * bv2[int64_t(p) * m + j];
                }
        }
        if (t.needs_grad(b)) {  // dB = A^T * G
            Tensor& gb = t.grad(b);
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    const double aval = av2[int64_t(i) * k + p];
                    if (aval == 0.0) continue;
                    for (int j = 0; j < m; ++j)
                        gb[int64_t(p) * m + j] += aval * g[int64_t(i) * m + j];
                }
        }
    });
}

// x (..., F) + b (F), broadcast over leading dims.
inline int add_bias(Tape& t, int x, int b) {
    const Tensor& xv = t.val(x);
    const Tensor& bv = t.val(b);
    assert(bv.rank() == 1 && xv.shape.back() == bv.shape[0]);
    const int f = bv.shape[0];
    const int64_t rows = xv.numel() / f;
    Tensor y = xv;
    for (int64_t i = 0; i < rows; ++i)
        for (int j = 0; j < f; ++j) y[i * f + j] += bv[j];
    return t.emit(std::move(y), {x, b}, [&t, x, b, rows, f, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        if (t.needs_grad(x)) {
            Tensor& gx = t.grad(x);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (int64_t i = 0; i < rows; ++i)
                for (int j = 0; j < f; ++j) gb[j] += g[i * f + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution / pooling over (N, T, H, W, C) volumes
// ---------------------------------------------------------------------------

// 3D convolution with SAME zero padding. w: (kt,kh,kw,Cin,Cout), b: (Cout).
inline int conv3d(Tape& t, int x, int w, int b, int stride) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    assert(xv.rank() == 5 && wv.rank() == 5);
    const int N = xv.shape[0], T = xv.shape[1], H = xv.shape[2], W = xv.shape[3],
              Ci = xv.shape[4];
    const int kt = wv.shape[0], kh = wv.shape[1], kw = wv.shape[2], Co = wv.shape[4];
    assert(wv.shape[3] == Ci && bv.shape[0] == Co);
    const int To = detail::same_out(T, stride), Ho = detail::same_out(H, stride),
              Wo = detail::same_out(W, stride);
    const int pt = detail::same_pad_front(T, kt, stride),
              ph = detail::same_pad_front(H, kh, stride),
              pw = detail::same_pad_front(W, kw, stride);

    Tensor y({N, To, Ho, Wo, Co});
    for (int n = 0; n < N; ++n)
        for (int to = 0; to < To; ++to)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double* out = &y.data[size_t((((int64_t(n) * To + to) * Ho + ho) * Wo + wo) * Co)];
                    for (int c = 0; c < Co; ++c) out[c] = bv[c];
                    for (int dt = 0; dt < kt; ++dt) {
                        const int ti = to * stride - pt + dt;
                        if (ti < 0 || ti >= T) continue;
                        for (int dh = 0; dh < kh; ++dh) {
                            const int hi = ho * stride - ph + dh;
                            if (hi < 0 || hi >= H) continue;
                            for (int dw = 0; dw < kw; ++dw) {
                                const int wi = wo * stride - pw + dw;
                                if (wi < 0 || wi >= W) continue;
                                const double* xin =
                                    &xv.data[size_t((((int64_t(n) * T + ti) * H + hi) * W + wi) * Ci)];
                                const double* wrow =
                                    &wv.data[size_t(((int64_t(dt) * kh + dh) * kw + dw) * Ci * Co)];
                                for (int ci = 0; ci < Ci; ++ci) {
                                    const double xval = xin[ci];
                                    if (xval == 0.0) continue;
                                    const double* wc = wrow + int64_t(ci) * Co;
                                    for (int c = 0; c < Co; ++c) out[c] += xval * wc[c];
                                }
                            }
                        }
                    }
                }

    return t.emit(std::move(y), {x, w, b},
                  [&t, x, w, b, N, T, H, W, Ci, kt, kh, kw, Co, To, Ho, Wo, pt, ph, pw, stride,
                   id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        const Tensor& xv2 = t.val(x);
        const Tensor& wv2 = t.val(w);
        const bool gx_needed = t.needs_grad(x), gw_needed = t.needs_grad(w),
                   gb_needed = t.needs_grad(b);
        Tensor* gx = gx_needed ? &t.grad(x) : nullptr;
        Tensor* gw = gw_needed ? &t.grad(w) : nullptr;
        Tensor* gb = gb_needed ? &t.grad(b) : nullptr;
        for (int n = 0; n < N; ++n)
            for (int to = 0; to < To; ++to)
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo) {
                        const double* gout =
                            &g.data[size_t((((int64_t(n) * To + to) * Ho + ho) * Wo + wo) * Co)];
                        if (gb_needed)
                            for (int c = 0; c < Co; ++c) gb->data[size_t(c)] += gout[c];
                        for (int dt = 0; dt < kt; ++dt) {
                            const int ti = to * stride - pt + dt;
                            if (ti < 0 || ti >= T) continue;
                            for (int dh = 0; dh < kh; ++dh) {
                                const int hi = ho * stride - ph + dh;
                                if (hi < 0 || hi >= H) continue;
                                for (int dw = 0; dw < kw; ++dw) {
                                    const int wi = wo * stride - pw + dw;
                                    if (wi < 0 || wi >= W) continue;
                                    const int64_t xoff =
                                        (((int64_t(n) * T + ti) * H + hi) * W + wi) * Ci;
                                    const int64_t woff =
                                        ((int64_t(dt) * kh + dh) * kw + dw) * Ci * Co;
                                    for (int ci = 0; ci < Ci; ++ci) {
                                        for (int c = 0; c < Co; ++c) {
                                            const double gv = gout[c];
                                            if (gv == 0.0) continue;
                                            if (gx_needed)
                                                gx->data[size_t(xoff + ci)] +=
                                                    gv * wv2[woff + int64_t(ci) * Co + c];
                                            if (gw_needed)
                                                gw->data[size_t(woff + int64_t(ci) * Co + c)] +=
                                                    gv * xv2[xoff + ci];
                                        }
                                    }
                                }
                            }
                        }
                    }
    });
}

// Average pooling, window = stride, SAME semantics: out = ceil(in/stride),
// partial windows average over the cells actually covered.
inline int avgpool3d(Tape& t, int x, int stride) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 5);
    const int N = xv.shape[0], T = xv.shape[1], H = xv.shape[2], W = xv.shape[3],
              C = xv.shape[4];
    const int To = detail::same_out(T, stride), Ho = detail::same_out(H, stride),
              Wo = detail::same_out(W, stride);
    Tensor y({N, To, Ho, Wo, C});
    for (int n = 0; n < N; ++n)
        for (int to = 0; to < To; ++to)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    const int t0 = to * stride, h0 = ho * stride, w0 = wo * stride;
                    const int t1 = std::min(t0 + stride, T), h1 = std::min(h0 + stride, H),
                              w1 = std::min(w0 + stride, W);
                    const double inv = 1.0 / (double(t1 - t0) * (h1 - h0) * (w1 - w0));
                    double* out = &y.data[size_t((((int64_t(n) * To + to) * Ho + ho) * Wo + wo) * C)];
                    for (int ti = t0; ti < t1; ++ti)
                        for (int hi = h0; hi < h1; ++hi)
                            for (int wi = w0; wi < w1; ++wi) {
                                const double* in =
                                    &xv.data[size_t((((int64_t(n) * T + ti) * H + hi) * W + wi) * C)];
                                for (int c = 0; c < C; ++c) out[c] += in[c] * inv;
                            }
                }
    return t.emit(std::move(y), {x},
                  [&t, x, N, T, H, W, C, To, Ho, Wo, stride, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int n = 0; n < N; ++n)
            for (int to = 0; to < To; ++to)
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int t0 = to * stride, h0 = ho * stride, w0 = wo * stride;
                        const int t1 = std::min(t0 + stride, T), h1 = std::min(h0 + stride, H),
                                  w1 = std::min(w0 + stride, W);
                        const double inv = 1.0 / (double(t1 - t0) * (h1 - h0) * (w1 - w0));
                        const double* gout =
                            &g.data[size_t((((int64_t(n) * To + to) * Ho + ho) * Wo + wo) * C)];
                        for (int ti = t0; ti < t1; ++ti)
                            for (int hi = h0; hi < h1; ++hi)
                                for (int wi = w0; wi < w1; ++wi) {
                                    double* gin = &gx.data[size_t(
                                        (((int64_t(n) * T + ti) * H + hi) * W + wi) * C)];
                                    for (int c = 0; c < C; ++c) gin[c] += gout[c] * inv;
                                }
                    }
    });
}

// Max over the channel axis: (N,T,H,W,C) -> (N,T,H,W,1). Ties route the
// gradient to the first maximal channel.
inline int channel_max(Tape& t, int x) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 5);
    const int C = xv.shape[4];
    const int64_t cells = xv.numel() / C;
    std::vector<int> os = xv.shape;
    os[4] = 1;
    Tensor y(os);
    auto argmax = std::make_shared<std::vector<int>>(size_t(cells));
    for (int64_t i = 0; i < cells; ++i) {
        const double* in = &xv.data[size_t(i * C)];
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (in[c] > in[best]) best = c;
        (*argmax)[size_t(i)] = best;
        y[i] = in[best];
    }
    return t.emit(std::move(y), {x}, [&t, x, C, cells, argmax, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < cells; ++i) gx[i * C + (*argmax)[size_t(i)]] += g[i];
    });
}

// Mean over the channel axis: (N,T,H,W,C) -> (N,T,H,W,1).
inline int channel_avg(Tape& t, int x) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 5);
    const int C = xv.shape[4];
    const int64_t cells = xv.numel() / C;
    std::vector<int> os = xv.shape;
    os[4] = 1;
    Tensor y(os);
    for (int64_t i = 0; i < cells; ++i) {
        const double* in = &xv.data[size_t(i * C)];
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += in[c];
        y[i] = s / C;
    }
    return t.emit(std::move(y), {x}, [&t, x, C, cells, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        const double inv = 1.0 / C;
        for (int64_t i = 0; i < cells; ++i)
            for (int c = 0; c < C; ++c) gx[i * C + c] += g[i] * inv;
    });
}

// Spatial global average pooling per frame: (N,T,H,W,C) -> (N,T,C).
inline int frame_gap(Tape& t, int x) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 5);
    const int N = xv.shape[0], T = xv.shape[1], H = xv.shape[2], W = xv.shape[3],
              C = xv.shape[4];
    Tensor y({N, T, C});
    const double inv = 1.0 / (double(H) * W);
    for (int n = 0; n < N; ++n)
        for (int ti = 0; ti < T; ++ti) {
            double* out = &y.data[size_t((int64_t(n) * T + ti) * C)];
            for (int hi = 0; hi < H; ++hi)
                for (int wi = 0; wi < W; ++wi) {
                    const double* in =
                        &xv.data[size_t((((int64_t(n) * T + ti) * H + hi) * W + wi) * C)];
                    for (int c = 0; c < C; ++c) out[c] += in[c] * inv;
                }
        }
    return t.emit(std::move(y), {x}, [&t, x, N, T, H, W, C, inv, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int n = 0; n < N; ++n)
            for (int ti = 0; ti < T; ++ti) {
                const double* gout = &g.data[size_t((int64_t(n) * T + ti) * C)];
                for (int hi = 0; hi < H; ++hi)
                    for (int wi = 0; wi < W; ++wi) {
                        double* gin =
                            &gx.data[size_t((((int64_t(n) * T + ti) * H + hi) * W + wi) * C)];
                        for (int c = 0; c < C; ++c) gin[c] += gout[c] * inv;
                    }
            }
    });
}

// Single element (row, col) of a rank-2 node as a scalar node.
inline int pick(Tape& t, int x, int row, int col) {
    const Tensor& xv = t.val(x);
    assert(xv.rank() == 2);
    const int m = xv.shape[1];
    Tensor y({1});
    y[0] = xv.at(row, col);
    return t.emit(std::move(y), {x}, [&t, x, row, col, m, id = int(t.size())]() {
        t.grad(x)[int64_t(row) * m + col] += t.grad(id)[0];
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline void softmax_row(const double* z, int k, double* p, double temperature = 1.0) {
    double mx = z[0] / temperature;
    for (int i = 1; i < k; ++i) mx = std::max(mx, z[i] / temperature);
    double s = 0.0;
    for (int i = 0; i < k; ++i) {
        p[i] = std::exp(z[i] / temperature - mx);
        s += p[i];
    }
    for (int i = 0; i < k; ++i) p[i] /= s;
}

// Mean categorical cross-entropy against integer class indices.
inline int softmax_cross_entropy(Tape& t, int logits, const std::vector<int>& labels) {
    const Tensor& zv = t.val(logits);
    assert(zv.rank() == 2 && size_t(zv.shape[0]) == labels.size());
    const int n = zv.shape[0], k = zv.shape[1];
    auto probs = std::make_shared<Tensor>(zv.shape);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* z = &zv.data[size_t(i) * k];
        double* p = &probs->data[size_t(i) * k];
        softmax_row(z, k, p);
        loss -= std::log(std::max(p[labels[size_t(i)]], 1e-300));
    }
    Tensor y({1});
    y[0] = loss / n;
    return t.emit(std::move(y), {logits},
                  [&t, logits, labels, probs, n, k, id = int(t.size())]() {
                      const double g = t.grad(id)[0];
                      Tensor& gz = t.grad(logits);
                      for (int i = 0; i < n; ++i)
                          for (int j = 0; j < k; ++j) {
                              double d = probs->data[size_t(i) * k + j] -
                                         (j == labels[size_t(i)] ? 1.0 : 0.0);
                              gz[int64_t(i) * k + j] += g * d / n;
                          }
                  });
}

// Mean KL(teacher || student) with both distributions softened at
// temperature T. teacher_probs are already softened probabilities (constant).
inline int distill_kl(Tape& t, int student_logits, const Tensor& teacher_probs,
                      double temperature, bool t_squared_scaling = false) {
    const Tensor& zv = t.val(student_logits);
    assert(zv.rank() == 2 && zv.same_shape(teacher_probs));
    const int n = zv.shape[0], k = zv.shape[1];
    auto q = std::make_shared<Tensor>(zv.shape);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* z = &zv.data[size_t(i) * k];
        double* qi = &q->data[size_t(i) * k];
        softmax_row(z, k, qi, temperature);
        for (int j = 0; j < k; ++j) {
            const double p = teacher_probs[int64_t(i) * k + j];
            if (p > 0.0) loss += p * (std::log(p) - std::log(std::max(qi[j], 1e-300)));
        }
    }
    const double factor = t_squared_scaling ? temperature * temperature : 1.0;
    Tensor y({1});
    y[0] = factor * loss / n;
    return t.emit(std::move(y), {student_logits},
                  [&t, student_logits, teacher_probs, q, n, k, temperature, factor,
                   id = int(t.size())]() {
                      const double g = t.grad(id)[0];
                      Tensor& gz = t.grad(student_logits);
                      for (int i = 0; i < n; ++i)
                          for (int j = 0; j < k; ++j) {
                              const double d = q->data[size_t(i) * k + j] -
                                               teacher_probs[int64_t(i) * k + j];
                              gz[int64_t(i) * k + j] += g * factor * d / (n * temperature);
                          }
                  });
}

}  // namespace mood
