#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "vista/gemm.hpp"
#include "vista/param.hpp"
#include "vista/tensor.hpp"

namespace vista {

// Reverse-mode autodiff over a linear tape. Nodes are pushed in forward
// order (already topologically sorted); backward() walks them in reverse.
// Every forward pass in the project runs through a tape; inference simply
// never calls backward (or disables grads entirely via grad_enabled).
template <typename T>
class Tape {
  public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad; // empty until touched by backward
        bool needs_grad = false;
        Parameter<T>* param = nullptr;
        std::function<void(Tape&)> back;
    };

    bool grad_enabled = true;
    std::vector<Node> nodes;

    void reset() { nodes.clear(); }

    int push(Tensor<T> v, bool needs_grad) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad && grad_enabled;
        nodes.push_back(std::move(n));
        return (int)nodes.size() - 1;
    }

    const Tensor<T>& val(int id) const { return nodes[(size_t)id].value; }
    bool needs(int id) const { return nodes[(size_t)id].needs_grad; }

    Tensor<T>& grad_buf(int id) {
        Node& n = nodes[(size_t)id];
        if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    void accum(int id, const Tensor<T>& g) {
        Tensor<T>& dst = grad_buf(id);
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. Gradients of
    // leaf nodes are accumulated into their bound parameters; frozen-base
    // leaves never receive gradients because their nodes carry
    // needs_grad = false.
    void backward(int loss_id) {
        if (val(loss_id).numel() != 1)
            throw DimensionError("backward: loss must be scalar");
        if (!nodes[(size_t)loss_id].needs_grad) return;
        grad_buf(loss_id)[0] = T(1);
        for (int i = loss_id; i >= 0; --i) {
            Node& n = nodes[(size_t)i];
            if (!n.needs_grad || n.grad.data.empty()) continue;
            if (n.back) n.back(*this);
        }
        for (auto& n : nodes) {
            if (n.param && n.needs_grad && !n.grad.data.empty()) {
                for (int64_t i = 0; i < n.grad.numel(); ++i) n.param->grad[i] += n.grad[i];
            }
        }
    }
};

template <typename T>
struct Val {
    Tape<T>* tape = nullptr;
    int id = -1;
    const Tensor<T>& v() const { return tape->val(id); }
    bool valid() const { return tape != nullptr; }
};

// ---- graph construction -------------------------------------------------

template <typename T>
Val<T> constant(Tape<T>& tp, Tensor<T> v) {
    return {&tp, tp.push(std::move(v), false)};
}

template <typename T>
Val<T> leaf(Tape<T>& tp, Parameter<T>& p) {
    const bool trainable = p.role != Role::FrozenBase && !p.frozen;
    int id = tp.push(p.value, trainable);
    if (tp.nodes[(size_t)id].needs_grad) tp.nodes[(size_t)id].param = &p;
    return {&tp, id};
}

// ---- elementwise and linear algebra --------------------------------------

template <typename T>
Val<T> add(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    if (!a.v().same_shape(b.v()))
        throw DimensionError("add: shape mismatch " + a.v().shape_str() + " vs " + b.v().shape_str());
    Tensor<T> out = a.v();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.v()[i];
    const bool ng = tp.needs(a.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, bid = b.id](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(aid)) t.accum(aid, g);
            if (t.needs(bid)) t.accum(bid, g);
        };
    return {&tp, id};
}

// a + c*b, c is a fixed scalar (not differentiated)
template <typename T>
Val<T> add_scaled(Val<T> a, Val<T> b, T c) {
    Tape<T>& tp = *a.tape;
    if (!a.v().same_shape(b.v())) throw DimensionError("add_scaled: shape mismatch");
    Tensor<T> out = a.v();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c * b.v()[i];
    const bool ng = tp.needs(a.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, bid = b.id, c](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(aid)) t.accum(aid, g);
            if (t.needs(bid)) {
                Tensor<T>& dst = t.grad_buf(bid);
                for (int64_t i = 0; i < g.numel(); ++i) dst[i] += c * g[i];
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> sub(Val<T> a, Val<T> b) {
    return add_scaled(a, b, T(-1));
}

template <typename T>
Val<T> mul(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    if (!a.v().same_shape(b.v())) throw DimensionError("mul: shape mismatch");
    Tensor<T> out = a.v();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.v()[i];
    const bool ng = tp.needs(a.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, bid = b.id](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(aid)) {
                Tensor<T>& da = t.grad_buf(aid);
                const Tensor<T>& bv = t.val(bid);
                for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * bv[i];
            }
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                const Tensor<T>& av = t.val(aid);
                for (int64_t i = 0; i < g.numel(); ++i) db[i] += g[i] * av[i];
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> scale(Val<T> a, T c) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = a.v();
    for (auto& v : out.data) v *= c;
    const bool ng = tp.needs(a.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, c](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& da = t.grad_buf(aid);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += c * g[i];
        };
    return {&tp, id};
}

// y = x * s where s is a scalar node (e.g. a learned temperature)
template <typename T>
Val<T> scale_by(Val<T> x, Val<T> s) {
    Tape<T>& tp = *x.tape;
    if (s.v().numel() != 1) throw DimensionError("scale_by: scalar expected");
    const T sv = s.v()[0];
    Tensor<T> out = x.v();
    for (auto& v : out.data) v *= sv;
    const bool ng = tp.needs(x.id) || tp.needs(s.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, sid = s.id, sv](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(xid)) {
                Tensor<T>& dx = t.grad_buf(xid);
                for (int64_t i = 0; i < g.numel(); ++i) dx[i] += sv * g[i];
            }
            if (t.needs(sid)) {
                const Tensor<T>& xv = t.val(xid);
                T acc = T(0);
                for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
                t.grad_buf(sid)[0] += acc;
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> exp_scalar(Val<T> s) {
    Tape<T>& tp = *s.tape;
    if (s.v().numel() != 1) throw DimensionError("exp_scalar: scalar expected");
    Tensor<T> out = Tensor<T>::full({1}, (T)std::exp((double)s.v()[0]));
    const T yv = out[0];
    const bool ng = tp.needs(s.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, sid = s.id, yv](Tape<T>& t) {
            t.grad_buf(sid)[0] += t.nodes[(size_t)id].grad[0] * yv;
        };
    return {&tp, id};
}

template <typename T>
Val<T> matmul(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.v();
    const Tensor<T>& bv = b.v();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows())
        throw DimensionError("matmul: " + av.shape_str() + " x " + bv.shape_str());
    const int m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor<T> out = Tensor<T>::zeros({m, n});
    gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    const bool ng = tp.needs(a.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, bid = b.id, m, k, n](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(aid)) { // dA += g * B^T
                Tensor<T>& da = t.grad_buf(aid);
                gemm_nt(g.data.data(), t.val(bid).data.data(), da.data.data(), m, n, k);
            }
            if (t.needs(bid)) { // dB += A^T * g
                Tensor<T>& db = t.grad_buf(bid);
                gemm_tn(t.val(aid).data.data(), g.data.data(), db.data.data(), k, m, n);
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> transpose(Val<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.v();
    if (av.ndim() != 2) throw DimensionError("transpose: 2-D expected");
    const int r = av.rows(), c = av.cols();
    Tensor<T> out = Tensor<T>::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
    const bool ng = tp.needs(a.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, r, c](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& da = t.grad_buf(aid);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) da.at(i, j) += g.at(j, i);
        };
    return {&tp, id};
}

// x [R x d] + b [d], broadcast over rows
template <typename T>
Val<T> add_row_bias(Val<T> x, Val<T> b) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    const Tensor<T>& bv = b.v();
    if (xv.ndim() != 2 || bv.numel() != xv.cols()) throw DimensionError("add_row_bias: shapes");
    Tensor<T> out = xv;
    const int r = xv.rows(), d = xv.cols();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) += bv[j];
    const bool ng = tp.needs(x.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, bid = b.id, r, d](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(xid)) t.accum(xid, g);
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < d; ++j) db[j] += g.at(i, j);
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> linear(Val<T> x, Val<T> w, Val<T> b) {
    return add_row_bias(matmul(x, w), b);
}

// ---- nonlinearities -------------------------------------------------------

template <typename T>
Val<T> gelu(Val<T> x) {
    Tape<T>& tp = *x.tape;
    constexpr double kA = 0.044715;
    constexpr double kC = 0.7978845608028654; // sqrt(2/pi)
    Tensor<T> out = x.v();
    for (auto& v : out.data) {
        const double xd = (double)v;
        v = (T)(0.5 * xd * (1.0 + std::tanh(kC * (xd + kA * xd * xd * xd))));
    }
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            const Tensor<T>& xv = t.val(xid);
            Tensor<T>& dx = t.grad_buf(xid);
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double xd = (double)xv[i];
                const double u = kC * (xd + kA * xd * xd * xd);
                const double th = std::tanh(u);
                const double sech2 = 1.0 - th * th;
                const double d = 0.5 * (1.0 + th) + 0.5 * xd * sech2 * kC * (1.0 + 3.0 * kA * xd * xd);
                dx[i] += (T)((double)g[i] * d);
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> silu(Val<T> x) {
    Tape<T>& tp = *x.tape;
    Tensor<T> out = x.v();
    for (auto& v : out.data) {
        const double s = 1.0 / (1.0 + std::exp(-(double)v));
        v = (T)((double)v * s);
    }
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            const Tensor<T>& xv = t.val(xid);
            Tensor<T>& dx = t.grad_buf(xid);
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-(double)xv[i]));
                dx[i] += (T)((double)g[i] * (s * (1.0 + (double)xv[i] * (1.0 - s))));
            }
        };
    return {&tp, id};
}

// ---- softmax / normalization ----------------------------------------------

// Max-subtracted softmax over the last dim. An optional column mask marks
// valid key positions (1 = valid); masked positions get probability 0.
// A row with no valid position is a contract violation.
template <typename T>
Val<T> softmax_lastdim(Val<T> x, const std::vector<uint8_t>& col_mask = {}) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 2 || xv.cols() < 1) throw DimensionError("softmax: empty last dim");
    const int r = xv.rows(), c = xv.cols();
    if (!col_mask.empty()) {
        if ((int)col_mask.size() != c) throw DimensionError("softmax: mask size");
        bool any = false;
        for (uint8_t m : col_mask) any = any || m;
        if (!any) throw DimensionError("softmax: all positions masked");
    }
    Tensor<T> out = Tensor<T>::zeros({r, c});
    for (int i = 0; i < r; ++i) {
        double mx = -1e300;
        for (int j = 0; j < c; ++j)
            if (col_mask.empty() || col_mask[(size_t)j]) mx = std::max(mx, (double)xv.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            if (!col_mask.empty() && !col_mask[(size_t)j]) continue;
            denom += std::exp((double)xv.at(i, j) - mx);
        }
        for (int j = 0; j < c; ++j) {
            if (!col_mask.empty() && !col_mask[(size_t)j]) continue;
            out.at(i, j) = (T)(std::exp((double)xv.at(i, j) - mx) / denom);
        }
    }
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, r, c](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            const Tensor<T>& y = t.val(id);
            Tensor<T>& dx = t.grad_buf(xid);
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += (double)g.at(i, j) * (double)y.at(i, j);
                for (int j = 0; j < c; ++j)
                    dx.at(i, j) += (T)(((double)g.at(i, j) - dot) * (double)y.at(i, j));
            }
        };
    return {&tp, id};
}

// Per-row layer norm with affine gain/bias, eps = 1e-5.
template <typename T>
Val<T> layer_norm(Val<T> x, Val<T> gain, Val<T> bias) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    const int r = xv.rows(), d = xv.cols();
    if (xv.ndim() != 2 || d < 1) throw DimensionError("layer_norm: 2-D input expected");
    if (gain.v().numel() != d || bias.v().numel() != d) throw DimensionError("layer_norm: affine dims");
    constexpr double kEps = 1e-5;
    auto yhat = std::make_shared<Tensor<T>>(Tensor<T>::zeros({r, d}));
    auto istd = std::make_shared<std::vector<double>>((size_t)r);
    Tensor<T> out = Tensor<T>::zeros({r, d});
    for (int i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += (double)xv.at(i, j);
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double e = (double)xv.at(i, j) - mu;
            var += e * e;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + kEps);
        (*istd)[(size_t)i] = is;
        for (int j = 0; j < d; ++j) {
            const double yh = ((double)xv.at(i, j) - mu) * is;
            yhat->at(i, j) = (T)yh;
            out.at(i, j) = (T)(yh * (double)gain.v()[j] + (double)bias.v()[j]);
        }
    }
    const bool ng = tp.needs(x.id) || tp.needs(gain.id) || tp.needs(bias.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, gid = gain.id, bid = bias.id, yhat, istd, r,
                                     d](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            const Tensor<T>& gv = t.val(gid);
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < d; ++j) db[j] += g.at(i, j);
            }
            if (t.needs(gid)) {
                Tensor<T>& dg = t.grad_buf(gid);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < d; ++j) dg[j] += g.at(i, j) * yhat->at(i, j);
            }
            if (t.needs(xid)) {
                Tensor<T>& dx = t.grad_buf(xid);
                for (int i = 0; i < r; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dyh = (double)g.at(i, j) * (double)gv[j];
                        m1 += dyh;
                        m2 += dyh * (double)yhat->at(i, j);
                    }
                    m1 /= d;
                    m2 /= d;
                    for (int j = 0; j < d; ++j) {
                        const double dyh = (double)g.at(i, j) * (double)gv[j];
                        dx.at(i, j) +=
                            (T)((*istd)[(size_t)i] * (dyh - m1 - (double)yhat->at(i, j) * m2));
                    }
                }
            }
        };
    return {&tp, id};
}

// Group norm over [C,H,W] with per-channel affine.
template <typename T>
Val<T> group_norm(Val<T> x, int groups, Val<T> gain, Val<T> bias) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 3) throw DimensionError("group_norm: [C,H,W] expected");
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    if (C % groups != 0) throw DimensionError("group_norm: C % groups != 0");
    if (gain.v().numel() != C || bias.v().numel() != C) throw DimensionError("group_norm: affine dims");
    constexpr double kEps = 1e-5;
    const int gs = C / groups;
    const int64_t plane = (int64_t)H * W;
    auto yhat = std::make_shared<Tensor<T>>(Tensor<T>::zeros({C, H, W}));
    auto istd = std::make_shared<std::vector<double>>((size_t)groups);
    Tensor<T> out = Tensor<T>::zeros({C, H, W});
    for (int gidx = 0; gidx < groups; ++gidx) {
        const int64_t base = (int64_t)gidx * gs * plane;
        const int64_t n = (int64_t)gs * plane;
        double mu = 0.0;
        for (int64_t i = 0; i < n; ++i) mu += (double)xv[base + i];
        mu /= (double)n;
        double var = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double e = (double)xv[base + i] - mu;
            var += e * e;
        }
        var /= (double)n;
        const double is = 1.0 / std::sqrt(var + kEps);
        (*istd)[(size_t)gidx] = is;
        for (int c = gidx * gs; c < (gidx + 1) * gs; ++c) {
            for (int64_t i = 0; i < plane; ++i) {
                const double yh = ((double)xv[(int64_t)c * plane + i] - mu) * is;
                (*yhat)[(int64_t)c * plane + i] = (T)yh;
                out[(int64_t)c * plane + i] = (T)(yh * (double)gain.v()[c] + (double)bias.v()[c]);
            }
        }
    }
    const bool ng = tp.needs(x.id) || tp.needs(gain.id) || tp.needs(bias.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, gid = gain.id, bid = bias.id, yhat, istd,
                                     groups, gs, plane, C](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            const Tensor<T>& gv = t.val(gid);
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int c = 0; c < C; ++c)
                    for (int64_t i = 0; i < plane; ++i) db[c] += g[(int64_t)c * plane + i];
            }
            if (t.needs(gid)) {
                Tensor<T>& dg = t.grad_buf(gid);
                for (int c = 0; c < C; ++c)
                    for (int64_t i = 0; i < plane; ++i)
                        dg[c] += g[(int64_t)c * plane + i] * (*yhat)[(int64_t)c * plane + i];
            }
            if (t.needs(xid)) {
                Tensor<T>& dx = t.grad_buf(xid);
                const int64_t n = (int64_t)gs * plane;
                for (int gidx = 0; gidx < groups; ++gidx) {
                    const int64_t base = (int64_t)gidx * gs * plane;
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = gidx * gs; c < (gidx + 1) * gs; ++c)
                        for (int64_t i = 0; i < plane; ++i) {
                            const int64_t k = (int64_t)c * plane + i;
                            const double dyh = (double)g[k] * (double)gv[c];
                            m1 += dyh;
                            m2 += dyh * (double)(*yhat)[k];
                        }
                    m1 /= (double)n;
                    m2 /= (double)n;
                    (void)base;
                    for (int c = gidx * gs; c < (gidx + 1) * gs; ++c)
                        for (int64_t i = 0; i < plane; ++i) {
                            const int64_t k = (int64_t)c * plane + i;
                            const double dyh = (double)g[k] * (double)gv[c];
                            dx[k] += (T)((*istd)[(size_t)gidx] *
                                         (dyh - m1 - (double)(*yhat)[k] * m2));
                        }
                }
            }
        };
    return {&tp, id};
}

// ---- convolution / spatial ops ---------------------------------------------

namespace detail {

template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, Tensor<T>& cols, int ho, int wo) {
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    // cols: [C*k*k, ho*wo]
    for (int c = 0; c < C; ++c)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const int row = (c * k + kh) * k + kw;
                T* dst = cols.data.data() + (size_t)row * ho * wo;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride + kw - pad;
                        dst[oh * wo + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                                ? x.at3(c, ih, iw)
                                                : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_accum(const Tensor<T>& cols, int k, int stride, int pad, Tensor<T>& dx, int ho,
                  int wo) {
    const int C = dx.shape[0], H = dx.shape[1], W = dx.shape[2];
    for (int c = 0; c < C; ++c)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const int row = (c * k + kh) * k + kw;
                const T* src = cols.data.data() + (size_t)row * ho * wo;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= H) continue;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride + kw - pad;
                        if (iw < 0 || iw >= W) continue;
                        dx.at3(c, ih, iw) += src[oh * wo + ow];
                    }
                }
            }
}

} // namespace detail

// conv2d over [C,H,W] with weight [Cout, Cin*k*k] and bias [Cout].
template <typename T>
Val<T> conv2d(Val<T> x, Val<T> w, Val<T> b, int k, int stride, int pad) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 3) throw DimensionError("conv2d: [C,H,W] expected");
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    const int cout = w.v().rows();
    if (w.v().cols() != C * k * k) throw DimensionError("conv2d: weight shape");
    if (b.v().numel() != cout) throw DimensionError("conv2d: bias shape");
    const int ho = (H + 2 * pad - k) / stride + 1;
    const int wo = (W + 2 * pad - k) / stride + 1;
    auto cols = std::make_shared<Tensor<T>>(Tensor<T>::zeros({C * k * k, ho * wo}));
    detail::im2col(xv, k, stride, pad, *cols, ho, wo);
    Tensor<T> out = Tensor<T>::zeros({cout, ho, wo});
    gemm_nn(w.v().data.data(), cols->data.data(), out.data.data(), cout, C * k * k, ho * wo);
    for (int co = 0; co < cout; ++co) {
        const T bb = b.v()[co];
        T* dst = out.data.data() + (size_t)co * ho * wo;
        for (int i = 0; i < ho * wo; ++i) dst[i] += bb;
    }
    const bool ng = tp.needs(x.id) || tp.needs(w.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, wid = w.id, bid = b.id, cols, k, stride, pad,
                                     C, cout, ho, wo](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad; // [cout, ho, wo]
            const int kk = C * k * k;
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int co = 0; co < cout; ++co) {
                    const T* src = g.data.data() + (size_t)co * ho * wo;
                    T acc = T(0);
                    for (int i = 0; i < ho * wo; ++i) acc += src[i];
                    db[co] += acc;
                }
            }
            if (t.needs(wid)) { // dW += g [cout x how] * cols^T [how x kk]
                Tensor<T>& dw = t.grad_buf(wid);
                gemm_nt(g.data.data(), cols->data.data(), dw.data.data(), cout, ho * wo, kk);
            }
            if (t.needs(xid)) { // dcols = W^T [kk x cout] * g [cout x how]
                Tensor<T> dcols = Tensor<T>::zeros({kk, ho * wo});
                gemm_tn(t.val(wid).data.data(), g.data.data(), dcols.data.data(), kk, cout,
                        ho * wo);
                Tensor<T>& dx = t.grad_buf(xid);
                detail::col2im_accum(dcols, k, stride, pad, dx, ho, wo);
            }
        };
    return {&tp, id};
}

// x[C,H,W] + b[C], broadcast over the plane (timestep embedding injection).
template <typename T>
Val<T> bias_per_channel(Val<T> x, Val<T> b) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 3 || b.v().numel() != xv.shape[0])
        throw DimensionError("bias_per_channel: shapes");
    const int C = xv.shape[0];
    const int64_t plane = (int64_t)xv.shape[1] * xv.shape[2];
    Tensor<T> out = xv;
    for (int c = 0; c < C; ++c) {
        const T bb = b.v()[c];
        for (int64_t i = 0; i < plane; ++i) out[(int64_t)c * plane + i] += bb;
    }
    const bool ng = tp.needs(x.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, bid = b.id, C, plane](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(xid)) t.accum(xid, g);
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int c = 0; c < C; ++c) {
                    T acc = T(0);
                    for (int64_t i = 0; i < plane; ++i) acc += g[(int64_t)c * plane + i];
                    db[c] += acc;
                }
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> upsample_nearest2(Val<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 3) throw DimensionError("upsample: [C,H,W] expected");
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    Tensor<T> out = Tensor<T>::zeros({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w) out.at3(c, h, w) = xv.at3(c, h / 2, w / 2);
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, C, H, W](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& dx = t.grad_buf(xid);
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < 2 * H; ++h)
                    for (int w = 0; w < 2 * W; ++w) dx.at3(c, h / 2, w / 2) += g.at3(c, h, w);
        };
    return {&tp, id};
}

// [C,H,W] -> [H*W, C] token view and back.
template <typename T>
Val<T> tokens_from_chw(Val<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 3) throw DimensionError("tokens_from_chw: [C,H,W] expected");
    const int C = xv.shape[0];
    const int64_t plane = (int64_t)xv.shape[1] * xv.shape[2];
    Tensor<T> out = Tensor<T>::zeros({(int)plane, C});
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < plane; ++i) out.at((int)i, c) = xv[(int64_t)c * plane + i];
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, C, plane](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& dx = t.grad_buf(xid);
            for (int c = 0; c < C; ++c)
                for (int64_t i = 0; i < plane; ++i) dx[(int64_t)c * plane + i] += g.at((int)i, c);
        };
    return {&tp, id};
}

template <typename T>
Val<T> chw_from_tokens(Val<T> x, int H, int W) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 2 || xv.rows() != H * W) throw DimensionError("chw_from_tokens: shapes");
    const int C = xv.cols();
    const int64_t plane = (int64_t)H * W;
    Tensor<T> out = Tensor<T>::zeros({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < plane; ++i) out[(int64_t)c * plane + i] = xv.at((int)i, c);
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, C, plane](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& dx = t.grad_buf(xid);
            for (int c = 0; c < C; ++c)
                for (int64_t i = 0; i < plane; ++i) dx.at((int)i, c) += g[(int64_t)c * plane + i];
        };
    return {&tp, id};
}

// ---- gather / masking / concat ---------------------------------------------

// out rows = table rows selected by ids (token embedding lookup).
template <typename T>
Val<T> gather_rows(Val<T> table, const std::vector<int>& ids) {
    Tape<T>& tp = *table.tape;
    const Tensor<T>& tv = table.v();
    if (tv.ndim() != 2) throw DimensionError("gather_rows: 2-D table expected");
    const int d = tv.cols();
    Tensor<T> out = Tensor<T>::zeros({(int)ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.rows()) throw DimensionError("gather_rows: id out of range");
        for (int j = 0; j < d; ++j) out.at((int)i, j) = tv.at(ids[i], j);
    }
    const bool ng = tp.needs(table.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, tid = table.id, ids, d](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& dt = t.grad_buf(tid);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j) dt.at(ids[i], j) += g.at((int)i, j);
        };
    return {&tp, id};
}

// Zero entire rows where keep[r] == 0 (PAD positions).
template <typename T>
Val<T> zero_rows(Val<T> x, const std::vector<uint8_t>& keep) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 2 || (int)keep.size() != xv.rows()) throw DimensionError("zero_rows: mask size");
    Tensor<T> out = xv;
    const int r = xv.rows(), d = xv.cols();
    for (int i = 0; i < r; ++i)
        if (!keep[(size_t)i])
            for (int j = 0; j < d; ++j) out.at(i, j) = T(0);
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, keep, r, d](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& dx = t.grad_buf(xid);
            for (int i = 0; i < r; ++i)
                if (keep[(size_t)i])
                    for (int j = 0; j < d; ++j) dx.at(i, j) += g.at(i, j);
        };
    return {&tp, id};
}

template <typename T>
Val<T> concat_rows(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.v();
    const Tensor<T>& bv = b.v();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.cols())
        throw DimensionError("concat_rows: col mismatch");
    const int ra = av.rows(), rb = bv.rows(), d = av.cols();
    Tensor<T> out = Tensor<T>::zeros({ra + rb, d});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + (size_t)ra * d);
    const bool ng = tp.needs(a.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, bid = b.id, ra, rb, d](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            if (t.needs(aid)) {
                Tensor<T>& da = t.grad_buf(aid);
                for (int64_t i = 0; i < (int64_t)ra * d; ++i) da[i] += g[i];
            }
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int64_t i = 0; i < (int64_t)rb * d; ++i) db[i] += g[(int64_t)ra * d + i];
            }
        };
    return {&tp, id};
}

// Mean over rows with mask (1 = count it) -> [1 x d]. Errors if no row kept.
template <typename T>
Val<T> masked_mean_rows(Val<T> x, const std::vector<uint8_t>& keep) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 2 || (int)keep.size() != xv.rows())
        throw DimensionError("masked_mean_rows: mask size");
    int nkeep = 0;
    for (uint8_t m : keep) nkeep += m ? 1 : 0;
    if (nkeep == 0) throw DimensionError("masked_mean_rows: empty input (all rows masked)");
    const int r = xv.rows(), d = xv.cols();
    Tensor<T> out = Tensor<T>::zeros({1, d});
    for (int i = 0; i < r; ++i)
        if (keep[(size_t)i])
            for (int j = 0; j < d; ++j) out[j] += xv.at(i, j);
    for (int j = 0; j < d; ++j) out[j] /= (T)nkeep;
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, keep, r, d, nkeep](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            Tensor<T>& dx = t.grad_buf(xid);
            for (int i = 0; i < r; ++i)
                if (keep[(size_t)i])
                    for (int j = 0; j < d; ++j) dx.at(i, j) += g[j] / (T)nkeep;
        };
    return {&tp, id};
}

// L2-normalize a [1 x d] row.
template <typename T>
Val<T> l2_normalize_row(Val<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.v();
    if (xv.ndim() != 2 || xv.rows() != 1) throw DimensionError("l2_normalize_row: [1 x d] expected");
    double nrm = 0.0;
    for (T v : xv.data) nrm += (double)v * (double)v;
    nrm = std::sqrt(std::max(nrm, 1e-24));
    Tensor<T> out = xv;
    for (auto& v : out.data) v = (T)((double)v / nrm);
    const bool ng = tp.needs(x.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, xid = x.id, nrm](Tape<T>& t) {
            const Tensor<T>& g = t.nodes[(size_t)id].grad;
            const Tensor<T>& y = t.val(id);
            Tensor<T>& dx = t.grad_buf(xid);
            double dot = 0.0;
            for (int64_t i = 0; i < g.numel(); ++i) dot += (double)g[i] * (double)y[i];
            for (int64_t i = 0; i < g.numel(); ++i)
                dx[i] += (T)(((double)g[i] - dot * (double)y[i]) / nrm);
        };
    return {&tp, id};
}

// ---- reductions / losses ----------------------------------------------------

template <typename T>
Val<T> mse(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    if (!a.v().same_shape(b.v())) throw DimensionError("mse: shape mismatch");
    const int64_t n = a.v().numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double e = (double)a.v()[i] - (double)b.v()[i];
        acc += e * e;
    }
    Tensor<T> out = Tensor<T>::full({1}, (T)(acc / (double)n));
    const bool ng = tp.needs(a.id) || tp.needs(b.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, bid = b.id, n](Tape<T>& t) {
            const T g = t.nodes[(size_t)id].grad[0];
            const Tensor<T>& av = t.val(aid);
            const Tensor<T>& bv = t.val(bid);
            const T c = g * T(2) / (T)n;
            if (t.needs(aid)) {
                Tensor<T>& da = t.grad_buf(aid);
                for (int64_t i = 0; i < n; ++i) da[i] += c * (av[i] - bv[i]);
            }
            if (t.needs(bid)) {
                Tensor<T>& db = t.grad_buf(bid);
                for (int64_t i = 0; i < n; ++i) db[i] -= c * (av[i] - bv[i]);
            }
        };
    return {&tp, id};
}

template <typename T>
Val<T> sum_sq(Val<T> a) {
    Tape<T>& tp = *a.tape;
    double acc = 0.0;
    for (T v : a.v().data) acc += (double)v * (double)v;
    Tensor<T> out = Tensor<T>::full({1}, (T)acc);
    const bool ng = tp.needs(a.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id](Tape<T>& t) {
            const T g = t.nodes[(size_t)id].grad[0];
            const Tensor<T>& av = t.val(aid);
            Tensor<T>& da = t.grad_buf(aid);
            for (int64_t i = 0; i < av.numel(); ++i) da[i] += g * T(2) * av[i];
        };
    return {&tp, id};
}

template <typename T>
Val<T> mean_all(Val<T> a) {
    Tape<T>& tp = *a.tape;
    const int64_t n = a.v().numel();
    double acc = 0.0;
    for (T v : a.v().data) acc += (double)v;
    Tensor<T> out = Tensor<T>::full({1}, (T)(acc / (double)n));
    const bool ng = tp.needs(a.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, aid = a.id, n](Tape<T>& t) {
            const T g = t.nodes[(size_t)id].grad[0] / (T)n;
            Tensor<T>& da = t.grad_buf(aid);
            for (int64_t i = 0; i < n; ++i) da[i] += g;
        };
    return {&tp, id};
}

// Symmetric InfoNCE building block: mean over rows of -log softmax(row)[row].
template <typename T>
Val<T> cross_entropy_diag(Val<T> logits) {
    Tape<T>& tp = *logits.tape;
    const Tensor<T>& lv = logits.v();
    if (lv.ndim() != 2 || lv.rows() != lv.cols())
        throw DimensionError("cross_entropy_diag: square logits expected");
    const int n = lv.rows();
    auto probs = std::make_shared<Tensor<T>>(Tensor<T>::zeros({n, n}));
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < n; ++j) mx = std::max(mx, (double)lv.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp((double)lv.at(i, j) - mx);
        for (int j = 0; j < n; ++j) probs->at(i, j) = (T)(std::exp((double)lv.at(i, j) - mx) / denom);
        loss += -((double)lv.at(i, i) - mx - std::log(denom));
    }
    Tensor<T> out = Tensor<T>::full({1}, (T)(loss / n));
    const bool ng = tp.needs(logits.id);
    int id = tp.push(std::move(out), ng);
    if (ng)
        tp.nodes[(size_t)id].back = [id, lid = logits.id, probs, n](Tape<T>& t) {
            const T g = t.nodes[(size_t)id].grad[0];
            Tensor<T>& dl = t.grad_buf(lid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    dl.at(i, j) += g * (probs->at(i, j) - (T)(i == j ? 1 : 0)) / (T)n;
        };
    return {&tp, id};
}

// ---- attention --------------------------------------------------------------

template <typename T>
struct AttentionOut {
    Val<T> out;    // [Lq x dv]
    Val<T> logits; // [Lq x Lk], pre-softmax
};

// out = softmax(Q K^T / sqrt(d)) V with optional key validity mask.
template <typename T>
AttentionOut<T> scaled_dot_attention(Val<T> q, Val<T> k, Val<T> v,
                                     const std::vector<uint8_t>& key_mask = {}) {
    const Tensor<T>& qv = q.v();
    const Tensor<T>& kv = k.v();
    const Tensor<T>& vv = v.v();
    if (kv.rows() == 0) throw DimensionError("attention: empty context");
    if (qv.cols() != kv.cols()) throw DimensionError("attention: Q/K feature dims differ");
    if (kv.rows() != vv.rows()) throw DimensionError("attention: K/V lengths differ");
    const T inv_sqrt_d = (T)(1.0 / std::sqrt((double)qv.cols()));
    Val<T> logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
    Val<T> att = softmax_lastdim(logits, key_mask);
    return {matmul(att, v), logits};
}

} // namespace vista
