#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "opq/tensor.hpp"

namespace opq {

// Reverse-mode autodiff over a fixed op vocabulary. Graphs are built fresh per
// forward pass; leaves (parameters, inputs) can be shared across graphs, and
// backward() accumulates into leaf grads, which is what batch accumulation
// wants. Intermediate nodes are never reused.
template <class S>
struct NodeT {
    TensorT<S> val;
    TensorT<S> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backfn;
    const char* op = "leaf";

    void ensure_grad() {
        if (!grad_ready) {
            grad.shape = val.shape;
            grad.data.assign(val.data.size(), S(0));
            grad_ready = true;
        }
    }
    void zero_grad() {
        if (grad_ready) std::fill(grad.data.begin(), grad.data.end(), S(0));
    }
};

template <class S>
using NodePtr = std::shared_ptr<NodeT<S>>;

template <class S>
class VarT {
  public:
    VarT() = default;
    explicit VarT(NodePtr<S> n) : n_(std::move(n)) {}

    const TensorT<S>& val() const { return n_->val; }
    TensorT<S>& val() { return n_->val; }
    const TensorT<S>& grad() const { return n_->grad; }
    NodePtr<S> node() const { return n_; }
    bool defined() const { return n_ != nullptr; }
    bool requires_grad() const { return n_->requires_grad; }

  private:
    NodePtr<S> n_;
};

using Var = VarT<float>;

template <class S>
VarT<S> make_leaf(TensorT<S> v, bool requires_grad = false) {
    auto n = std::make_shared<NodeT<S>>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return VarT<S>(n);
}

template <class S>
VarT<S> make_const(TensorT<S> v) {
    return make_leaf(std::move(v), false);
}

namespace detail {

template <class S>
VarT<S> new_op(TensorT<S> val, std::vector<NodePtr<S>> parents, const char* op,
               std::function<void(NodeT<S>&)> backfn) {
    assert_finite(val, op);
    auto n = std::make_shared<NodeT<S>>();
    n->val = std::move(val);
    n->op = op;
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backfn = std::move(backfn);
    return VarT<S>(n);
}

}  // namespace detail

// Runs reverse accumulation from a scalar root. seed scales the whole
// gradient, used to fold 1/batch into a single backward pass.
template <class S>
void backward(const VarT<S>& root, S seed = S(1)) {
    check(root.val().numel() == 1, "backward: root must be scalar");
    std::vector<NodeT<S>*> topo;
    std::unordered_set<NodeT<S>*> seen;
    std::vector<std::pair<NodeT<S>*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<S>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (auto* n : topo) n->ensure_grad();
    root.node()->grad.data[0] += seed;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        NodeT<S>* n = *it;
        if (n->backfn) n->backfn(*n);
    }
}

// ---- elementwise ----

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
    check(a.val().same_shape(b.val()),
          "add: shape mismatch " + shape_str(a.val()) + " vs " + shape_str(b.val()));
    TensorT<S> y = a.val();
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] += b.val().data[i];
    auto pa = a.node(), pb = b.node();
    return detail::new_op<S>(std::move(y), {pa, pb}, "add", [pa, pb](NodeT<S>& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.numel(); ++i) pa->grad.data[i] += n.grad.data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.numel(); ++i) pb->grad.data[i] += n.grad.data[i];
        }
    });
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
    check(a.val().same_shape(b.val()),
          "sub: shape mismatch " + shape_str(a.val()) + " vs " + shape_str(b.val()));
    TensorT<S> y = a.val();
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] -= b.val().data[i];
    auto pa = a.node(), pb = b.node();
    return detail::new_op<S>(std::move(y), {pa, pb}, "sub", [pa, pb](NodeT<S>& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.numel(); ++i) pa->grad.data[i] += n.grad.data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.numel(); ++i) pb->grad.data[i] -= n.grad.data[i];
        }
    });
}

template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
    check(a.val().same_shape(b.val()),
          "mul: shape mismatch " + shape_str(a.val()) + " vs " + shape_str(b.val()));
    TensorT<S> y = a.val();
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] *= b.val().data[i];
    auto pa = a.node(), pb = b.node();
    return detail::new_op<S>(std::move(y), {pa, pb}, "mul", [pa, pb](NodeT<S>& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.numel(); ++i)
                pa->grad.data[i] += n.grad.data[i] * pb->val.data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.numel(); ++i)
                pb->grad.data[i] += n.grad.data[i] * pa->val.data[i];
        }
    });
}

template <class S>
VarT<S> scale(VarT<S> a, S c) {
    TensorT<S> y = a.val();
    for (auto& v : y.data) v *= c;
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "scale", [pa, c](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i) pa->grad.data[i] += c * n.grad.data[i];
    });
}

template <class S>
VarT<S> add_scalar(VarT<S> a, S c) {
    TensorT<S> y = a.val();
    for (auto& v : y.data) v += c;
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "add_scalar", [pa](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i) pa->grad.data[i] += n.grad.data[i];
    });
}

template <class S>
VarT<S> abs_(VarT<S> a) {
    TensorT<S> y = a.val();
    for (auto& v : y.data) v = std::fabs(v);
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "abs", [pa](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i) {
            S x = pa->val.data[i];
            S s = x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0));
            pa->grad.data[i] += s * n.grad.data[i];
        }
    });
}

template <class S>
VarT<S> log_(VarT<S> a) {
    TensorT<S> y = a.val();
    for (auto& v : y.data) v = std::log(v);
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "log", [pa](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i)
            pa->grad.data[i] += n.grad.data[i] / pa->val.data[i];
    });
}

// Pass-through gradient inside [lo, hi] (boundary included), zero outside.
template <class S>
VarT<S> clamp_(VarT<S> a, S lo, S hi) {
    TensorT<S> y = a.val();
    for (auto& v : y.data) v = std::min(hi, std::max(lo, v));
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "clamp", [pa, lo, hi](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i) {
            S x = pa->val.data[i];
            if (x >= lo && x <= hi) pa->grad.data[i] += n.grad.data[i];
        }
    });
}

template <class S>
VarT<S> silu(VarT<S> a) {
    TensorT<S> y = a.val();
    for (auto& v : y.data) {
        S s = v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : [&] {
            S e = std::exp(v);
            return e / (S(1) + e);
        }();
        v = v * s;
    }
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "silu", [pa](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i) {
            S x = pa->val.data[i];
            S s;
            if (x >= S(0)) {
                s = S(1) / (S(1) + std::exp(-x));
            } else {
                S e = std::exp(x);
                s = e / (S(1) + e);
            }
            pa->grad.data[i] += n.grad.data[i] * s * (S(1) + x * (S(1) - s));
        }
    });
}

// Sigmoid activation for mask heads: output kept strictly inside (0, 1) by a
// tiny clamp so downstream logs stay finite even for saturated inputs.
template <class S>
VarT<S> sigmoid(VarT<S> a) {
    const S cl = S(1e-6);
    TensorT<S> y = a.val();
    for (auto& v : y.data) {
        S s;
        if (v >= S(0)) {
            s = S(1) / (S(1) + std::exp(-v));
        } else {
            S e = std::exp(v);
            s = e / (S(1) + e);
        }
        v = std::min(S(1) - cl, std::max(cl, s));
    }
    auto pa = a.node();
    return detail::new_op<S>(std::move(y), {pa}, "sigmoid", [pa, cl](NodeT<S>& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.numel(); ++i) {
            S x = pa->val.data[i];
            S s;
            if (x >= S(0)) {
                s = S(1) / (S(1) + std::exp(-x));
            } else {
                S e = std::exp(x);
                s = e / (S(1) + e);
            }
            if (s < cl || s > S(1) - cl) continue;  // clamp engaged: locally constant
            pa->grad.data[i] += n.grad.data[i] * s * (S(1) - s);
        }
    });
}

// ---- reductions ----

template <class S>
VarT<S> sum_all(VarT<S> a) {
    S acc = 0;
    for (S v : a.val().data) acc += v;
    auto pa = a.node();
    TensorT<S> y({1}, acc);
    return detail::new_op<S>(std::move(y), {pa}, "sum", [pa](NodeT<S>& n) {
        pa->ensure_grad();
        S g = n.grad.data[0];
        for (auto& v : pa->grad.data) v += g;
    });
}

template <class S>
VarT<S> mean_all(VarT<S> a) {
    size_t cnt = a.val().numel();
    return scale(sum_all(a), S(1) / static_cast<S>(cnt));
}

// ---- conv / norm / linear ----

namespace detail {

// fused 3x3 row pass over padded rows r0..r2: o[i] += sum of nine taps.
// free functions with __restrict__ keep these loops vectorizable regardless
// of the calling context
template <class S>
inline void fma_rows3(S* __restrict o, const S* __restrict r0, const S* __restrict r1,
                      const S* __restrict r2, const S* w, int n) {
    S w00 = w[0], w01 = w[1], w02 = w[2], w10 = w[3], w11 = w[4];
    S w12 = w[5], w20 = w[6], w21 = w[7], w22 = w[8];
    for (int i = 0; i < n; ++i)
        o[i] += w00 * r0[i] + w01 * r0[i + 1] + w02 * r0[i + 2] + w10 * r1[i] +
                w11 * r1[i + 1] + w12 * r1[i + 2] + w20 * r2[i] + w21 * r2[i + 1] +
                w22 * r2[i + 2];
}

template <class S>
inline void fma_row1(S* __restrict o, const S* __restrict r, S w, int n) {
    for (int i = 0; i < n; ++i) o[i] += w * r[i];
}

// dot product of an output-gradient plane with one shifted padded-input tap.
// eight fixed partial-sum lanes form independent chains with a deterministic
// final reduction order; the ragged tail stays out of the hot loop
template <class S>
inline S conv_tap_dot(const S* __restrict gp, const S* __restrict xp, int Ho, int Wo, int Wp) {
    S lanes[8] = {};
    S rest = S(0);
    for (int yy = 0; yy < Ho; ++yy) {
        const S* grow = gp + static_cast<size_t>(yy) * Wo;
        const S* xr = xp + static_cast<size_t>(yy) * Wp;
        int xx = 0;
        for (; xx + 8 <= Wo; xx += 8)
            for (int l = 0; l < 8; ++l) lanes[l] += grow[xx + l] * xr[xx + l];
        for (; xx < Wo; ++xx) rest += grow[xx] * xr[xx];
    }
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
           ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + rest;
}

// all nine 3x3 weight-gradient taps in a single pass over the gradient plane:
// the per-tap lane accumulators are independent chains, so the nine fused
// multiply-adds per element pipeline instead of serializing on one register
template <class S>
inline void conv_dw9(const S* __restrict gp, const S* __restrict xp, S* __restrict dwk, int Ho,
                     int Wo, int Wp) {
    S acc[9][8] = {};
    S rest[9] = {};
    for (int yy = 0; yy < Ho; ++yy) {
        const S* grow = gp + static_cast<size_t>(yy) * Wo;
        const S* x0 = xp + static_cast<size_t>(yy) * Wp;
        const S* x1 = x0 + Wp;
        const S* x2 = x1 + Wp;
        int xx = 0;
        for (; xx + 8 <= Wo; xx += 8) {
            for (int l = 0; l < 8; ++l) {
                S gv = grow[xx + l];
                acc[0][l] += gv * x0[xx + l];
                acc[1][l] += gv * x0[xx + l + 1];
                acc[2][l] += gv * x0[xx + l + 2];
                acc[3][l] += gv * x1[xx + l];
                acc[4][l] += gv * x1[xx + l + 1];
                acc[5][l] += gv * x1[xx + l + 2];
                acc[6][l] += gv * x2[xx + l];
                acc[7][l] += gv * x2[xx + l + 1];
                acc[8][l] += gv * x2[xx + l + 2];
            }
        }
        for (; xx < Wo; ++xx) {
            S gv = grow[xx];
            rest[0] += gv * x0[xx];
            rest[1] += gv * x0[xx + 1];
            rest[2] += gv * x0[xx + 2];
            rest[3] += gv * x1[xx];
            rest[4] += gv * x1[xx + 1];
            rest[5] += gv * x1[xx + 2];
            rest[6] += gv * x2[xx];
            rest[7] += gv * x2[xx + 1];
            rest[8] += gv * x2[xx + 2];
        }
    }
    for (int t = 0; t < 9; ++t)
        dwk[t] += ((acc[t][0] + acc[t][1]) + (acc[t][2] + acc[t][3])) +
                  ((acc[t][4] + acc[t][5]) + (acc[t][6] + acc[t][7])) + rest[t];
}

}  // namespace detail

// x {Ci,H,W}, w {Co,Ci,k,k}, b {Co} -> {Co, H+2p-k+1, W+2p-k+1}, zero padding
template <class S>
VarT<S> conv2d(VarT<S> x, VarT<S> w, VarT<S> b, int pad) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    const auto& bv = b.val();
    check(xv.ndim() == 3, "conv2d: input must be rank 3, got " + shape_str(xv));
    check(wv.ndim() == 4, "conv2d: weight must be rank 4, got " + shape_str(wv));
    int Ci = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int Co = wv.dim(0), k = wv.dim(2);
    check(wv.dim(1) == Ci, "conv2d: input channels " + std::to_string(Ci) +
                               " != weight in-channels " + std::to_string(wv.dim(1)));
    check(wv.dim(3) == k, "conv2d: kernel must be square, got " + shape_str(wv));
    check(k == 1 || k == 3, "conv2d: kernel size must be 1 or 3");
    check(pad == 0 || pad == 1, "conv2d: pad must be 0 or 1");
    check(bv.ndim() == 1 && bv.dim(0) == Co,
          "conv2d: bias shape " + shape_str(bv) + " != out channels " + std::to_string(Co));
    int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    check(Ho >= 1 && Wo >= 1, "conv2d: output would be empty for input " + shape_str(xv));

    // zero-padded input planes let the tap loops run branch-free over full
    // rows, which vectorizes without reassociating any per-output sum
    int Hp = H + 2 * pad, Wp = W + 2 * pad;
    TensorT<S> xpad({Ci, Hp, Wp});
    for (int ci = 0; ci < Ci; ++ci) {
        const S* xp = xv.plane(ci);
        S* pp = xpad.plane(ci);
        for (int yy = 0; yy < H; ++yy)
            std::copy(xp + static_cast<size_t>(yy) * W, xp + static_cast<size_t>(yy + 1) * W,
                      pp + static_cast<size_t>(yy + pad) * Wp + pad);
    }

    TensorT<S> y({Co, Ho, Wo});
    for (int co = 0; co < Co; ++co) {
        S* o = y.plane(co);
        S bias = bv.data[co];
        for (size_t i = 0, e = static_cast<size_t>(Ho) * Wo; i < e; ++i) o[i] = bias;
        for (int ci = 0; ci < Ci; ++ci) {
            const S* P = xpad.plane(ci);
            const S* wk = wv.data.data() + ((static_cast<size_t>(co) * Ci + ci) * k) * k;
            for (int yy = 0; yy < Ho; ++yy) {
                const S* r0 = P + static_cast<size_t>(yy) * Wp;
                S* orow = o + static_cast<size_t>(yy) * Wo;
                if (k == 3)
                    detail::fma_rows3(orow, r0, r0 + Wp, r0 + 2 * Wp, wk, Wo);
                else
                    detail::fma_row1(orow, r0, wk[0], Wo);
            }
        }
    }

    auto px = x.node();
    auto pw = w.node();
    auto pb = b.node();
    auto back = [px, pw, pb, Ci, H, W, Co, k, pad, Ho, Wo](NodeT<S>& n) {
        const TensorT<S>& g = n.grad;
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int co = 0; co < Co; ++co) {
                const S* gp = g.data.data() + static_cast<size_t>(co) * Ho * Wo;
                S acc = 0;
                for (size_t i = 0, e = static_cast<size_t>(Ho) * Wo; i < e; ++i) acc += gp[i];
                pb->grad.data[co] += acc;
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            int Hp = H + 2 * pad, Wp = W + 2 * pad;
            TensorT<S> xpad({Ci, Hp, Wp});
            for (int ci = 0; ci < Ci; ++ci) {
                const S* xp = px->val.plane(ci);
                S* pp = xpad.plane(ci);
                for (int yy = 0; yy < H; ++yy)
                    std::copy(xp + static_cast<size_t>(yy) * W,
                              xp + static_cast<size_t>(yy + 1) * W,
                              pp + static_cast<size_t>(yy + pad) * Wp + pad);
            }
            for (int co = 0; co < Co; ++co) {
                const S* gp = g.plane(co);
                for (int ci = 0; ci < Ci; ++ci) {
                    const S* P = xpad.plane(ci);
                    S* dwk = pw->grad.data.data() + ((static_cast<size_t>(co) * Ci + ci) * k) * k;
                    if (k == 3)
                        detail::conv_dw9(gp, P, dwk, Ho, Wo, Wp);
                    else
                        dwk[0] += detail::conv_tap_dot(gp, P, Ho, Wo, Wp);
                }
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            // correlation of the output gradient, zero-padded by k-1, with
            // the 180-degree flipped kernel
            int m = k - 1;
            int Hg = Ho + 2 * m, Wg = Wo + 2 * m;
            TensorT<S> gpad({1, Hg, Wg});
            for (int co = 0; co < Co; ++co) {
                const S* gp = g.plane(co);
                S* gpp = gpad.plane(0);
                std::fill(gpad.data.begin(), gpad.data.end(), S(0));
                for (int yy = 0; yy < Ho; ++yy)
                    std::copy(gp + static_cast<size_t>(yy) * Wo,
                              gp + static_cast<size_t>(yy + 1) * Wo,
                              gpp + static_cast<size_t>(yy + m) * Wg + m);
                for (int ci = 0; ci < Ci; ++ci) {
                    S* dxp = px->grad.plane(ci);
                    const S* wk =
                        pw->val.data.data() + ((static_cast<size_t>(co) * Ci + ci) * k) * k;
                    if (k == 3) {
                        // rows in descending ky order with taps reversed
                        // within each row: the 180-degree kernel flip
                        S wrev[9] = {wk[2], wk[1], wk[0], wk[5], wk[4],
                                     wk[3], wk[8], wk[7], wk[6]};
                        for (int yy = 0; yy < H; ++yy) {
                            const S* q2 = gpp + static_cast<size_t>(yy + pad + 2) * Wg + pad;
                            const S* q1 = q2 - Wg;
                            const S* q0 = q1 - Wg;
                            detail::fma_rows3(dxp + static_cast<size_t>(yy) * W, q2, q1, q0,
                                              wrev, W);
                        }
                    } else {
                        S w0 = wk[0];
                        for (int yy = 0; yy < H; ++yy) {
                            int gy = yy + pad;
                            if (gy >= Ho) break;
                            const S* q = gpp + static_cast<size_t>(gy) * Wg;
                            S* dxr = dxp + static_cast<size_t>(yy) * W;
                            int xe = std::min(W, Wo - pad);
                            for (int xx = 0; xx < xe; ++xx) dxr[xx] += w0 * q[xx + pad];
                        }
                    }
                }
            }
        }
    };
    return detail::new_op<S>(std::move(y), {px, pw, pb}, "conv2d", back);
}

// x {C,H,W}, per-group standardization over (C/G)*H*W entries, then per-channel
// affine. eps defaults to 1e-5.
template <class S>
VarT<S> group_norm(VarT<S> x, int groups, VarT<S> gamma, VarT<S> beta, S eps = S(1e-5)) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "group_norm: input must be rank 3, got " + shape_str(xv));
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    check(groups >= 1 && C % groups == 0,
          "group_norm: channels " + std::to_string(C) + " not divisible by groups " +
              std::to_string(groups));
    check(gamma.val().numel() == static_cast<size_t>(C) &&
              beta.val().numel() == static_cast<size_t>(C),
          "group_norm: affine params must have C entries");
    int cpg = C / groups;
    size_t plane = static_cast<size_t>(H) * W;
    size_t gsize = plane * cpg;

    TensorT<S> xhat({C, H, W});
    std::vector<S> inv_std(groups);
    for (int g = 0; g < groups; ++g) {
        const S* xs = xv.data.data() + static_cast<size_t>(g) * gsize;
        S mu = 0;
        for (size_t i = 0; i < gsize; ++i) mu += xs[i];
        mu /= static_cast<S>(gsize);
        S var = 0;
        for (size_t i = 0; i < gsize; ++i) {
            S d = xs[i] - mu;
            var += d * d;
        }
        var /= static_cast<S>(gsize);
        S is = S(1) / std::sqrt(var + eps);
        inv_std[g] = is;
        S* xh = xhat.data.data() + static_cast<size_t>(g) * gsize;
        for (size_t i = 0; i < gsize; ++i) xh[i] = (xs[i] - mu) * is;
    }
    TensorT<S> y({C, H, W});
    for (int c = 0; c < C; ++c) {
        S ga = gamma.val().data[c], be = beta.val().data[c];
        const S* xh = xhat.plane(c);
        S* yp = y.plane(c);
        for (size_t i = 0; i < plane; ++i) yp[i] = ga * xh[i] + be;
    }

    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    auto back = [px, pg, pb, xhat, inv_std, C, groups, cpg, plane, gsize](NodeT<S>& n) {
        const TensorT<S>& g = n.grad;
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (int c = 0; c < C; ++c) {
                const S* gp = g.plane(c);
                const S* xh = xhat.plane(c);
                S acc = 0;
                for (size_t i = 0; i < plane; ++i) acc += gp[i] * xh[i];
                pg->grad.data[c] += acc;
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int c = 0; c < C; ++c) {
                const S* gp = g.plane(c);
                S acc = 0;
                for (size_t i = 0; i < plane; ++i) acc += gp[i];
                pb->grad.data[c] += acc;
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (int grp = 0; grp < groups; ++grp) {
                // ghat = upstream grad scaled by each channel's gamma
                S m1 = 0, m2 = 0;
                for (int j = 0; j < cpg; ++j) {
                    int c = grp * cpg + j;
                    S ga = pg->val.data[c];
                    const S* gp = g.plane(c);
                    const S* xh = xhat.plane(c);
                    for (size_t i = 0; i < plane; ++i) {
                        S gh = gp[i] * ga;
                        m1 += gh;
                        m2 += gh * xh[i];
                    }
                }
                m1 /= static_cast<S>(gsize);
                m2 /= static_cast<S>(gsize);
                S is = inv_std[grp];
                for (int j = 0; j < cpg; ++j) {
                    int c = grp * cpg + j;
                    S ga = pg->val.data[c];
                    const S* gp = g.plane(c);
                    const S* xh = xhat.plane(c);
                    S* dx = px->grad.plane(c);
                    for (size_t i = 0; i < plane; ++i) {
                        S gh = gp[i] * ga;
                        dx[i] += is * (gh - m1 - xh[i] * m2);
                    }
                }
            }
        }
    };
    return detail::new_op<S>(std::move(y), {px, pg, pb}, "group_norm", back);
}

// x {n}, W {m,n}, b {m} -> {m}
template <class S>
VarT<S> linear(VarT<S> x, VarT<S> W, VarT<S> b) {
    const auto& xv = x.val();
    const auto& wv = W.val();
    check(xv.ndim() == 1, "linear: input must be rank 1, got " + shape_str(xv));
    check(wv.ndim() == 2, "linear: weight must be rank 2, got " + shape_str(wv));
    int n = xv.dim(0), m = wv.dim(0);
    check(wv.dim(1) == n, "linear: input size " + std::to_string(n) + " != weight columns " +
                              std::to_string(wv.dim(1)));
    check(b.val().numel() == static_cast<size_t>(m), "linear: bias size mismatch");
    TensorT<S> y({m});
    for (int i = 0; i < m; ++i) {
        const S* wr = wv.data.data() + static_cast<size_t>(i) * n;
        S acc = b.val().data[i];
        for (int j = 0; j < n; ++j) acc += wr[j] * xv.data[j];
        y.data[i] = acc;
    }
    auto px = x.node();
    auto pw = W.node();
    auto pb = b.node();
    return detail::new_op<S>(std::move(y), {px, pw, pb}, "linear", [px, pw, pb, n, m](NodeT<S>& nd) {
        const S* g = nd.grad.data.data();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < m; ++i) pb->grad.data[i] += g[i];
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int i = 0; i < m; ++i) {
                S* dwr = pw->grad.data.data() + static_cast<size_t>(i) * n;
                S gi = g[i];
                for (int j = 0; j < n; ++j) dwr[j] += gi * px->val.data[j];
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const S* wr = pw->val.data.data() + static_cast<size_t>(i) * n;
                S gi = g[i];
                for (int j = 0; j < n; ++j) px->grad.data[j] += gi * wr[j];
            }
        }
    });
}

// Standardizes a rank-1 vector over its entries, then elementwise affine.
template <class S>
VarT<S> layer_norm_vec(VarT<S> x, VarT<S> gamma, VarT<S> beta, S eps = S(1e-5)) {
    const auto& xv = x.val();
    check(xv.ndim() == 1, "layer_norm_vec: input must be rank 1");
    int n = xv.dim(0);
    check(gamma.val().numel() == static_cast<size_t>(n) &&
              beta.val().numel() == static_cast<size_t>(n),
          "layer_norm_vec: affine size mismatch");
    S mu = 0;
    for (S v : xv.data) mu += v;
    mu /= static_cast<S>(n);
    S var = 0;
    for (S v : xv.data) var += (v - mu) * (v - mu);
    var /= static_cast<S>(n);
    S is = S(1) / std::sqrt(var + eps);
    TensorT<S> xhat({n});
    for (int i = 0; i < n; ++i) xhat.data[i] = (xv.data[i] - mu) * is;
    TensorT<S> y({n});
    for (int i = 0; i < n; ++i) y.data[i] = gamma.val().data[i] * xhat.data[i] + beta.val().data[i];
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    return detail::new_op<S>(std::move(y), {px, pg, pb}, "layer_norm_vec",
                             [px, pg, pb, xhat, is, n](NodeT<S>& nd) {
        const S* g = nd.grad.data.data();
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (int i = 0; i < n; ++i) pg->grad.data[i] += g[i] * xhat.data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < n; ++i) pb->grad.data[i] += g[i];
        }
        if (px->requires_grad) {
            px->ensure_grad();
            S m1 = 0, m2 = 0;
            for (int i = 0; i < n; ++i) {
                S gh = g[i] * pg->val.data[i];
                m1 += gh;
                m2 += gh * xhat.data[i];
            }
            m1 /= static_cast<S>(n);
            m2 /= static_cast<S>(n);
            for (int i = 0; i < n; ++i) {
                S gh = g[i] * pg->val.data[i];
                px->grad.data[i] += is * (gh - m1 - xhat.data[i] * m2);
            }
        }
    });
}

// x {C,H,W} + v {C}: the same bias at every spatial position of a channel.
template <class S>
VarT<S> add_channel_bias(VarT<S> x, VarT<S> v) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "add_channel_bias: input must be rank 3");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    check(v.val().numel() == static_cast<size_t>(C), "add_channel_bias: bias size mismatch");
    size_t plane = static_cast<size_t>(H) * W;
    TensorT<S> y = xv;
    for (int c = 0; c < C; ++c) {
        S b = v.val().data[c];
        S* yp = y.plane(c);
        for (size_t i = 0; i < plane; ++i) yp[i] += b;
    }
    auto px = x.node();
    auto pv = v.node();
    return detail::new_op<S>(std::move(y), {px, pv}, "add_channel_bias",
                             [px, pv, C, plane](NodeT<S>& nd) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < nd.grad.numel(); ++i) px->grad.data[i] += nd.grad.data[i];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int c = 0; c < C; ++c) {
                const S* gp = nd.grad.plane(c);
                S acc = 0;
                for (size_t i = 0; i < plane; ++i) acc += gp[i];
                pv->grad.data[c] += acc;
            }
        }
    });
}

template <class S>
VarT<S> concat_channels(const std::vector<VarT<S>>& xs) {
    check(!xs.empty(), "concat_channels: empty input list");
    int H = xs[0].val().dim(1), W = xs[0].val().dim(2);
    int C = 0;
    for (const auto& x : xs) {
        check(x.val().ndim() == 3, "concat_channels: inputs must be rank 3");
        check(x.val().dim(1) == H && x.val().dim(2) == W,
              "concat_channels: spatial mismatch " + shape_str(x.val()));
        C += x.val().dim(0);
    }
    TensorT<S> y({C, H, W});
    size_t off = 0;
    std::vector<NodePtr<S>> parents;
    for (const auto& x : xs) {
        std::copy(x.val().data.begin(), x.val().data.end(), y.data.begin() + off);
        off += x.val().numel();
        parents.push_back(x.node());
    }
    auto ps = parents;
    return detail::new_op<S>(std::move(y), std::move(parents), "concat_channels",
                             [ps](NodeT<S>& nd) {
        size_t off = 0;
        for (auto& p : ps) {
            size_t n = p->val.numel();
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < n; ++i) p->grad.data[i] += nd.grad.data[off + i];
            }
            off += n;
        }
    });
}

template <class S>
VarT<S> concat_channels(VarT<S> a, VarT<S> b) {
    return concat_channels(std::vector<VarT<S>>{a, b});
}

// 2x2 mean pooling; requires even spatial dims.
template <class S>
VarT<S> avg_pool2(VarT<S> x) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "avg_pool2: input must be rank 3");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    check(H % 2 == 0 && W % 2 == 0, "avg_pool2: spatial dims must be even, got " + shape_str(xv));
    int Ho = H / 2, Wo = W / 2;
    TensorT<S> y({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const S* xp = xv.plane(c);
        S* yp = y.plane(c);
        for (int oy = 0; oy < Ho; ++oy) {
            const S* r0 = xp + static_cast<size_t>(2 * oy) * W;
            const S* r1 = r0 + W;
            for (int ox = 0; ox < Wo; ++ox) {
                yp[static_cast<size_t>(oy) * Wo + ox] =
                    (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * S(0.25);
            }
        }
    }
    auto px = x.node();
    return detail::new_op<S>(std::move(y), {px}, "avg_pool2", [px, C, H, W, Ho, Wo](NodeT<S>& nd) {
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const S* gp = nd.grad.plane(c);
            S* dx = px->grad.plane(c);
            for (int oy = 0; oy < Ho; ++oy) {
                S* r0 = dx + static_cast<size_t>(2 * oy) * W;
                S* r1 = r0 + W;
                for (int ox = 0; ox < Wo; ++ox) {
                    S g = gp[static_cast<size_t>(oy) * Wo + ox] * S(0.25);
                    r0[2 * ox] += g;
                    r0[2 * ox + 1] += g;
                    r1[2 * ox] += g;
                    r1[2 * ox + 1] += g;
                }
            }
        }
    });
}

namespace detail {
// bilinear 2x upsample weights, half-pixel-center convention, edge clamped
inline void up2_taps(int o, int n_in, int& i0, int& i1, double& w1) {
    double src = (o + 0.5) * 0.5 - 0.5;
    double f = std::floor(src);
    i0 = static_cast<int>(f);
    i1 = i0 + 1;
    w1 = src - f;
    if (i0 < 0) i0 = 0;
    if (i1 > n_in - 1) i1 = n_in - 1;
}
}  // namespace detail

template <class S>
VarT<S> upsample_bilinear2(VarT<S> x) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "upsample_bilinear2: input must be rank 3");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int Ho = 2 * H, Wo = 2 * W;
    TensorT<S> y({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const S* xp = xv.plane(c);
        S* yp = y.plane(c);
        for (int oy = 0; oy < Ho; ++oy) {
            int y0, y1;
            double wy;
            detail::up2_taps(oy, H, y0, y1, wy);
            const S* rx0 = xp + static_cast<size_t>(y0) * W;
            const S* rx1 = xp + static_cast<size_t>(y1) * W;
            for (int ox = 0; ox < Wo; ++ox) {
                int x0, x1;
                double wx;
                detail::up2_taps(ox, W, x0, x1, wx);
                double v00 = rx0[x0], v01 = rx0[x1], v10 = rx1[x0], v11 = rx1[x1];
                double top = v00 + wx * (v01 - v00);
                double bot = v10 + wx * (v11 - v10);
                yp[static_cast<size_t>(oy) * Wo + ox] = static_cast<S>(top + wy * (bot - top));
            }
        }
    }
    auto px = x.node();
    return detail::new_op<S>(std::move(y), {px}, "upsample_bilinear2",
                             [px, C, H, W, Ho, Wo](NodeT<S>& nd) {
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const S* gp = nd.grad.plane(c);
            S* dx = px->grad.plane(c);
            for (int oy = 0; oy < Ho; ++oy) {
                int y0, y1;
                double wy;
                detail::up2_taps(oy, H, y0, y1, wy);
                for (int ox = 0; ox < Wo; ++ox) {
                    int x0, x1;
                    double wx;
                    detail::up2_taps(ox, W, x0, x1, wx);
                    S g = gp[static_cast<size_t>(oy) * Wo + ox];
                    dx[static_cast<size_t>(y0) * W + x0] += static_cast<S>((1 - wy) * (1 - wx)) * g;
                    dx[static_cast<size_t>(y0) * W + x1] += static_cast<S>((1 - wy) * wx) * g;
                    dx[static_cast<size_t>(y1) * W + x0] += static_cast<S>(wy * (1 - wx)) * g;
                    dx[static_cast<size_t>(y1) * W + x1] += static_cast<S>(wy * wx) * g;
                }
            }
        }
    });
}

template <class S>
VarT<S> global_avg_pool(VarT<S> x) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "global_avg_pool: input must be rank 3");
    int C = xv.dim(0);
    size_t plane = static_cast<size_t>(xv.dim(1)) * xv.dim(2);
    TensorT<S> y({C});
    for (int c = 0; c < C; ++c) {
        const S* xp = xv.plane(c);
        S acc = 0;
        for (size_t i = 0; i < plane; ++i) acc += xp[i];
        y.data[c] = acc / static_cast<S>(plane);
    }
    auto px = x.node();
    return detail::new_op<S>(std::move(y), {px}, "global_avg_pool", [px, C, plane](NodeT<S>& nd) {
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
            S g = nd.grad.data[c] / static_cast<S>(plane);
            S* dx = px->grad.plane(c);
            for (size_t i = 0; i < plane; ++i) dx[i] += g;
        }
    });
}

namespace detail {
inline std::vector<double> gaussian_taps(double sigma) {
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        w[i + radius] = v;
        sum += v;
    }
    for (auto& v : w) v /= sum;
    return w;
}

// separable pass along one axis with coordinate clamping; axis 0 = y, 1 = x
template <class S>
void blur_axis(const S* in, S* out, int C, int H, int W, const std::vector<double>& taps,
               int axis) {
    int radius = (static_cast<int>(taps.size()) - 1) / 2;
    size_t plane = static_cast<size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const S* xp = in + c * plane;
        S* yp = out + c * plane;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int k = -radius; k <= radius; ++k) {
                    int yy = y, xx = x;
                    if (axis == 0)
                        yy = std::min(H - 1, std::max(0, y + k));
                    else
                        xx = std::min(W - 1, std::max(0, x + k));
                    acc += taps[k + radius] * xp[static_cast<size_t>(yy) * W + xx];
                }
                yp[static_cast<size_t>(y) * W + x] = static_cast<S>(acc);
            }
        }
    }
}

// adjoint of blur_axis: scatter with the same taps and clamping
template <class S>
void blur_axis_adjoint(const S* g, S* out, int C, int H, int W, const std::vector<double>& taps,
                       int axis) {
    int radius = (static_cast<int>(taps.size()) - 1) / 2;
    size_t plane = static_cast<size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const S* gp = g + c * plane;
        S* op = out + c * plane;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                S gv = gp[static_cast<size_t>(y) * W + x];
                if (gv == S(0)) continue;
                for (int k = -radius; k <= radius; ++k) {
                    int yy = y, xx = x;
                    if (axis == 0)
                        yy = std::min(H - 1, std::max(0, y + k));
                    else
                        xx = std::min(W - 1, std::max(0, x + k));
                    op[static_cast<size_t>(yy) * W + xx] += static_cast<S>(taps[k + radius]) * gv;
                }
            }
        }
    }
}

template <class S>
TensorT<S> gaussian_blur_plain(const TensorT<S>& x, double sigma) {
    check(x.ndim() == 3, "gaussian_blur: input must be rank 3");
    check(sigma > 0, "gaussian_blur: sigma must be positive");
    auto taps = gaussian_taps(sigma);
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    TensorT<S> tmp({C, H, W}), y({C, H, W});
    blur_axis(x.data.data(), tmp.data.data(), C, H, W, taps, 1);
    blur_axis(tmp.data.data(), y.data.data(), C, H, W, taps, 0);
    return y;
}
}  // namespace detail

// Separable Gaussian blur, radius ceil(3*sigma), normalized kernel, edge
// clamped. The kernel is fixed (host value), only the image is differentiated.
template <class S>
VarT<S> gaussian_blur(VarT<S> x, double sigma) {
    TensorT<S> y = detail::gaussian_blur_plain(x.val(), sigma);
    auto px = x.node();
    auto taps = detail::gaussian_taps(sigma);
    int C = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2);
    return detail::new_op<S>(std::move(y), {px}, "gaussian_blur",
                             [px, taps, C, H, W](NodeT<S>& nd) {
        px->ensure_grad();
        TensorT<S> tmp({C, H, W});
        detail::blur_axis_adjoint(nd.grad.data.data(), tmp.data.data(), C, H, W, taps, 0);
        detail::blur_axis_adjoint(tmp.data.data(), px->grad.data.data(), C, H, W, taps, 1);
    });
}

// Fixed 3x3 filter applied per channel with replicate padding (coordinates
// clamped to the image). The kernel is a host constant; only x is
// differentiated. Row-major kernel, k[ky * 3 + kx], taps at offset -1..1.
template <class S>
VarT<S> filter3x3_replicate(VarT<S> x, const std::array<double, 9>& k) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "filter3x3_replicate: input must be rank 3");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    TensorT<S> y({C, H, W});
    for (int c = 0; c < C; ++c) {
        const S* xp = xv.plane(c);
        S* yp = y.plane(c);
        for (int yy = 0; yy < H; ++yy) {
            for (int xx = 0; xx < W; ++xx) {
                // positive and negative taps accumulate separately so that a
                // constant input cancels exactly for sign-balanced kernels
                double pos = 0, neg = 0;
                for (int ky = -1; ky <= 1; ++ky) {
                    int sy = std::min(H - 1, std::max(0, yy + ky));
                    for (int kx = -1; kx <= 1; ++kx) {
                        int sx = std::min(W - 1, std::max(0, xx + kx));
                        double kv = k[(ky + 1) * 3 + (kx + 1)];
                        double v = xp[static_cast<size_t>(sy) * W + sx];
                        if (kv > 0)
                            pos += kv * v;
                        else if (kv < 0)
                            neg += -kv * v;
                    }
                }
                yp[static_cast<size_t>(yy) * W + xx] = static_cast<S>(pos - neg);
            }
        }
    }
    auto px = x.node();
    return detail::new_op<S>(std::move(y), {px}, "filter3x3_replicate",
                             [px, k, C, H, W](NodeT<S>& nd) {
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const S* gp = nd.grad.plane(c);
            S* dx = px->grad.plane(c);
            for (int yy = 0; yy < H; ++yy) {
                for (int xx = 0; xx < W; ++xx) {
                    S gv = gp[static_cast<size_t>(yy) * W + xx];
                    if (gv == S(0)) continue;
                    for (int ky = -1; ky <= 1; ++ky) {
                        int sy = std::min(H - 1, std::max(0, yy + ky));
                        for (int kx = -1; kx <= 1; ++kx) {
                            int sx = std::min(W - 1, std::max(0, xx + kx));
                            dx[static_cast<size_t>(sy) * W + sx] +=
                                static_cast<S>(k[(ky + 1) * 3 + (kx + 1)]) * gv;
                        }
                    }
                }
            }
        }
    });
}

// Per spatial position, scales the channel vector to unit norm:
// y_c = x_c / sqrt(sum_c x_c^2 + eps)
template <class S>
VarT<S> channel_unit_normalize(VarT<S> x, S eps = S(1e-8)) {
    const auto& xv = x.val();
    check(xv.ndim() == 3, "channel_unit_normalize: input must be rank 3");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    size_t plane = static_cast<size_t>(H) * W;
    TensorT<S> y({C, H, W});
    TensorT<S> inv_n({1, H, W});
    for (size_t p = 0; p < plane; ++p) {
        S acc = eps;
        for (int c = 0; c < C; ++c) {
            S v = xv.data[c * plane + p];
            acc += v * v;
        }
        S in = S(1) / std::sqrt(acc);
        inv_n.data[p] = in;
        for (int c = 0; c < C; ++c) y.data[c * plane + p] = xv.data[c * plane + p] * in;
    }
    auto px = x.node();
    auto yv = y;
    return detail::new_op<S>(std::move(y), {px}, "channel_unit_normalize",
                             [px, yv, inv_n, C, plane](NodeT<S>& nd) {
        px->ensure_grad();
        for (size_t p = 0; p < plane; ++p) {
            S dot = 0;
            for (int c = 0; c < C; ++c) dot += nd.grad.data[c * plane + p] * yv.data[c * plane + p];
            S in = inv_n.data[p];
            for (int c = 0; c < C; ++c) {
                px->grad.data[c * plane + p] +=
                    in * (nd.grad.data[c * plane + p] - yv.data[c * plane + p] * dot);
            }
        }
    });
}

// Mean binary cross-entropy against a constant target map. Predictions are
// clamped to [1e-7, 1-1e-7] inside the op; gradients stop at the clamp.
template <class S>
VarT<S> bce_mean(VarT<S> pred, const TensorT<S>& target) {
    const auto& pv = pred.val();
    check(pv.same_shape(target), "bce_mean: shape mismatch " + shape_str(pv) + " vs " +
                                     shape_str(target));
    const S cl = S(1e-7);
    size_t n = pv.numel();
    double acc = 0;
    for (size_t i = 0; i < n; ++i) {
        S p = std::min(S(1) - cl, std::max(cl, pv.data[i]));
        S t = target.data[i];
        acc += -(static_cast<double>(t) * std::log(static_cast<double>(p)) +
                 (1.0 - static_cast<double>(t)) * std::log(1.0 - static_cast<double>(p)));
    }
    TensorT<S> y({1}, static_cast<S>(acc / static_cast<double>(n)));
    auto pp = pred.node();
    return detail::new_op<S>(std::move(y), {pp}, "bce_mean", [pp, target, cl, n](NodeT<S>& nd) {
        pp->ensure_grad();
        S g = nd.grad.data[0] / static_cast<S>(n);
        for (size_t i = 0; i < n; ++i) {
            S praw = pp->val.data[i];
            if (praw < cl || praw > S(1) - cl) continue;  // clamped: no gradient
            S t = target.data[i];
            pp->grad.data[i] += g * (praw - t) / (praw * (S(1) - praw));
        }
    });
}

}  // namespace opq
