#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "opq/imageio.hpp"
#include "opq/maskops.hpp"
#include "opq/nn.hpp"
#include "opq/scene.hpp"
#include "opq/schedule.hpp"
#include "opq/unipc.hpp"

namespace opq {

// Conditional denoiser that turns transparent-object patches into opaque
// renderings. Works in a 2x area-pooled RGB latent; the model input is the
// 7-channel concatenation [z_t(3), encoded transparent image(3), conditioning
// plane(1)] and the output is the predicted noise.

// ---------------------------------------------------------------------------
// Latent codec: encode = 2x2 area average (linear), decode = bilinear 2x
// upsample. Channels are preserved. A constant image is a fixed point of the
// round trip.

template <class S>
VarT<S> encode_latent(VarT<S> img) {
    check(img.val().ndim() == 3, "encode_latent: image must be rank 3");
    check(img.val().dim(1) % 2 == 0 && img.val().dim(2) % 2 == 0,
          "encode_latent: graph path needs even dims, got " + shape_str(img.val()));
    return avg_pool2(img);
}

template <class S>
VarT<S> decode_latent(VarT<S> lat) {
    check(lat.val().ndim() == 3, "decode_latent: latent must be rank 3");
    return upsample_bilinear2(lat);
}

// Tensor conveniences. encode pads odd dims by edge replication first; decode
// crops to (out_h, out_w) when given, so decode(encode(x), H, W) always
// matches x's shape.
Tensor encode_latent(const Tensor& img);
Tensor decode_latent(const Tensor& lat, int out_h = 0, int out_w = 0);

// ---------------------------------------------------------------------------
// Model. Two latent resolutions with a skip connection; residual blocks of
// group_norm + silu + conv3x3. Time and condition enter every block as
// per-channel additive biases, so the conditioning pathway is spatially
// uniform by construction (the single-token attention limit).

struct OpacifierArch {
    int base = 32;  // channel width at latent resolution; the down path doubles it
    int emb = 64;   // time/condition embedding width
    int T = 1000;   // schedule length the time code normalizes against
};

// largest power-of-two divisor of channels, capped at 8
int norm_groups(int channels);

// 32-d sinusoid code of t/T over 16 geometric frequencies in [1, 1000]
std::vector<double> time_embedding(int t, int T);

inline constexpr int kTimeCodeDim = 32;

template <class S>
struct ResBlockT {
    GroupNormT<S> gn1, gn2;
    Conv2dT<S> conv1, conv2;
    LinearT<S> time_proj, cond_proj;

    VarT<S> fwd(VarT<S> x, VarT<S> time_bias, VarT<S> cond_bias) const {
        VarT<S> h = conv1.fwd(silu(gn1.fwd(x)));
        h = add_channel_bias(h, time_bias);
        h = add_channel_bias(h, cond_bias);
        h = conv2.fwd(silu(gn2.fwd(h)));
        return add(x, h);
    }
};

template <class S>
ResBlockT<S> make_res_block(ParamSetT<S>& ps, const std::string& prefix, int c, int emb,
                            Rng& rng) {
    ResBlockT<S> b;
    b.gn1 = make_group_norm(ps, prefix + ".gn1", c, norm_groups(c));
    b.conv1 = make_conv2d(ps, prefix + ".conv1", c, c, 3, 1, rng);
    b.time_proj = make_linear(ps, prefix + ".time_proj", emb, c, rng);
    b.cond_proj = make_linear(ps, prefix + ".cond_proj", emb, c, rng);
    b.gn2 = make_group_norm(ps, prefix + ".gn2", c, norm_groups(c));
    b.conv2 = make_conv2d(ps, prefix + ".conv2", c, c, 3, 1, rng);
    return b;
}

template <class S>
struct DenoiserNetT {
    int T = 1000;
    Conv2dT<S> stem;  // 7 -> base
    ResBlockT<S> rb1, rb2, rb3;
    Conv2dT<S> down, up;
    GroupNormT<S> head_gn;
    Conv2dT<S> head;  // base -> 3, zero-initialized
    LinearT<S> tmlp1, tmlp2;

    // Per-channel bias vectors for the three blocks, in block order. These are
    // the only places time and condition touch the spatial net.
    std::vector<VarT<S>> time_biases(int t) const {
        auto e = time_embedding(t, T);
        TensorT<S> te({static_cast<int>(e.size())});
        for (size_t i = 0; i < e.size(); ++i) te.data[i] = static_cast<S>(e[i]);
        VarT<S> v = tmlp2.fwd(silu(tmlp1.fwd(make_const(std::move(te)))));
        return {rb1.time_proj.fwd(v), rb2.time_proj.fwd(v), rb3.time_proj.fwd(v)};
    }
    std::vector<VarT<S>> cond_biases(VarT<S> c) const {
        return {rb1.cond_proj.fwd(c), rb2.cond_proj.fwd(c), rb3.cond_proj.fwd(c)};
    }

    VarT<S> forward_with_biases(VarT<S> x, const std::vector<VarT<S>>& tb,
                                const std::vector<VarT<S>>& cb) const {
        check(tb.size() == 3 && cb.size() == 3, "forward_with_biases: need 3 bias pairs");
        check(x.val().ndim() == 3 && x.val().dim(0) == 7,
              "forward_with_biases: input must be 7 channels, got " + shape_str(x.val()));
        VarT<S> h1 = rb1.fwd(stem.fwd(x), tb[0], cb[0]);
        VarT<S> h2 = rb2.fwd(down.fwd(avg_pool2(h1)), tb[1], cb[1]);
        VarT<S> u = add(up.fwd(upsample_bilinear2(h2)), h1);
        VarT<S> h3 = rb3.fwd(u, tb[2], cb[2]);
        return head.fwd(silu(head_gn.fwd(h3)));
    }
    VarT<S> forward(VarT<S> x, int t, VarT<S> c) const {
        return forward_with_biases(x, time_biases(t), cond_biases(c));
    }
};

// Image encoder producing one 64-d token per image: three conv+pool stages,
// global average pool, a 2-layer mapper, normalization, linear projection.
template <class S>
struct CondEncoderT {
    Conv2dT<S> c1, c2, c3;
    LinearT<S> m1, m2;
    LayerNormVecT<S> norm;
    LinearT<S> proj;

    VarT<S> forward(VarT<S> img) const {
        check(img.val().ndim() == 3 && img.val().dim(0) == 3,
              "cond encoder: image must be 3xHxW, got " + shape_str(img.val()));
        check(img.val().dim(1) % 8 == 0 && img.val().dim(2) % 8 == 0,
              "cond encoder: dims must be divisible by 8, got " + shape_str(img.val()));
        VarT<S> h = silu(c1.fwd(avg_pool2(img)));
        h = silu(c2.fwd(avg_pool2(h)));
        h = silu(c3.fwd(avg_pool2(h)));
        VarT<S> v = global_avg_pool(h);
        v = m2.fwd(silu(m1.fwd(v)));
        return proj.fwd(norm.fwd(v));
    }
};

template <class S>
struct OpacifierT {
    OpacifierArch arch;
    ParamSetT<S> params;
    DenoiserNetT<S> net;
    CondEncoderT<S> cond;
};

using Opacifier = OpacifierT<float>;

template <class S>
OpacifierT<S> make_opacifier(uint64_t seed, const OpacifierArch& arch = {}) {
    check(arch.base >= 1 && arch.emb >= 1 && arch.T >= 1, "make_opacifier: bad arch");
    OpacifierT<S> m;
    m.arch = arch;
    m.net.T = arch.T;
    Rng rng(mix64(seed, 0x0bacu));
    ParamSetT<S>& ps = m.params;
    int b = arch.base, e = arch.emb;
    m.net.stem = make_conv2d(ps, "net.stem", 7, b, 3, 1, rng);
    m.net.rb1 = make_res_block(ps, "net.rb1", b, e, rng);
    m.net.down = make_conv2d(ps, "net.down", b, 2 * b, 3, 1, rng);
    m.net.rb2 = make_res_block(ps, "net.rb2", 2 * b, e, rng);
    m.net.up = make_conv2d(ps, "net.up", 2 * b, b, 3, 1, rng);
    m.net.rb3 = make_res_block(ps, "net.rb3", b, e, rng);
    m.net.head_gn = make_group_norm(ps, "net.head_gn", b, norm_groups(b));
    m.net.head = make_conv2d(ps, "net.head", b, 3, 3, 1, rng, /*zero_init=*/true);
    m.net.tmlp1 = make_linear(ps, "net.tmlp1", kTimeCodeDim, e, rng);
    m.net.tmlp2 = make_linear(ps, "net.tmlp2", e, e, rng);
    m.cond.c1 = make_conv2d(ps, "cond.c1", 3, b, 3, 1, rng);
    m.cond.c2 = make_conv2d(ps, "cond.c2", b, 2 * b, 3, 1, rng);
    m.cond.c3 = make_conv2d(ps, "cond.c3", 2 * b, e, 3, 1, rng);
    m.cond.m1 = make_linear(ps, "cond.m1", e, e, rng);
    m.cond.m2 = make_linear(ps, "cond.m2", e, e, rng);
    m.cond.norm = make_layer_norm_vec(ps, "cond.norm", e);
    m.cond.proj = make_linear(ps, "cond.proj", e, e, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Model input assembly.

enum class CondMode { mask, bbox, point };

// Conditioning plane at latent resolution (h, w): the soft-downsampled mask,
// a filled bounding-box rectangle (full-res bounds mapped by halving, ends
// inclusive), or a Gaussian bump at the mask centroid with sigma = 0.1 * w.
// An empty mask yields a zero plane in bbox/point mode.
Tensor cond_plane(const Mask& m, CondMode mode, int h, int w);

template <class S>
VarT<S> build_model_input(VarT<S> z_t, VarT<S> img_tr, const Mask& m, CondMode mode) {
    const TensorT<S>& zv = z_t.val();
    const TensorT<S>& iv = img_tr.val();
    check(zv.ndim() == 3 && zv.dim(0) == 3, "build_model_input: z_t must be 3xhxw");
    check(iv.ndim() == 3 && iv.dim(0) == 3, "build_model_input: image must be 3xHxW");
    check(iv.dim(1) == 2 * zv.dim(1) && iv.dim(2) == 2 * zv.dim(2),
          "build_model_input: image " + shape_str(iv) + " is not 2x the latent " + shape_str(zv));
    check(m.height == iv.dim(1) && m.width == iv.dim(2), "build_model_input: mask size mismatch");
    VarT<S> enc = encode_latent(img_tr);
    VarT<S> cp = make_const(cond_plane(m, mode, zv.dim(1), zv.dim(2)).template cast<S>());
    return concat_channels(std::vector<VarT<S>>{z_t, enc, cp});
}

// ---------------------------------------------------------------------------
// Losses.

// mean over all elements of (eps_hat - eps)^2
template <class S>
VarT<S> noise_mse(VarT<S> eps_hat, const TensorT<S>& eps) {
    VarT<S> d = sub(eps_hat, make_const(eps));
    return mean_all(mul(d, d));
}

// z_pred = (z_t - sigma_t * eps_hat) / a_t, the inverse of the forward map
template <class S>
VarT<S> predict_z0(VarT<S> z_t, VarT<S> eps_hat, int t, const ScheduleTable& table) {
    check(z_t.val().same_shape(eps_hat.val()), "predict_z0: shape mismatch");
    S a = static_cast<S>(table.a_at(t));
    S sig = static_cast<S>(table.sigma_at(t));
    return scale(sub(z_t, scale(eps_hat, sig)), S(1) / a);
}

namespace detail {

inline constexpr uint64_t kPerceptualSeed = 77;

template <class S>
struct PerceptualPyramid {
    VarT<S> w1, b1, w2, b2, w3, b3;
};

// Frozen random conv filter bank; the fixed seed makes the feature space a
// constant of the build.
template <class S>
const PerceptualPyramid<S>& perceptual_pyramid() {
    static const PerceptualPyramid<S> p = [] {
        Rng rng(kPerceptualSeed);
        PerceptualPyramid<S> q;
        q.w1 = make_const(fan_in_uniform<S>({12, 3, 3, 3}, 27, rng));
        q.b1 = make_const(TensorT<S>({12}));
        q.w2 = make_const(fan_in_uniform<S>({24, 3, 3, 3}, 27, rng));
        q.b2 = make_const(TensorT<S>({24}));
        q.w3 = make_const(fan_in_uniform<S>({32, 3, 3, 3}, 27, rng));
        q.b3 = make_const(TensorT<S>({32}));
        return q;
    }();
    return p;
}

template <class S>
std::vector<VarT<S>> perceptual_features(VarT<S> x) {
    const PerceptualPyramid<S>& p = perceptual_pyramid<S>();
    VarT<S> x2 = avg_pool2(x);
    VarT<S> x4 = avg_pool2(x2);
    return {channel_unit_normalize(silu(conv2d(x, p.w1, p.b1, 1))),
            channel_unit_normalize(silu(conv2d(x2, p.w2, p.b2, 1))),
            channel_unit_normalize(silu(conv2d(x4, p.w3, p.b3, 1)))};
}

// weighted mean over positions of the per-position channel sum of (fx - fy)^2
template <class S>
VarT<S> masked_feature_ssd(VarT<S> fx, VarT<S> fy, const Mask& m, int factor) {
    Mask md = factor == 1 ? m : downsample_soft(m, factor);
    double wsum = 0;
    for (float v : md.v) wsum += v;
    if (wsum <= 0) return make_const(TensorT<S>({1}));
    int C = fx.val().dim(0);
    TensorT<S> w({C, md.height, md.width});
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < md.size(); ++i)
            w.plane(c)[i] = static_cast<S>(md.v[i]);
    VarT<S> d = sub(fx, fy);
    return scale(sum_all(mul(mul(d, d), make_const(std::move(w)))), static_cast<S>(1.0 / wsum));
}

}  // namespace detail

// Feature-space distance inside the mask: three pyramid levels (full, 1/2,
// 1/4 resolution), channel-unit-normalized features, masked mean of squared
// differences per level, summed over levels. Zero for identical inputs or an
// empty mask.
template <class S>
VarT<S> perceptual_surrogate(VarT<S> x, VarT<S> y, const Mask& m) {
    check(x.val().same_shape(y.val()), "perceptual_surrogate: shape mismatch");
    check(x.val().ndim() == 3 && x.val().dim(0) == 3, "perceptual_surrogate: images must be 3xHxW");
    check(x.val().dim(1) % 4 == 0 && x.val().dim(2) % 4 == 0,
          "perceptual_surrogate: dims must be divisible by 4");
    check(m.height == x.val().dim(1) && m.width == x.val().dim(2),
          "perceptual_surrogate: mask size mismatch");
    double msum = 0;
    for (float v : m.v) msum += v;
    if (msum <= 0) return make_const(TensorT<S>({1}));
    auto fx = detail::perceptual_features(x);
    auto fy = detail::perceptual_features(y);
    VarT<S> acc = detail::masked_feature_ssd(fx[0], fy[0], m, 1);
    acc = add(acc, detail::masked_feature_ssd(fx[1], fy[1], m, 2));
    return add(acc, detail::masked_feature_ssd(fx[2], fy[2], m, 4));
}

inline constexpr std::array<double, 9> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<double, 9> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

// log(luminance + 1e-4) as a single plane; expects values in [0, 1]
template <class S>
VarT<S> log_luminance(VarT<S> img) {
    check(img.val().ndim() == 3 && img.val().dim(0) == 3, "log_luminance: image must be 3xHxW");
    TensorT<S> w({1, 3, 1, 1});
    w.data = {S(0.299), S(0.587), S(0.114)};
    VarT<S> y = conv2d(img, make_const(std::move(w)), make_const(TensorT<S>({1})), 0);
    return log_(add_scalar(y, S(1e-4)));
}

// Multi-scale edge-consistency loss in log luminance: per scale s, Gaussian
// smooth at sigma = s/2, Sobel responses with replicated edges, L1 difference
// inside the twice-eroded mask interior normalized by its pixel count; x and
// y terms summed, scales averaged. Replicate padding makes the loss exactly
// zero for constant images even where the mask touches the border.
template <class S>
VarT<S> grad_loss(VarT<S> pred, VarT<S> gt, const Mask& seg,
                  const std::vector<int>& scales = {2, 4, 8}) {
    check(pred.val().same_shape(gt.val()), "grad_loss: shape mismatch");
    check(!scales.empty(), "grad_loss: empty scale list");
    check(seg.height == pred.val().dim(1) && seg.width == pred.val().dim(2),
          "grad_loss: mask size mismatch");
    Mask inner = morphology(morphology(seg, MorphOp::erode), MorphOp::erode);
    double n = 0;
    for (float v : inner.v) n += v;
    if (n <= 0) return make_const(TensorT<S>({1}));
    TensorT<S> w({1, inner.height, inner.width});
    for (size_t i = 0; i < inner.size(); ++i) w.data[i] = static_cast<S>(inner.v[i]);
    VarT<S> wv = make_const(std::move(w));
    VarT<S> lp = log_luminance(pred);
    VarT<S> lg = log_luminance(gt);
    VarT<S> acc;
    for (int s : scales) {
        check(s >= 1, "grad_loss: scales must be positive");
        VarT<S> sp = gaussian_blur(lp, 0.5 * s);
        VarT<S> sg = gaussian_blur(lg, 0.5 * s);
        VarT<S> tx = sum_all(
            mul(abs_(sub(filter3x3_replicate(sp, kSobelX), filter3x3_replicate(sg, kSobelX))), wv));
        VarT<S> ty = sum_all(
            mul(abs_(sub(filter3x3_replicate(sp, kSobelY), filter3x3_replicate(sg, kSobelY))), wv));
        VarT<S> term = scale(add(tx, ty), static_cast<S>(1.0 / n));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, static_cast<S>(1.0 / scales.size()));
}

// Masked absolute difference normalized by the mask pixel count (channels
// are summed, not averaged: a uniform delta on all three channels gives 3*delta)
template <class S>
VarT<S> l1_loss(VarT<S> pred, VarT<S> gt, const Mask& seg) {
    check(pred.val().same_shape(gt.val()), "l1_loss: shape mismatch");
    check(seg.height == pred.val().dim(1) && seg.width == pred.val().dim(2),
          "l1_loss: mask size mismatch");
    double n = 0;
    for (float v : seg.v) n += v;
    if (n <= 0) return make_const(TensorT<S>({1}));
    int C = pred.val().dim(0);
    TensorT<S> w({C, seg.height, seg.width});
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < seg.size(); ++i)
            w.plane(c)[i] = static_cast<S>(seg.v[i]);
    return scale(sum_all(mul(abs_(sub(pred, gt)), make_const(std::move(w)))),
                 static_cast<S>(1.0 / n));
}

// ---------------------------------------------------------------------------
// Training objective.

struct OpacifierLossConfig {
    enum class Variant { lpips, grad, l1, none };
    double lambda_aux = 0.05;  // weight shared by every aux variant
    double gate_tau = 0.3;
    Variant variant = Variant::lpips;
    std::vector<int> grad_scales = {2, 4, 8};
    CondMode cond_mode = CondMode::mask;
};

// The gate compares the zero-based timestep index against tau*T, so tau = 0
// closes the gate at every step and tau = 1 opens it at every step.
inline bool aux_gate_open(int t, double tau, int T) {
    return static_cast<double>(t - 1) < tau * static_cast<double>(T);
}

template <class S>
struct BatchLossT {
    VarT<S> total;
    double ldm = 0;             // noise-prediction term
    double aux = 0;             // mean gated aux term, before lambda
    double gated_fraction = 0;  // fraction of samples with the gate open
};

// Per-sample draws (t, mask-augmentation seed, noise) come from an engine
// keyed by (step_seed, sample seed), which makes the loss independent of
// batch order and lets the no-aux path reproduce the pure noise loss bitwise.
template <class S>
BatchLossT<S> total_train_loss(const std::vector<ScenePair>& batch, const OpacifierT<S>& model,
                               const OpacifierLossConfig& cfg, const ScheduleTable& table,
                               uint64_t step_seed) {
    using Variant = OpacifierLossConfig::Variant;
    check(!batch.empty(), "total_train_loss: empty batch");
    check(cfg.lambda_aux >= 0, "total_train_loss: lambda_aux must be >= 0");
    check(cfg.gate_tau >= 0 && cfg.gate_tau <= 1, "total_train_loss: gate_tau must be in [0,1]");
    int B = static_cast<int>(batch.size());
    VarT<S> mse_acc, aux_acc;
    int open = 0;
    for (const ScenePair& pair : batch) {
        Rng rng(mix64(step_seed, pair.spec.seed));
        int t = rng.uniform_int(1, table.T);
        uint64_t aug_seed = rng.bits();
        TensorT<S> img_op = pair.image_op.template cast<S>();
        TensorT<S> img_tr = pair.image_tr.template cast<S>();
        int h = img_op.dim(1) / 2, w = img_op.dim(2) / 2;
        TensorT<S> eps({3, h, w});
        for (S& v : eps.data) v = static_cast<S>(rng.normal());
        TensorT<S> z0 = encode_latent(make_const(img_op)).val();
        TensorT<S> zt = forward_diffuse(z0, t, eps, table);
        Mask m_star = mask_union(pair.masks);
        Mask m_aug = augment_mask(m_star, aug_seed);
        VarT<S> x_in =
            build_model_input(make_const(zt), make_const(img_tr), m_aug, cfg.cond_mode);
        VarT<S> c = model.cond.forward(make_const(std::move(img_tr)));
        VarT<S> eps_hat = model.net.forward(x_in, t, c);
        VarT<S> mse = noise_mse(eps_hat, eps);
        mse_acc = mse_acc.defined() ? add(mse_acc, mse) : mse;
        bool g = aux_gate_open(t, cfg.gate_tau, table.T);
        if (g) ++open;
        if (g && cfg.variant != Variant::none && cfg.lambda_aux > 0) {
            VarT<S> z_pred = predict_z0(make_const(std::move(zt)), eps_hat, t, table);
            VarT<S> pred = clamp_(decode_latent(z_pred), S(0), S(1));
            VarT<S> gt = make_const(std::move(img_op));
            VarT<S> a;
            switch (cfg.variant) {
                case Variant::lpips: a = perceptual_surrogate(pred, gt, m_star); break;
                case Variant::grad: a = grad_loss(pred, gt, m_star, cfg.grad_scales); break;
                case Variant::l1: a = l1_loss(pred, gt, m_star); break;
                case Variant::none: break;
            }
            aux_acc = aux_acc.defined() ? add(aux_acc, a) : a;
        }
    }
    BatchLossT<S> out;
    VarT<S> ldm = scale(mse_acc, S(1) / static_cast<S>(B));
    out.ldm = static_cast<double>(ldm.val().data[0]);
    out.gated_fraction = static_cast<double>(open) / B;
    if (aux_acc.defined()) {
        out.aux = static_cast<double>(aux_acc.val().data[0]) / B;
        out.total = add(ldm, scale(aux_acc, static_cast<S>(cfg.lambda_aux) / static_cast<S>(B)));
    } else {
        out.total = ldm;
    }
    return out;
}

// the noise-prediction term alone (aux variant "none")
template <class S>
VarT<S> ldm_loss(const std::vector<ScenePair>& batch, const OpacifierT<S>& model,
                 const ScheduleTable& table, uint64_t step_seed) {
    OpacifierLossConfig cfg;
    cfg.variant = OpacifierLossConfig::Variant::none;
    return total_train_loss(batch, model, cfg, table, step_seed).total;
}

// ---------------------------------------------------------------------------
// Training and inference drivers (single precision).

struct OpacifierTrainConfig {
    OpacifierLossConfig loss;
    double lr = 1e-5;
    int warmup_iters = 200;
    int batch_size = 4;
    double weight_decay = 1e-2;
    uint64_t seed = 1;
    std::string out_dir;  // when nonempty, writes opacifier.ckpt and train_log.csv
};

struct OpacifierTrainResult {
    bool aborted = false;  // hit a non-finite loss; model restored to last good state
    int iterations = 0;
    Csv log;  // iteration, lr, L_LDM, L_aux, gated_fraction
    std::string checkpoint_path;
};

// base_lr * iteration / warmup_iters for the ramp, then base_lr (iterations
// are 1-based)
double warmup_lr(long long iteration, double base_lr, int warmup_iters);

OpacifierTrainResult train_opacifier(const std::vector<ScenePair>& dataset, int epochs,
                                     Opacifier& model, const ScheduleTable& table,
                                     const OpacifierTrainConfig& cfg);

// Draws z_init from the seed, holds [encoded image, conditioning plane] and
// the condition token fixed along the trajectory, runs the multistep solver,
// and decodes with a [0,1] clamp. Pure given the model, so callers may run
// patches in parallel.
Tensor opacify_patch(const Tensor& img_tr, const Mask& mask, const Opacifier& model,
                     const ScheduleTable& table, const SolverConfig& scfg, uint64_t seed,
                     CondMode mode = CondMode::mask);

}  // namespace opq
