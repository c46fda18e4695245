#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opq/imageio.hpp"
#include "opq/maskops.hpp"
#include "opq/nn.hpp"
#include "opq/scene.hpp"

namespace opq {

// Mask refinement head. Input is the 7-channel stack [opacified-or-opaque
// patch (3), transparent patch (3), rough mask (1)]; output is a soft
// per-pixel mask that tightens the rough one to the actual object footprint.
// Purely convolutional, so any spatial size works.

template <class S>
struct MrmNetT {
    Conv2dT<S> c1, c2, c3, head;
    GroupNormT<S> gn1, gn2, gn3;

    VarT<S> forward(VarT<S> x) const {
        check(x.val().ndim() == 3 && x.val().dim(0) == 7,
              "mrm: input must be 7xHxW, got " + shape_str(x.val()));
        VarT<S> h = silu(gn1.fwd(c1.fwd(x)));
        h = silu(gn2.fwd(c2.fwd(h)));
        h = silu(gn3.fwd(c3.fwd(h)));
        return sigmoid(head.fwd(h));
    }
};

template <class S>
struct MrmT {
    ParamSetT<S> params;
    MrmNetT<S> net;
};

using Mrm = MrmT<float>;

template <class S>
MrmT<S> make_mrm(uint64_t seed) {
    MrmT<S> m;
    Rng rng(mix64(seed, 0x3a5cull));
    ParamSetT<S>& ps = m.params;
    m.net.c1 = make_conv2d(ps, "c1", 7, 64, 3, 1, rng);
    m.net.gn1 = make_group_norm(ps, "gn1", 64, 32);
    m.net.c2 = make_conv2d(ps, "c2", 64, 32, 3, 1, rng);
    m.net.gn2 = make_group_norm(ps, "gn2", 32, 32);
    m.net.c3 = make_conv2d(ps, "c3", 32, 16, 3, 1, rng);
    m.net.gn3 = make_group_norm(ps, "gn3", 16, 16);
    m.net.head = make_conv2d(ps, "head", 16, 1, 1, 0, rng);
    return m;
}

// channel stack [img_a(3), img_tr(3), mask(1)]; all spatial sizes must match
template <class S>
TensorT<S> mrm_input(const TensorT<S>& img_a, const TensorT<S>& img_tr, const Mask& m) {
    check(img_a.ndim() == 3 && img_a.dim(0) == 3, "mrm_input: img_a must be 3xHxW");
    check(img_tr.same_shape(img_a), "mrm_input: image shape mismatch");
    check(m.height == img_a.dim(1) && m.width == img_a.dim(2), "mrm_input: mask size mismatch");
    int H = img_a.dim(1), W = img_a.dim(2);
    TensorT<S> x({7, H, W});
    size_t plane = static_cast<size_t>(H) * W;
    std::copy(img_a.data.begin(), img_a.data.end(), x.data.begin());
    std::copy(img_tr.data.begin(), img_tr.data.end(), x.data.begin() + 3 * plane);
    for (size_t i = 0; i < plane; ++i) x.data[6 * plane + i] = static_cast<S>(m.v[i]);
    return x;
}

template <class S>
VarT<S> mrm_forward(const MrmT<S>& model, const TensorT<S>& img_a, const TensorT<S>& img_tr,
                    const Mask& m) {
    return model.net.forward(make_const(mrm_input(img_a, img_tr, m)));
}

// Training objective: mean binary cross-entropy against the clean mask plus a
// penalty on mid-range values, lambda_mid * mean(M*(1-M)). Both terms are
// per-pixel means. The penalty vanishes exactly on binary outputs and peaks
// at 0.5, pushing the soft mask toward hard decisions.
template <class S>
struct MrmLossPartsT {
    VarT<S> total;
    double bce = 0;
    double mid = 0;  // before lambda
};

template <class S>
MrmLossPartsT<S> mrm_loss_parts(VarT<S> m_refine, const Mask& m_star, double lambda_mid) {
    const TensorT<S>& mv = m_refine.val();
    check(mv.ndim() == 3 && mv.dim(0) == 1, "mrm_loss: soft mask must be 1xHxW");
    check(mv.dim(1) == m_star.height && mv.dim(2) == m_star.width, "mrm_loss: size mismatch");
    check(mask_is_binary(m_star), "mrm_loss: target must be binary");
    check(lambda_mid >= 0, "mrm_loss: lambda_mid must be >= 0");
    MrmLossPartsT<S> out;
    VarT<S> bce = bce_mean(m_refine, mask_to_tensor(m_star).template cast<S>());
    VarT<S> one = make_const(TensorT<S>(mv.shape, S(1)));
    VarT<S> mid = mean_all(mul(m_refine, sub(one, m_refine)));
    out.bce = static_cast<double>(bce.val().data[0]);
    out.mid = static_cast<double>(mid.val().data[0]);
    out.total = add(bce, scale(mid, static_cast<S>(lambda_mid)));
    return out;
}

template <class S>
VarT<S> mrm_loss(VarT<S> m_refine, const Mask& m_star, double lambda_mid) {
    return mrm_loss_parts(m_refine, m_star, lambda_mid).total;
}

// Inference cleanup: threshold at 0.5, drop connected components that never
// touch the segmentation prior, then morphological close and open.
Mask binarize_mask(const Mask& m_refine, const Mask& m_seg);

// Per-pixel selection: mask 1 takes the generated pixel, mask 0 keeps the
// original bit-for-bit. Idempotent under repeated application.
Tensor blend(const Tensor& img_pred, const Tensor& img_tr, const Mask& m_hat);

struct MrmTrainConfig {
    double lr = 1e-4;
    int batch_size = 16;
    int epochs = 60;
    double lambda_mid = 0.1;
    double weight_decay = 1e-2;
    uint64_t seed = 1;
    std::string out_dir;  // when nonempty, writes mrm.ckpt, train_log.csv, iou_report.csv
};

struct MrmTrainResult {
    bool aborted = false;  // hit a non-finite loss; model restored to last good state
    int iterations = 0;
    Csv log;         // iteration, lr, bce, mid_penalty, loss
    Csv iou_report;  // index, seed, iou (held-out samples)
    double mean_iou = 0;
    std::string checkpoint_path;
};

// Supervised training on rendered pairs: the input mask channel is the
// ground-truth mask corrupted by augment_mask under a per-sample seed, the
// target is the clean mask. The holdout set is scored after training with the
// same corruption protocol: refine, binarize against the corrupted mask, and
// report IoU versus the clean one.
MrmTrainResult train_mrm(const std::vector<ScenePair>& dataset,
                         const std::vector<ScenePair>& holdout, Mrm& model,
                         const MrmTrainConfig& cfg);

}  // namespace opq
