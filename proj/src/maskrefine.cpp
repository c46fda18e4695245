#include "opq/mrm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "opq/checkpoint.hpp"
#include "opq/optim.hpp"

namespace opq {

Mask binarize_mask(const Mask& m_refine, const Mask& m_seg) {
    check(m_refine.same_size(m_seg), "binarize_mask: size mismatch");
    check(mask_is_binary(m_seg), "binarize_mask: segmentation prior must be binary");
    Mask thr = threshold(m_refine, 0.5f);
    Components cc = connected_components(thr);
    std::vector<char> keep(cc.comps.size() + 1, 0);
    for (size_t i = 0; i < thr.size(); ++i)
        if (cc.labels[i] != 0 && m_seg.v[i] == 1.0f) keep[cc.labels[i]] = 1;
    Mask filtered(thr.width, thr.height);
    for (size_t i = 0; i < thr.size(); ++i)
        if (keep[cc.labels[i]]) filtered.v[i] = 1.0f;
    return morphology(morphology(filtered, MorphOp::close), MorphOp::open);
}

Tensor blend(const Tensor& img_pred, const Tensor& img_tr, const Mask& m_hat) {
    check(img_pred.ndim() == 3 && img_pred.dim(0) == 3, "blend: images must be 3xHxW");
    check(img_pred.same_shape(img_tr), "blend: image shape mismatch");
    check(m_hat.height == img_pred.dim(1) && m_hat.width == img_pred.dim(2),
          "blend: mask size mismatch");
    check(mask_is_binary(m_hat), "blend: mask must be binary");
    Tensor out = img_tr;
    size_t plane = m_hat.size();
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < plane; ++i)
            if (m_hat.v[i] == 1.0f) out.data[c * plane + i] = img_pred.data[c * plane + i];
    return out;
}

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

MrmTrainResult train_mrm(const std::vector<ScenePair>& dataset,
                         const std::vector<ScenePair>& holdout, Mrm& model,
                         const MrmTrainConfig& cfg) {
    check(!dataset.empty(), "train_mrm: empty dataset");
    check(cfg.epochs >= 1, "train_mrm: epochs must be >= 1");
    check(cfg.batch_size >= 1, "train_mrm: batch size must be >= 1");
    check(cfg.lr > 0 && cfg.lambda_mid >= 0, "train_mrm: bad config");
    int n = static_cast<int>(dataset.size());
    int bs = std::min(cfg.batch_size, n);
    int batches = n / bs;
    MrmTrainResult res;
    res.log.header = {"iteration", "lr", "bce", "mid_penalty", "loss"};
    AdamW opt(model.params, static_cast<float>(cfg.lr), static_cast<float>(cfg.weight_decay));
    auto last_good = snapshot_params(model.params);
    long long iter = 0;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int ep = 0; ep < cfg.epochs && !res.aborted; ++ep) {
        Rng shuffle_rng(mix64(cfg.seed, 0x3bcull, static_cast<uint64_t>(ep)));
        for (int i = n - 1; i >= 1; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
        for (int b = 0; b < batches; ++b) {
            ++iter;
            uint64_t step_seed = mix64(cfg.seed, static_cast<uint64_t>(iter));
            VarT<float> acc;
            double bce_sum = 0, mid_sum = 0;
            bool ok = true;
            try {
                for (int j = 0; j < bs; ++j) {
                    const ScenePair& pair = dataset[order[b * bs + j]];
                    Rng rng(mix64(step_seed, pair.spec.seed));
                    Mask m_star = mask_union(pair.masks);
                    Mask m_aug = augment_mask(m_star, rng.bits());
                    VarT<float> m_ref =
                        mrm_forward(model, pair.image_op, pair.image_tr, m_aug);
                    auto parts = mrm_loss_parts(m_ref, m_star, cfg.lambda_mid);
                    bce_sum += parts.bce;
                    mid_sum += parts.mid;
                    acc = acc.defined() ? add(acc, parts.total) : parts.total;
                }
                VarT<float> loss = scale(acc, 1.0f / static_cast<float>(bs));
                ok = std::isfinite(static_cast<double>(loss.val().data[0]));
                if (ok) {
                    last_good = snapshot_params(model.params);
                    model.params.zero_grads();
                    backward(loss);
                    opt.step();
                    ok = params_finite(model.params);
                }
                if (ok)
                    res.log.rows.push_back(
                        {std::to_string(iter), fmt_g(cfg.lr), fmt_g(bce_sum / bs),
                         fmt_g(mid_sum / bs),
                         fmt_g(static_cast<double>(loss.val().data[0]))});
            } catch (const std::exception&) {
                ok = false;
            }
            if (!ok) {
                restore_params(model.params, last_good);
                res.aborted = true;
                break;
            }
        }
    }
    res.iterations = static_cast<int>(res.log.rows.size());
    res.iou_report.header = {"index", "seed", "iou"};
    double iou_sum = 0;
    for (size_t i = 0; i < holdout.size(); ++i) {
        const ScenePair& pair = holdout[i];
        Rng rng(mix64(cfg.seed, 0x10bull, static_cast<uint64_t>(i)));
        Mask m_star = mask_union(pair.masks);
        Mask m_aug = augment_mask(m_star, rng.bits());
        VarT<float> m_ref = mrm_forward(model, pair.image_op, pair.image_tr, m_aug);
        Mask m_hat = binarize_mask(mask_from_tensor(m_ref.val()), m_aug);
        double iou = mask_iou(m_hat, m_star);
        iou_sum += iou;
        res.iou_report.rows.push_back(
            {std::to_string(i), std::to_string(pair.spec.seed), fmt_g(iou)});
    }
    res.mean_iou = holdout.empty() ? 0.0 : iou_sum / static_cast<double>(holdout.size());
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        res.checkpoint_path = cfg.out_dir + "/mrm.ckpt";
        save_checkpoint(res.checkpoint_path, model.params);
        write_csv(cfg.out_dir + "/train_log.csv", res.log);
        write_csv(cfg.out_dir + "/iou_report.csv", res.iou_report);
    }
    return res;
}

}  // namespace opq
