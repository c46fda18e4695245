#include "opq/opacify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "opq/checkpoint.hpp"
#include "opq/optim.hpp"

namespace opq {

int norm_groups(int channels) {
    check(channels >= 1, "norm_groups: bad channel count");
    return std::gcd(channels, 8);
}

std::vector<double> time_embedding(int t, int T) {
    check(T >= 1, "time_embedding: bad T");
    check(t >= 1 && t <= T, "time_embedding: t out of range");
    std::vector<double> e(kTimeCodeDim);
    double u = static_cast<double>(t) / T;
    int half = kTimeCodeDim / 2;
    for (int i = 0; i < half; ++i) {
        double om = std::pow(1000.0, static_cast<double>(i) / (half - 1));
        e[2 * i] = std::sin(u * om);
        e[2 * i + 1] = std::cos(u * om);
    }
    return e;
}

Tensor encode_latent(const Tensor& img) {
    check(img.ndim() == 3, "encode_latent: image must be rank 3");
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (H % 2 == 0 && W % 2 == 0) return avg_pool2(make_const(img)).val();
    int Hp = H + H % 2, Wp = W + W % 2;
    Tensor p({C, Hp, Wp});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Hp; ++y)
            for (int x = 0; x < Wp; ++x)
                p.at3(c, y, x) = img.at3(c, std::min(y, H - 1), std::min(x, W - 1));
    return avg_pool2(make_const(std::move(p))).val();
}

Tensor decode_latent(const Tensor& lat, int out_h, int out_w) {
    check(lat.ndim() == 3, "decode_latent: latent must be rank 3");
    Tensor y = upsample_bilinear2(make_const(lat)).val();
    if (out_h == 0 && out_w == 0) return y;
    check(out_h >= 1 && out_h <= y.dim(1) && out_w >= 1 && out_w <= y.dim(2),
          "decode_latent: crop size out of range");
    Tensor c({y.dim(0), out_h, out_w});
    for (int ch = 0; ch < y.dim(0); ++ch)
        for (int yy = 0; yy < out_h; ++yy)
            for (int xx = 0; xx < out_w; ++xx) c.at3(ch, yy, xx) = y.at3(ch, yy, xx);
    return c;
}

Tensor cond_plane(const Mask& m, CondMode mode, int h, int w) {
    check(h >= 1 && w >= 1, "cond_plane: bad target size");
    check(m.height % h == 0 && m.width % w == 0 && m.height / h == m.width / w,
          "cond_plane: mask size is not an integer multiple of the target");
    int f = m.height / h;
    if (mode == CondMode::mask) {
        Mask d = f == 1 ? m : downsample_soft(m, f);
        return mask_to_tensor(d);
    }
    Tensor out({1, h, w});
    int y0 = m.height, y1 = -1, x0 = m.width, x1 = -1;
    double cy = 0, cx = 0, cnt = 0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x) >= 0.5f) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                cy += y;
                cx += x;
                cnt += 1;
            }
    if (cnt == 0) return out;  // empty mask: zero plane
    if (mode == CondMode::bbox) {
        for (int y = y0 / f; y <= y1 / f; ++y)
            for (int x = x0 / f; x <= x1 / f; ++x) out.at3(0, y, x) = 1.0f;
        return out;
    }
    // point: Gaussian bump at the centroid, half-pixel-center coordinate map
    cy = (cy / cnt + 0.5) / f - 0.5;
    cx = (cx / cnt + 0.5) / f - 0.5;
    double sigma = 0.1 * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            out.at3(0, y, x) = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    return out;
}

double warmup_lr(long long iteration, double base_lr, int warmup_iters) {
    check(iteration >= 1, "warmup_lr: iterations are 1-based");
    check(base_lr > 0, "warmup_lr: lr must be positive");
    if (warmup_iters <= 0 || iteration >= warmup_iters) return base_lr;
    return base_lr * static_cast<double>(iteration) / warmup_iters;
}

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

OpacifierTrainResult train_opacifier(const std::vector<ScenePair>& dataset, int epochs,
                                     Opacifier& model, const ScheduleTable& table,
                                     const OpacifierTrainConfig& cfg) {
    check(!dataset.empty(), "train_opacifier: empty dataset");
    check(epochs >= 1, "train_opacifier: epochs must be >= 1");
    check(cfg.batch_size >= 1, "train_opacifier: batch size must be >= 1");
    int n = static_cast<int>(dataset.size());
    int bs = std::min(cfg.batch_size, n);
    int batches = n / bs;
    OpacifierTrainResult res;
    res.log.header = {"iteration", "lr", "L_LDM", "L_aux", "gated_fraction"};
    AdamWT<float> opt(model.params, 1e-5f, static_cast<float>(cfg.weight_decay));
    auto last_good = snapshot_params(model.params);
    long long iter = 0;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int ep = 0; ep < epochs && !res.aborted; ++ep) {
        Rng shuffle_rng(mix64(cfg.seed, 0x0dffull, static_cast<uint64_t>(ep)));
        for (int i = n - 1; i >= 1; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
        for (int b = 0; b < batches; ++b) {
            ++iter;
            opt.lr = static_cast<float>(warmup_lr(iter, cfg.lr, cfg.warmup_iters));
            std::vector<ScenePair> batch;
            batch.reserve(bs);
            for (int j = 0; j < bs; ++j) batch.push_back(dataset[order[b * bs + j]]);
            BatchLossT<float> losses;
            bool ok = true;
            try {
                losses = total_train_loss(batch, model, cfg.loss, table,
                                          mix64(cfg.seed, static_cast<uint64_t>(iter)));
                ok = std::isfinite(static_cast<double>(losses.total.val().data[0]));
                if (ok) {
                    // these weights just produced a finite loss; they are the
                    // rollback point if the step that follows blows up
                    last_good = snapshot_params(model.params);
                    model.params.zero_grads();
                    backward(losses.total);
                    opt.step();
                    ok = params_finite(model.params);
                }
            } catch (const std::exception&) {
                ok = false;
            }
            if (!ok) {
                restore_params(model.params, last_good);
                res.aborted = true;
                break;
            }
            res.log.rows.push_back({std::to_string(iter), fmt_g(static_cast<double>(opt.lr)),
                                    fmt_g(losses.ldm), fmt_g(losses.aux),
                                    fmt_g(losses.gated_fraction)});
        }
    }
    res.iterations = static_cast<int>(res.log.rows.size());
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        res.checkpoint_path = cfg.out_dir + "/opacifier.ckpt";
        save_checkpoint(res.checkpoint_path, model.params);
        write_csv(cfg.out_dir + "/train_log.csv", res.log);
    }
    return res;
}

Tensor opacify_patch(const Tensor& img_tr, const Mask& mask, const Opacifier& model,
                     const ScheduleTable& table, const SolverConfig& scfg, uint64_t seed,
                     CondMode mode) {
    check(img_tr.ndim() == 3 && img_tr.dim(0) == 3, "opacify_patch: image must be 3xHxW");
    int H = img_tr.dim(1), W = img_tr.dim(2);
    check(H % 2 == 0 && W % 2 == 0, "opacify_patch: dims must be even");
    check(mask.height == H && mask.width == W, "opacify_patch: mask size mismatch");
    int h = H / 2, w = W / 2;
    Rng rng(seed);
    Tensor z = Tensor::random_normal({3, h, w}, rng);
    Tensor ctx = encode_latent(img_tr);
    Tensor cp = cond_plane(mask, mode, h, w);
    Tensor c_val = model.cond.forward(make_const(img_tr)).val();
    size_t plane = static_cast<size_t>(h) * w;
    auto eps_fn = [&](const Tensor& zt, int t) {
        Tensor x({7, h, w});
        std::copy(zt.data.begin(), zt.data.end(), x.data.begin());
        std::copy(ctx.data.begin(), ctx.data.end(), x.data.begin() + 3 * plane);
        std::copy(cp.data.begin(), cp.data.end(), x.data.begin() + 6 * plane);
        return model.net.forward(make_const(std::move(x)), t, make_const(c_val)).val();
    };
    Tensor zf = sample(eps_fn, z, table, scfg);
    return clamp_(decode_latent(make_const(std::move(zf))), 0.0f, 1.0f).val();
}

}  // namespace opq
