#include "opq/maskops.hpp"

#include <algorithm>
#include <cmath>

#include "opq/autodiff.hpp"
#include "opq/rng.hpp"

namespace opq {

bool mask_is_binary(const Mask& m) {
    for (float x : m.v)
        if (x != 0.0f && x != 1.0f) return false;
    return true;
}

namespace {

// min (erode) or max (dilate) over the in-image part of the 3x3 window
Mask morph_step(const Mask& m, bool take_max) {
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y) {
        int y0 = std::max(0, y - 1), y1 = std::min(m.height - 1, y + 1);
        for (int x = 0; x < m.width; ++x) {
            int x0 = std::max(0, x - 1), x1 = std::min(m.width - 1, x + 1);
            float acc = m.at(y, x);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx)
                    acc = take_max ? std::max(acc, m.at(yy, xx)) : std::min(acc, m.at(yy, xx));
            out.at(y, x) = acc;
        }
    }
    return out;
}

}  // namespace

Mask mask_union(const std::vector<Mask>& ms) {
    check(!ms.empty(), "mask_union: empty list");
    Mask u = ms[0];
    for (size_t i = 1; i < ms.size(); ++i) {
        check(u.same_size(ms[i]), "mask_union: size mismatch");
        for (size_t j = 0; j < u.size(); ++j) u.v[j] = std::max(u.v[j], ms[i].v[j]);
    }
    return u;
}

double mask_iou(const Mask& a, const Mask& b) {
    check(a.same_size(b), "mask_iou: size mismatch");
    check(mask_is_binary(a) && mask_is_binary(b), "mask_iou: masks must be binary");
    long long inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool pa = a.v[i] == 1.0f, pb = b.v[i] == 1.0f;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask morphology(const Mask& m, MorphOp op) {
    check(mask_is_binary(m), "morphology: mask must be binary");
    switch (op) {
        case MorphOp::erode: return morph_step(m, false);
        case MorphOp::dilate: return morph_step(m, true);
        case MorphOp::open: return morph_step(morph_step(m, false), true);
        case MorphOp::close: return morph_step(morph_step(m, true), false);
    }
    fail("morphology: bad op");
}

Mask gaussian_blur(const Mask& m, double sigma) {
    check(sigma > 0.0, "gaussian_blur: sigma must be positive");
    auto taps = detail::gaussian_taps(sigma);
    Mask tmp(m.width, m.height), out(m.width, m.height);
    detail::blur_axis(m.v.data(), tmp.v.data(), 1, m.height, m.width, taps, 0);
    detail::blur_axis(tmp.v.data(), out.v.data(), 1, m.height, m.width, taps, 1);
    return out;
}

Mask threshold(const Mask& m, float thr) {
    Mask out(m.width, m.height);
    for (size_t i = 0; i < m.size(); ++i) out.v[i] = m.v[i] >= thr ? 1.0f : 0.0f;
    return out;
}

Components connected_components(const Mask& m) {
    check(mask_is_binary(m), "connected_components: mask must be binary");
    Components cc;
    cc.labels.assign(m.size(), 0);
    std::vector<size_t> stack;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            size_t idx = static_cast<size_t>(y) * m.width + x;
            if (m.v[idx] != 1.0f || cc.labels[idx] != 0) continue;
            int label = static_cast<int>(cc.comps.size()) + 1;
            Component c{x, y, x, y, 0};
            cc.labels[idx] = label;
            stack.push_back(idx);
            while (!stack.empty()) {
                size_t p = stack.back();
                stack.pop_back();
                int py = static_cast<int>(p) / m.width, px = static_cast<int>(p) % m.width;
                ++c.area;
                c.x0 = std::min(c.x0, px);
                c.x1 = std::max(c.x1, px);
                c.y0 = std::min(c.y0, py);
                c.y1 = std::max(c.y1, py);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        int ny = py + dy, nx = px + dx;
                        if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
                        size_t n = static_cast<size_t>(ny) * m.width + nx;
                        if (m.v[n] == 1.0f && cc.labels[n] == 0) {
                            cc.labels[n] = label;
                            stack.push_back(n);
                        }
                    }
                }
            }
            cc.comps.push_back(c);
        }
    }
    return cc;
}

Mask downsample_soft(const Mask& m, int factor) {
    check(factor >= 1, "downsample_soft: factor must be >= 1");
    int oh = (m.height + factor - 1) / factor, ow = (m.width + factor - 1) / factor;
    Mask out(ow, oh);
    double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (int ky = 0; ky < factor; ++ky) {
                int y = std::min(m.height - 1, oy * factor + ky);
                for (int kx = 0; kx < factor; ++kx) {
                    int x = std::min(m.width - 1, ox * factor + kx);
                    acc += m.at(y, x);
                }
            }
            out.at(oy, ox) = static_cast<float>(acc * inv);
        }
    }
    return out;
}

std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
    std::vector<std::pair<int, int>> b;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            float c = m.at(y, x);
            bool edge = (y > 0 && m.at(y - 1, x) != c) || (y + 1 < m.height && m.at(y + 1, x) != c) ||
                        (x > 0 && m.at(y, x - 1) != c) || (x + 1 < m.width && m.at(y, x + 1) != c);
            if (edge) b.emplace_back(y, x);
        }
    }
    return b;
}

void fill_disk(Mask& m, double cy, double cx, double radius, float value) {
    int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    int y1 = std::min(m.height - 1, static_cast<int>(std::ceil(cy + radius)));
    int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    int x1 = std::min(m.width - 1, static_cast<int>(std::ceil(cx + radius)));
    double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r2) m.at(y, x) = value;
}

void fill_rect(Mask& m, int y0, int x0, int y1, int x1, float value) {
    y0 = std::max(0, y0);
    x0 = std::max(0, x0);
    y1 = std::min(m.height - 1, y1);
    x1 = std::min(m.width - 1, x1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(y, x) = value;
}

Mask augment_mask(const Mask& m, uint64_t seed) {
    check(mask_is_binary(m), "augment_mask: mask must be binary");
    auto boundary = boundary_pixels(m);
    if (boundary.empty()) return m;

    Rng rng(seed);
    Mask work = m;
    int n_shapes = rng.uniform_int(3, 5);
    for (int i = 0; i < n_shapes; ++i) {
        bool circle = rng.uniform_int(0, 1) == 0;
        float value = rng.uniform_int(0, 1) == 0 ? 1.0f : 0.0f;
        double size = rng.uniform(0.05, 0.07) * m.width;
        auto [cy, cx] = boundary[rng.uniform_int(0, static_cast<int>(boundary.size()) - 1)];
        if (circle) {
            fill_disk(work, cy, cx, size / 2.0, value);
        } else {
            double half = size / 2.0;
            fill_rect(work, static_cast<int>(std::ceil(cy - half)), static_cast<int>(std::ceil(cx - half)),
                      static_cast<int>(std::floor(cy + half)), static_cast<int>(std::floor(cx + half)), value);
        }
    }
    return threshold(gaussian_blur(morphology(work, MorphOp::open), 1.0), 0.5f);
}

namespace {

inline void resize_taps(int o, int n_in, double scale, int& i0, int& i1, double& w1) {
    double src = (o + 0.5) * scale - 0.5;
    double f = std::floor(src);
    i0 = static_cast<int>(f);
    i1 = i0 + 1;
    w1 = src - f;
    if (i0 < 0) i0 = 0;
    if (i1 > n_in - 1) i1 = n_in - 1;
}

}  // namespace

Tensor image_resize(const Tensor& img, int new_h, int new_w, ResizeMode mode) {
    check(img.ndim() == 3, "image_resize: input must be {C,H,W}");
    check(new_h > 0 && new_w > 0, "image_resize: nonpositive target size");
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    double sy = static_cast<double>(H) / new_h, sx = static_cast<double>(W) / new_w;
    Tensor out({C, new_h, new_w});
    for (int c = 0; c < C; ++c) {
        const float* ip = img.plane(c);
        float* op = out.plane(c);
        for (int oy = 0; oy < new_h; ++oy) {
            for (int ox = 0; ox < new_w; ++ox) {
                float val;
                if (mode == ResizeMode::nearest) {
                    int y = std::clamp(static_cast<int>(std::floor((oy + 0.5) * sy)), 0, H - 1);
                    int x = std::clamp(static_cast<int>(std::floor((ox + 0.5) * sx)), 0, W - 1);
                    val = ip[static_cast<size_t>(y) * W + x];
                } else {
                    int y0, y1, x0, x1;
                    double wy, wx;
                    resize_taps(oy, H, sy, y0, y1, wy);
                    resize_taps(ox, W, sx, x0, x1, wx);
                    double v00 = ip[static_cast<size_t>(y0) * W + x0];
                    double v01 = ip[static_cast<size_t>(y0) * W + x1];
                    double v10 = ip[static_cast<size_t>(y1) * W + x0];
                    double v11 = ip[static_cast<size_t>(y1) * W + x1];
                    double top = v00 + wx * (v01 - v00);
                    double bot = v10 + wx * (v11 - v10);
                    val = static_cast<float>(top + wy * (bot - top));
                }
                op[static_cast<size_t>(oy) * new_w + ox] = val;
            }
        }
    }
    return out;
}

Tensor mask_to_tensor(const Mask& m) {
    Tensor t({1, m.height, m.width});
    std::copy(m.v.begin(), m.v.end(), t.data.begin());
    return t;
}

Mask mask_from_tensor(const Tensor& t, int channel) {
    check(t.ndim() == 3, "mask_from_tensor: input must be {C,H,W}");
    check(channel >= 0 && channel < t.dim(0), "mask_from_tensor: bad channel");
    Mask m(t.dim(2), t.dim(1));
    const float* p = t.plane(channel);
    for (size_t i = 0; i < m.size(); ++i) m.v[i] = std::clamp(p[i], 0.0f, 1.0f);
    return m;
}

}  // namespace opq
