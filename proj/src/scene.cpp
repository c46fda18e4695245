#include "opq/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "opq/rng.hpp"

namespace opq {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAlbedo[3] = {231.0 / 255.0, 160.0 / 255.0, 52.0 / 255.0};
constexpr double kTransmittance = 0.85;
constexpr double kMaxOffsetPx = 3.0;
constexpr double kReliefMm = 60.0;       // object surface span behind its nearest point
constexpr double kReliefAspect = 0.55;   // geometric height as a fraction of the radius
constexpr double kAmbient = 0.25;
constexpr double kSpecGain = 0.35;
constexpr double kSpecPower = 96.0;
constexpr double kRefractGain = 22.0;    // px^2, offset per unit height gradient
constexpr int kMinFootprintPx = 12;
constexpr int kPlacementTries = 20;

struct ShapeSample {
    bool inside = false;
    double h = 0.0;            // profile height in [0,1]
    double hx = 0.0, hy = 0.0; // its gradient, 1/px
};

void scale_of(const ObjectSpec& o, double& sx, double& sy) {
    double f = 1.1 + 0.1 * o.deform_level;
    sx = sy = 1.0;
    switch (o.deform) {
        case DeformMode::x: sx = f; sy = 1.0; break;
        case DeformMode::y: sx = 1.0; sy = f; break;
        case DeformMode::xy: sx = f; sy = 1.0 / f; break;
    }
}

// closed-form height profiles; gradients are capped near profile rims where
// the true slope diverges
ShapeSample sample_shape(const ObjectSpec& o, double x, double y) {
    double sx, sy;
    scale_of(o, sx, sy);
    double dx = x - o.cx, dy = y - o.cy;
    ShapeSample s;
    if (o.kind == ShapeKind::rounded_rect) {
        double ax = o.radius * sx, ay = 0.72 * o.radius * sy;
        double rc = 0.35 * std::min(ax, ay);
        double qx = std::fabs(dx) - (ax - rc), qy = std::fabs(dy) - (ay - rc);
        double dist, gx, gy;
        if (qx > 0.0 && qy > 0.0) {
            double hyp = std::sqrt(qx * qx + qy * qy);
            dist = hyp - rc;
            gx = (dx < 0 ? -1.0 : 1.0) * qx / hyp;
            gy = (dy < 0 ? -1.0 : 1.0) * qy / hyp;
        } else if (qx > qy) {
            dist = qx - rc;
            gx = dx < 0 ? -1.0 : 1.0;
            gy = 0.0;
        } else {
            dist = qy - rc;
            gx = 0.0;
            gy = dy < 0 ? -1.0 : 1.0;
        }
        s.inside = dist <= 0.0;
        if (!s.inside) return s;
        s.h = std::clamp(-dist / rc, 0.0, 1.0);
        if (s.h > 0.0 && s.h < 1.0) {
            s.hx = -gx / rc;
            s.hy = -gy / rc;
        }
        return s;
    }
    double ax = o.radius * sx, ay = o.radius * sy;
    double qx = dx / ax, qy = dy / ay;
    double u2 = qx * qx + qy * qy;
    if (o.kind == ShapeKind::disc) {
        s.inside = u2 <= 1.0;
        if (!s.inside) return s;
        s.h = std::sqrt(std::max(0.0, 1.0 - u2));
        double denom = std::max(s.h, 0.08);
        s.hx = -(dx / (ax * ax)) / denom;
        s.hy = -(dy / (ay * ay)) / denom;
        return s;
    }
    // annulus: torus-like ring over normalized radius [0.55, 1]
    double u = std::sqrt(u2);
    s.inside = u >= 0.55 && u <= 1.0;
    if (!s.inside) return s;
    double v = (u - 0.775) / 0.225;
    s.h = std::sqrt(std::max(0.0, 1.0 - v * v));
    double denom = std::max(s.h, 0.08);
    double ux = dx / (ax * ax * u), uy = dy / (ay * ay * u);
    s.hx = -v * ux / (0.225 * denom);
    s.hy = -v * uy / (0.225 * denom);
    return s;
}

int footprint_area(const ObjectSpec& o, int W, int H) {
    int n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (sample_shape(o, x, y).inside) ++n;
    return n;
}

double bg_channel(const SceneSpec& sp, int c, double x, double y) {
    double s = x * std::cos(sp.tex_theta) + y * std::sin(sp.tex_theta);
    double v = sp.tex_base[c] + sp.tex_amp * std::sin(2.0 * kPi * s / sp.tex_wavelength +
                                                      sp.tex_phase[c]);
    return std::clamp(v, 0.0, 1.0);
}

double bg_depth(const SceneSpec& sp, int y) {
    return sp.bg_near_mm + (sp.bg_far_mm - sp.bg_near_mm) * y / (sp.height - 1);
}

void validate(const SceneSpec& sp) {
    check(sp.width > 1 && sp.height > 1, "scene: image must be at least 2x2");
    check(!sp.objects.empty() && sp.objects.size() <= 3, "scene: object count must be 1..3");
    check(sp.bg_near_mm > 0.0 && sp.bg_far_mm > sp.bg_near_mm, "scene: bad depth ramp");
    for (const auto& o : sp.objects) {
        check(o.radius > 0.0, "scene: nonpositive object radius");
        check(o.deform_level >= 0 && o.deform_level < 5, "scene: deform level must be 0..4");
        check(o.depth_mm + kReliefMm < sp.bg_near_mm,
              "scene: object depth must stay nearer than the background");
        check(o.depth_mm > 500.0, "scene: object depth out of range");
    }
}

}  // namespace

SceneSpec sample_scene_spec(uint64_t seed, int width, int height) {
    Rng rng(mix64(seed));
    SceneSpec sp;
    sp.width = width;
    sp.height = height;
    sp.seed = seed;

    bool overhead = rng.uniform_int(0, 1) == 0;
    double az = rng.uniform(0.0, 2.0 * kPi);
    sp.light_ux = std::cos(az);
    sp.light_uy = std::sin(az);
    sp.light_elev = overhead ? 1.35 : rng.uniform(0.55, 1.25);

    sp.tex_theta = rng.uniform(0.0, kPi);
    sp.tex_wavelength = rng.uniform(16.0, 28.0);
    sp.tex_amp = rng.uniform(0.12, 0.2);
    for (int c = 0; c < 3; ++c) sp.tex_base[c] = rng.uniform(0.35, 0.55);
    for (int c = 0; c < 3; ++c) sp.tex_phase[c] = rng.uniform(0.0, 2.0 * kPi);

    int K = rng.uniform_int(1, 3);
    for (int k = 0; k < K; ++k) {
        ObjectSpec o;
        o.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
        o.deform = static_cast<DeformMode>(rng.uniform_int(0, 2));
        o.deform_level = rng.uniform_int(0, 4);
        o.radius = rng.uniform(8.0, 14.0);
        o.depth_mm = rng.uniform(600.0, 900.0);
        int tries = 0;
        for (;;) {
            o.cx = rng.uniform(0.2 * width, 0.8 * width);
            o.cy = rng.uniform(0.2 * height, 0.8 * height);
            if (footprint_area(o, width, height) >= kMinFootprintPx) break;
            check(++tries < kPlacementTries, "scene: could not place object inside the frame");
        }
        sp.objects.push_back(o);
    }
    return sp;
}

Tensor render_background(const SceneSpec& sp) {
    validate(sp);
    Tensor bg({3, sp.height, sp.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < sp.height; ++y)
            for (int x = 0; x < sp.width; ++x)
                bg.at3(c, y, x) = static_cast<float>(bg_channel(sp, c, x, y));
    return bg;
}

ScenePair render_pair(const SceneSpec& sp) {
    validate(sp);
    int W = sp.width, H = sp.height;
    ScenePair out;
    out.spec = sp;
    out.image_tr = Tensor({3, H, W});
    out.image_op = Tensor({3, H, W});
    out.depth = Tensor({H, W});
    out.masks.assign(sp.objects.size(), Mask(W, H));

    double ce = std::cos(sp.light_elev), se = std::sin(sp.light_elev);
    double lx = ce * sp.light_ux, ly = ce * sp.light_uy, lz = se;
    double hnorm = std::sqrt(lx * lx + ly * ly + (lz + 1.0) * (lz + 1.0));
    double hlx = lx / hnorm, hly = ly / hnorm, hlz = (lz + 1.0) / hnorm;

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int winner = -1;
            ShapeSample ws;
            double depth = bg_depth(sp, y);
            for (size_t k = 0; k < sp.objects.size(); ++k) {
                ShapeSample s = sample_shape(sp.objects[k], x, y);
                if (!s.inside) continue;
                out.masks[k].at(y, x) = 1.0f;
                double d = sp.objects[k].depth_mm + kReliefMm * (1.0 - s.h);
                if (d < depth) {
                    depth = d;
                    winner = static_cast<int>(k);
                    ws = s;
                }
            }
            out.depth.data[static_cast<size_t>(y) * W + x] = static_cast<float>(depth);

            if (winner < 0) {
                for (int c = 0; c < 3; ++c) {
                    float v = static_cast<float>(bg_channel(sp, c, x, y));
                    out.image_tr.at3(c, y, x) = v;
                    out.image_op.at3(c, y, x) = v;
                }
                continue;
            }

            const ObjectSpec& o = sp.objects[static_cast<size_t>(winner)];
            double gpx = kReliefAspect * o.radius * ws.hx, gpy = kReliefAspect * o.radius * ws.hy;
            double nn = std::sqrt(gpx * gpx + gpy * gpy + 1.0);
            double nx = -gpx / nn, ny = -gpy / nn, nz = 1.0 / nn;

            double diffuse = kAmbient + (1.0 - kAmbient) * std::max(0.0, nx * lx + ny * ly + nz * lz);
            double spec = kSpecGain * std::pow(std::max(0.0, nx * hlx + ny * hly + nz * hlz),
                                               kSpecPower);

            double ox = kRefractGain * ws.hx, oy = kRefractGain * ws.hy;
            double onorm = std::sqrt(ox * ox + oy * oy);
            if (onorm > kMaxOffsetPx) {
                ox *= kMaxOffsetPx / onorm;
                oy *= kMaxOffsetPx / onorm;
            }
            double rx = std::clamp(x + ox, 0.0, W - 1.0), ry = std::clamp(y + oy, 0.0, H - 1.0);

            for (int c = 0; c < 3; ++c) {
                double tr = kTransmittance * bg_channel(sp, c, rx, ry) + spec;
                out.image_tr.at3(c, y, x) = static_cast<float>(std::clamp(tr, 0.0, 1.0));
                out.image_op.at3(c, y, x) = static_cast<float>(std::clamp(kAlbedo[c] * diffuse, 0.0, 1.0));
            }
        }
    }

    for (const auto& m : out.masks)
        check(std::count(m.v.begin(), m.v.end(), 1.0f) > 0,
              "scene: object footprint fell outside the frame");
    assert_finite(out.image_tr, "render_pair image_tr");
    assert_finite(out.image_op, "render_pair image_op");
    assert_finite(out.depth, "render_pair depth");
    return out;
}

std::vector<SampleRecord> generate_dataset(const std::string& out_dir, int n, uint64_t base_seed,
                                           const std::string& split) {
    check(n >= 1, "generate_dataset: n must be >= 1");
    uint64_t split_idx;
    if (split == "train")
        split_idx = 0;
    else if (split == "val")
        split_idx = 1;
    else if (split == "test")
        split_idx = 2;
    else
        fail("generate_dataset: unknown split '" + split + "'");

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<SampleRecord> recs(static_cast<size_t>(n));
    parallel_for(n, [&](int i) {
        uint64_t seed = base_seed + split_idx * 1000000000ull + static_cast<uint64_t>(i);
        ScenePair pair = render_pair(sample_scene_spec(seed));

        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), i);
        std::string id(buf);
        SampleRecord r;
        r.id = id;
        r.seed = seed;
        r.split = split;
        r.image_tr = id + "_tr.ppm";
        r.image_op = id + "_op.ppm";
        r.depth = id + "_depth.pfm";
        write_ppm((fs::path(out_dir) / r.image_tr).string(), pair.image_tr);
        write_ppm((fs::path(out_dir) / r.image_op).string(), pair.image_op);
        write_pfm((fs::path(out_dir) / r.depth).string(), pair.depth);
        for (size_t k = 0; k < pair.masks.size(); ++k) {
            std::string name = id + "_mask" + std::to_string(k) + ".pgm";
            write_pgm((fs::path(out_dir) / name).string(), pair.masks[k]);
            r.masks.push_back(name);
        }
        recs[static_cast<size_t>(i)] = std::move(r);
    });

    write_manifest((fs::path(out_dir) / ("manifest_" + split + ".json")).string(), recs);
    return recs;
}

}  // namespace opq
