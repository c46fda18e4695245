#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "opq/scene.hpp"

using namespace opq;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / "opq_scene_tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
}

std::string read_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

double luminance(const Tensor& img, int y, int x) {
    return 0.2126 * img.at3(0, y, x) + 0.7152 * img.at3(1, y, x) + 0.0722 * img.at3(2, y, x);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa < 1e-12 || sbb < 1e-12) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

Mask mask_union(const ScenePair& p) {
    Mask u(p.spec.width, p.spec.height);
    for (const auto& m : p.masks)
        for (size_t i = 0; i < m.size(); ++i)
            if (m.v[i] == 1.0f) u.v[i] = 1.0f;
    return u;
}

}  // namespace

TEST_CASE("same seed renders bit-identical pairs") {
    SceneSpec spec = sample_scene_spec(7);
    ScenePair a = render_pair(spec);
    ScenePair b = render_pair(sample_scene_spec(7));
    CHECK(a.image_tr.data == b.image_tr.data);
    CHECK(a.image_op.data == b.image_op.data);
    CHECK(a.depth.data == b.depth.data);
    REQUIRE(a.masks.size() == b.masks.size());
    for (size_t k = 0; k < a.masks.size(); ++k) CHECK(a.masks[k].v == b.masks[k].v);
}

TEST_CASE("branches share geometry: identical outside masks, divergent inside") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        ScenePair p = render_pair(sample_scene_spec(seed));
        Mask u = mask_union(p);
        int inside_diff = 0;
        for (int y = 0; y < p.spec.height; ++y) {
            for (int x = 0; x < p.spec.width; ++x) {
                bool in = u.at(y, x) == 1.0f;
                for (int c = 0; c < 3; ++c) {
                    if (!in) {
                        CHECK(p.image_tr.at3(c, y, x) == p.image_op.at3(c, y, x));
                    } else if (p.image_tr.at3(c, y, x) != p.image_op.at3(c, y, x)) {
                        ++inside_diff;
                    }
                }
            }
        }
        CHECK(inside_diff > 0);
    }
}

TEST_CASE("depth stores the first surface and stays in range") {
    for (uint64_t seed = 10; seed < 30; ++seed) {
        ScenePair p = render_pair(sample_scene_spec(seed));
        int H = p.spec.height, W = p.spec.width;
        Mask u = mask_union(p);
        auto ramp = [&](int y) { return 1000.0 + (2000.0 * y) / (H - 1); };

        for (size_t i = 0; i < p.depth.numel(); ++i) {
            CHECK(p.depth[i] >= 500.0f);
            CHECK(p.depth[i] <= 5000.0f);
        }
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                float d = p.depth.data[static_cast<size_t>(y) * W + x];
                if (u.at(y, x) == 1.0f) {
                    CHECK(d < ramp(y));  // object surface is strictly nearer
                } else {
                    CHECK(d == doctest::Approx(ramp(y)).epsilon(1e-6));
                }
            }
        }
        for (const auto& m : p.masks) {
            double min_d = 1e30, min_bg = 1e30;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (m.at(y, x) == 1.0f) {
                        min_d = std::min(min_d, double(p.depth.data[static_cast<size_t>(y) * W + x]));
                        min_bg = std::min(min_bg, ramp(y));
                    }
            CHECK(min_d < min_bg);
        }
    }
}

TEST_CASE("transparent objects reveal the background, opaque ones hide it") {
    double sum_tr = 0, sum_op = 0;
    int count = 0;
    for (uint64_t seed = 100; seed < 120; ++seed) {
        ScenePair p = render_pair(sample_scene_spec(seed));
        Tensor bg = render_background(p.spec);
        for (const auto& m : p.masks) {
            std::vector<double> vtr, vop, vbg;
            for (int y = 0; y < p.spec.height; ++y)
                for (int x = 0; x < p.spec.width; ++x)
                    if (m.at(y, x) == 1.0f) {
                        vtr.push_back(luminance(p.image_tr, y, x));
                        vop.push_back(luminance(p.image_op, y, x));
                        vbg.push_back(luminance(bg, y, x));
                    }
            sum_tr += pearson(vtr, vbg);
            sum_op += pearson(vop, vbg);
            ++count;
        }
    }
    CHECK(sum_tr / count > 0.5);
    CHECK(sum_op / count < 0.2);
}

TEST_CASE("sampled specs hit documented ranges and plausible placements") {
    for (uint64_t seed = 200; seed < 260; ++seed) {
        SceneSpec sp = sample_scene_spec(seed);
        CHECK(sp.seed == seed);
        REQUIRE(sp.objects.size() >= 1);
        REQUIRE(sp.objects.size() <= 3);
        for (const auto& o : sp.objects) {
            CHECK(o.radius >= 8.0);
            CHECK(o.radius <= 14.0);
            CHECK(o.depth_mm >= 600.0);
            CHECK(o.depth_mm <= 900.0);
            CHECK(o.deform_level >= 0);
            CHECK(o.deform_level <= 4);
        }
        ScenePair p = render_pair(sp);
        for (const auto& m : p.masks) {
            int area = 0;
            for (float v : m.v) area += v == 1.0f ? 1 : 0;
            CHECK(area >= 12);
        }
    }
}

TEST_CASE("deformation modes and magnitudes are sampled uniformly") {
    int modes[3] = {0, 0, 0};
    int levels[5] = {0, 0, 0, 0, 0};
    int n = 0;
    for (uint64_t seed = 0; seed < 500; ++seed) {
        SceneSpec sp = sample_scene_spec(seed);
        for (const auto& o : sp.objects) {
            ++modes[static_cast<int>(o.deform)];
            ++levels[o.deform_level];
            ++n;
        }
    }
    double sigma3 = 3.0 * std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
    for (int m = 0; m < 3; ++m) CHECK(std::fabs(modes[m] - n / 3.0) <= sigma3);
    double sigma5 = 3.0 * std::sqrt(n * (1.0 / 5.0) * (4.0 / 5.0));
    for (int l = 0; l < 5; ++l) CHECK(std::fabs(levels[l] - n / 5.0) <= sigma5);
}

TEST_CASE("invalid specs are rejected") {
    SceneSpec sp = sample_scene_spec(3);
    sp.objects[0].cx = -100.0;
    sp.objects[0].cy = -100.0;
    CHECK_THROWS(render_pair(sp));  // footprint entirely off frame

    SceneSpec none = sample_scene_spec(3);
    none.objects.clear();
    CHECK_THROWS(render_pair(none));

    SceneSpec deep = sample_scene_spec(3);
    deep.objects[0].depth_mm = 990.0;  // would reach behind the background
    CHECK_THROWS(render_pair(deep));
}

TEST_CASE("generate_dataset writes a loadable, deterministic split") {
    std::string d1 = tmp_dir("run1"), d2 = tmp_dir("run2");
    auto recs = generate_dataset(d1, 2, 42, "val");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].id == "val_00000");
    CHECK(recs[1].id == "val_00001");
    CHECK(recs[0].split == "val");

    // manifest loads with file checking on
    auto loaded = read_manifest((fs::path(d1) / "manifest_val.json").string());
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0] == recs[0]);

    // a second run produces identical bytes for every file
    generate_dataset(d2, 2, 42, "val");
    for (const auto& e : fs::directory_iterator(d1)) {
        std::string name = e.path().filename().string();
        CHECK(read_raw(e.path().string()) == read_raw((fs::path(d2) / name).string()));
    }
}

TEST_CASE("n=1 produces exactly 4+K files and splits draw disjoint seeds") {
    std::string d = tmp_dir("count");
    auto recs = generate_dataset(d, 1, 7, "train");
    size_t k = recs[0].masks.size();
    size_t files = 0;
    for (const auto& e : fs::directory_iterator(d)) {
        (void)e;
        ++files;
    }
    CHECK(files == 4 + k);

    std::string dv = tmp_dir("val_seed");
    auto rv = generate_dataset(dv, 1, 7, "train");
    auto rv2 = generate_dataset(dv, 1, 7, "val");
    auto rv3 = generate_dataset(dv, 1, 7, "test");
    CHECK(rv[0].seed != rv2[0].seed);
    CHECK(rv2[0].seed != rv3[0].seed);
    CHECK_THROWS(generate_dataset(dv, 1, 7, "weird"));
}
