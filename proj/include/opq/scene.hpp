#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opq/imageio.hpp"
#include "opq/maskops.hpp"
#include "opq/tensor.hpp"

namespace opq {

// Procedural paired-scene generator. Each sample is a transparent rendering
// and an opaque re-rendering of the same 2.5D layout over a textured depth
// ramp, plus ground-truth depth and per-object masks. Rendering is a pure
// function of the spec, so pairs share geometry exactly and a seed fully
// reproduces a sample.

enum class ShapeKind { disc, rounded_rect, annulus };
enum class DeformMode { x, y, xy };

struct ObjectSpec {
    ShapeKind kind = ShapeKind::disc;
    DeformMode deform = DeformMode::x;
    int deform_level = 0;  // 0..4, scale factor 1.1 + 0.1 * level
    double cx = 0, cy = 0;
    double radius = 10;    // base radius, px
    double depth_mm = 800; // nearest surface point
};

struct SceneSpec {
    int width = 64, height = 64;
    uint64_t seed = 0;
    double bg_near_mm = 1000.0, bg_far_mm = 3000.0;
    double light_ux = 0.0, light_uy = 0.0;  // azimuth unit vector
    double light_elev = 1.5707963267948966; // radians above the plane
    double tex_base[3] = {0.45, 0.45, 0.45};
    double tex_amp = 0.15;
    double tex_wavelength = 20.0;
    double tex_theta = 0.0;
    double tex_phase[3] = {0.0, 2.0, 4.0};
    std::vector<ObjectSpec> objects;
};

struct ScenePair {
    Tensor image_tr;          // {3,H,W} transparent branch
    Tensor image_op;          // {3,H,W} opaque branch
    Tensor depth;             // {H,W} first-surface depth, mm
    std::vector<Mask> masks;  // per-object footprints
    SceneSpec spec;
};

// randomized spec: 1..3 objects of mixed shapes, per-object deformation mode
// and one of five magnitudes, two light modes (near-overhead canonical or
// randomized placement), sinusoidal background albedo. Placement retries
// until every object covers enough pixels.
SceneSpec sample_scene_spec(uint64_t seed, int width = 64, int height = 64);

ScenePair render_pair(const SceneSpec& spec);

// the object-free backdrop both branches share
Tensor render_background(const SceneSpec& spec);

// Renders n samples into out_dir and writes manifest_<split>.json listing
// them. Per-sample seeds are base_seed + split_offset + index with a fixed
// 1e9 offset per split, so splits draw from disjoint seed ranges. Samples
// render in parallel; outputs do not depend on scheduling.
std::vector<SampleRecord> generate_dataset(const std::string& out_dir, int n, uint64_t base_seed,
                                           const std::string& split);

}  // namespace opq
