#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "opq/tensor.hpp"

namespace opq {

// Single-plane mask, row-major, values in [0,1]. Binary masks hold exactly
// 0 or 1; ops that require binarity check it and throw otherwise.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<float> v;

    Mask() = default;
    Mask(int w, int h, float fill = 0.0f) : width(w), height(h) {
        check(w > 0 && h > 0, "mask: nonpositive size");
        v.assign(static_cast<size_t>(w) * h, fill);
    }

    float& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return v.size(); }
    bool same_size(const Mask& o) const { return width == o.width && height == o.height; }
};

bool mask_is_binary(const Mask& m);

// 3x3 square structuring element throughout. Neighborhoods are restricted to
// in-image pixels, which keeps the erode/dilate complement duality exact at
// the borders. open = erode then dilate, close = dilate then erode.
enum class MorphOp { erode, dilate, open, close };
Mask morphology(const Mask& m, MorphOp op);

// separable Gaussian, kernel radius ceil(3*sigma), normalized to sum 1,
// coordinates clamped at the edges
Mask gaussian_blur(const Mask& m, double sigma);

// values >= thr map to 1, the rest to 0
Mask threshold(const Mask& m, float thr);

struct Component {
    int x0, y0, x1, y1;  // inclusive pixel bounds
    int area;
};

// 8-connected labeling of the 1-pixels. labels holds 0 for background and
// 1..n for components, numbered by raster order of each component's first
// pixel; comps[k] describes label k+1.
struct Components {
    std::vector<int> labels;
    std::vector<Component> comps;
};
Components connected_components(const Mask& m);

// area-average pooling by an integer factor; the right/bottom edges are
// padded by replication when the factor does not divide the size. Output
// stays soft (no re-binarization).
Mask downsample_soft(const Mask& m, int factor);

// pixels with at least one 4-neighbor of opposite value, raster order, (y,x)
std::vector<std::pair<int, int>> boundary_pixels(const Mask& m);

// pixelwise max over same-sized masks
Mask mask_union(const std::vector<Mask>& ms);

// intersection over union of two binary masks; 1.0 when both are empty
double mask_iou(const Mask& a, const Mask& b);

// Boundary perturbation for training-time mask noise: draws 3..5 hard-edged
// shapes (uniform circle-or-square, add-or-remove, size in [0.05,0.07] of the
// width, center uniform over the input's boundary pixels; rng draws in that
// order), then opens, blurs at sigma 1.0, and thresholds at 0.5. Masks with
// no boundary pixels (empty or full) come back unchanged.
Mask augment_mask(const Mask& m, uint64_t seed);

// hard-edged rasterizers, pixel-center inside test, clipped to the image
void fill_disk(Mask& m, double cy, double cx, double radius, float value);
void fill_rect(Mask& m, int y0, int x0, int y1, int x1, float value);

// half-pixel-center sampling (src = (dst+0.5)*scale - 0.5), edge clamped;
// bilinear for images, nearest for label-like planes
enum class ResizeMode { bilinear, nearest };
Tensor image_resize(const Tensor& img, int new_h, int new_w, ResizeMode mode);

// conversions to/from a {1,H,W} tensor plane; values are clamped into [0,1]
// on the way in so the mask invariant holds
Tensor mask_to_tensor(const Mask& m);
Mask mask_from_tensor(const Tensor& t, int channel = 0);

}  // namespace opq
