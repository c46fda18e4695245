#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "opq/common.hpp"
#include "opq/rng.hpp"

namespace opq {

// Dense row-major tensor. Rank is free; the code below uses
//   {n}        vectors (embeddings)
//   {1}        scalars (losses)
//   {C,H,W}    feature maps / images / masks
//   {O,I,k,k}  conv weights
template <class S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> sh, S fill = S(0)) : shape(std::move(sh)) {
        for (int d : shape) check(d > 0, "tensor: nonpositive dim " + std::to_string(d));
        data.assign(numel_of(shape), fill);
    }

    static size_t numel_of(const std::vector<int>& sh) {
        size_t n = 1;
        for (int d : sh) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    S& operator[](size_t i) { return data[i]; }
    S operator[](size_t i) const { return data[i]; }

    // {C,H,W} accessors
    S& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    S at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    S* plane(int c) { return data.data() + static_cast<size_t>(c) * shape[1] * shape[2]; }
    const S* plane(int c) const {
        return data.data() + static_cast<size_t>(c) * shape[1] * shape[2];
    }

    template <class T2>
    TensorT<T2> cast() const {
        TensorT<T2> r;
        r.shape = shape;
        r.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) r.data[i] = static_cast<T2>(data[i]);
        return r;
    }

    static TensorT full(std::vector<int> sh, S v) { return TensorT(std::move(sh), v); }

    static TensorT random_uniform(std::vector<int> sh, Rng& rng, S lo, S hi) {
        TensorT t(std::move(sh));
        for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    static TensorT random_normal(std::vector<int> sh, Rng& rng, S scale = S(1)) {
        TensorT t(std::move(sh));
        for (auto& v : t.data) v = static_cast<S>(rng.normal()) * scale;
        return t;
    }
};

using Tensor = TensorT<float>;

template <class S>
std::string shape_str(const TensorT<S>& t) {
    std::string s = "[";
    for (int i = 0; i < t.ndim(); ++i) s += (i ? "," : "") + std::to_string(t.dim(i));
    return s + "]";
}

// Every op output must be finite; NaN/Inf is an error state. One cheap pass:
// a sum of absolute values is finite iff all entries are finite and no
// overflow occurred (overflow itself indicates a diverged value).
template <class S>
void assert_finite(const TensorT<S>& t, const char* where) {
    long double acc = 0;
    for (S v : t.data) acc += std::fabs(static_cast<long double>(v));
    if (!std::isfinite(static_cast<double>(acc)))
        fail(std::string(where) + ": non-finite value in tensor " + shape_str(t));
}

}  // namespace opq
