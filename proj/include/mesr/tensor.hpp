#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mesr/error.hpp"
#include "mesr/image.hpp"

namespace mesr {

/// Dense 4-D array in (frames, channels, height, width) order.
template <class Real>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<Real> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, Real fill = Real(0))
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill)
    {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw ShapeError("Tensor: negative dimension");
    }

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    std::size_t index(int in, int ic, int y, int x) const
    {
        return ((static_cast<std::size_t>(in) * c + ic) * h + y) * w + x;
    }

    Real& operator()(int in, int ic, int y, int x) { return v[index(in, ic, y, x)]; }
    Real operator()(int in, int ic, int y, int x) const { return v[index(in, ic, y, x)]; }

    Real* plane_ptr(int in, int ic) { return v.data() + index(in, ic, 0, 0); }
    const Real* plane_ptr(int in, int ic) const { return v.data() + index(in, ic, 0, 0); }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const
    {
        return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + "]";
    }

    bool all_finite() const
    {
        return std::all_of(v.begin(), v.end(), [](Real x) { return std::isfinite(static_cast<double>(x)); });
    }

    template <class Other>
    Tensor<Other> cast() const
    {
        Tensor<Other> out(n, c, h, w);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<Other>(v[i]);
        return out;
    }
};

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* what)
{
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape " + a.shape_str() + " vs " + b.shape_str());
}

/// Stacks images as a [m, 1, H, W] tensor.
template <class Real>
Tensor<Real> stack_images(const std::vector<ImageGrid>& imgs, double scale = 1.0)
{
    if (imgs.empty()) throw Error("stack_images: empty list");
    Tensor<Real> t(static_cast<int>(imgs.size()), 1, imgs[0].height(), imgs[0].width());
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        require_same_shape(imgs[i], imgs[0], "stack_images");
        Real* p = t.plane_ptr(static_cast<int>(i), 0);
        for (std::size_t k = 0; k < imgs[i].size(); ++k) p[k] = static_cast<Real>(imgs[i][k] * scale);
    }
    return t;
}

template <class Real>
ImageGrid to_image(const Tensor<Real>& t, int in = 0, int ic = 0, double scale = 1.0)
{
    ImageGrid img(t.w, t.h);
    const Real* p = t.plane_ptr(in, ic);
    for (std::size_t k = 0; k < img.size(); ++k) img[k] = static_cast<double>(p[k]) * scale;
    return img;
}

} // namespace mesr
