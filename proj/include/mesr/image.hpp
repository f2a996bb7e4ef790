#pragma once

// Single-channel raster, convolution kernels, resampling and metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mesr/error.hpp"

namespace mesr {

/// Row-major single-channel image of real intensities (digital numbers).
class ImageGrid {
public:
    ImageGrid() = default;

    ImageGrid(int width, int height, double fill = 0.0)
        : width_(width), height_(height)
    {
        check_dims(width, height);
        data_.assign(static_cast<std::size_t>(width) * height, fill);
    }

    ImageGrid(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data))
    {
        check_dims(width, height);
        if (data_.size() != static_cast<std::size_t>(width) * height)
            throw ShapeError("ImageGrid: data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(width) + "x" +
                             std::to_string(height));
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const ImageGrid& other) const
    {
        return width_ == other.width_ && height_ == other.height_;
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    static void check_dims(int width, int height)
    {
        if (width < 1 || height < 1)
            throw ShapeError("ImageGrid: dimensions must be >= 1, got " + std::to_string(width) +
                             "x" + std::to_string(height));
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* what)
{
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.width()) +
                         "x" + std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                         "x" + std::to_string(b.height()) + ")");
}

// Element-wise arithmetic.

inline ImageGrid operator+(const ImageGrid& a, const ImageGrid& b)
{
    require_same_shape(a, b, "operator+");
    ImageGrid out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline ImageGrid operator-(const ImageGrid& a, const ImageGrid& b)
{
    require_same_shape(a, b, "operator-");
    ImageGrid out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline ImageGrid operator*(const ImageGrid& a, double s)
{
    ImageGrid out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

inline ImageGrid operator*(double s, const ImageGrid& a) { return a * s; }

inline double mean(const ImageGrid& img)
{
    return std::accumulate(img.data().begin(), img.data().end(), 0.0) / static_cast<double>(img.size());
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n)
{
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

/// Square convolution kernel. Gaussian kernels also carry their 1-D factor.
struct Kernel {
    int radius = 0;
    std::vector<double> taps{1.0};   // (2r+1)^2, row-major
    std::vector<double> separable;   // 2r+1, empty when not separable

    int side() const { return 2 * radius + 1; }

    double tap(int dx, int dy) const { return taps[static_cast<std::size_t>(dy + radius) * side() + dx + radius]; }

    double sum() const { return std::accumulate(taps.begin(), taps.end(), 0.0); }

    double sum_of_squares() const
    {
        return std::inner_product(taps.begin(), taps.end(), taps.begin(), 0.0);
    }

    static Kernel identity() { return Kernel{0, {1.0}, {1.0}}; }

    /// Truncated at radius ceil(4 sigma) and renormalized to unit sum.
    static Kernel gaussian(double sigma)
    {
        if (!(sigma > 0.0)) throw Error("Kernel::gaussian: sigma must be positive");
        const int r = static_cast<int>(std::ceil(4.0 * sigma));
        std::vector<double> g(2 * r + 1);
        for (int i = -r; i <= r; ++i) g[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
        const double s = std::accumulate(g.begin(), g.end(), 0.0);
        for (auto& v : g) v /= s;
        return from_separable(std::move(g));
    }

    static Kernel from_separable(std::vector<double> g)
    {
        if (g.size() % 2 == 0) throw Error("Kernel: separable factor must have odd length");
        Kernel k;
        k.radius = static_cast<int>(g.size() / 2);
        k.taps.resize(g.size() * g.size());
        for (std::size_t y = 0; y < g.size(); ++y)
            for (std::size_t x = 0; x < g.size(); ++x) k.taps[y * g.size() + x] = g[y] * g[x];
        k.separable = std::move(g);
        return k;
    }

    static Kernel from_taps(int radius, std::vector<double> taps)
    {
        if (radius < 0 || taps.size() != static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)))
            throw Error("Kernel::from_taps: expected (2r+1)^2 taps");
        return Kernel{radius, std::move(taps), {}};
    }
};

/// Convolution with mirror (without repeat) boundary handling; output has the input size.
inline ImageGrid convolve(const ImageGrid& img, const Kernel& k)
{
    const int w = img.width(), h = img.height(), r = k.radius;
    if (r >= std::min(w, h))
        throw Error("convolve: kernel radius " + std::to_string(r) + " too large for " +
                    std::to_string(w) + "x" + std::to_string(h) + " image");
    if (r == 0) return img * k.taps[0];

    if (!k.separable.empty()) {
        // The kernel is symmetric in practice, but flip anyway to keep true convolution.
        ImageGrid tmp(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t) acc += k.separable[r - t] * img(reflect_index(x + t, w), y);
                tmp(x, y) = acc;
            }
        ImageGrid out(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t) acc += k.separable[r - t] * tmp(x, reflect_index(y + t, h));
                out(x, y) = acc;
            }
        return out;
    }

    ImageGrid out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    acc += k.tap(-dx, -dy) * img(reflect_index(x + dx, w), reflect_index(y + dy, h));
            out(x, y) = acc;
        }
    return out;
}

/// Keys cubic convolution kernel with a = -0.5.
inline double keys_cubic(double t)
{
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

/// Bicubic value of the image at a real position, mirror boundaries.
inline double sample_bicubic(const ImageGrid& img, double x, double y)
{
    const double fx = std::floor(x), fy = std::floor(y);
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    const double tx = x - fx, ty = y - fy;
    double wx[4], wy[4];
    for (int i = 0; i < 4; ++i) {
        wx[i] = keys_cubic(tx - (i - 1));
        wy[i] = keys_cubic(ty - (i - 1));
    }
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) {
        if (wy[j] == 0.0) continue;
        const int yy = reflect_index(iy + j - 1, img.height());
        double row = 0.0;
        for (int i = 0; i < 4; ++i) {
            if (wx[i] == 0.0) continue;
            row += wx[i] * img(reflect_index(ix + i - 1, img.width()), yy);
        }
        acc += wy[j] * row;
    }
    return acc;
}

/// Bilinear value of the image at a real position, mirror boundaries.
inline double sample_bilinear(const ImageGrid& img, double x, double y)
{
    const double fx = std::floor(x), fy = std::floor(y);
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    const double tx = x - fx, ty = y - fy;
    const int x0 = reflect_index(ix, img.width()), x1 = reflect_index(ix + 1, img.width());
    const int y0 = reflect_index(iy, img.height()), y1 = reflect_index(iy + 1, img.height());
    return (1 - ty) * ((1 - tx) * img(x0, y0) + tx * img(x1, y0)) +
           ty * ((1 - tx) * img(x0, y1) + tx * img(x1, y1));
}

/// Translates the content by delta: out(x) = img(x - delta), bicubic.
inline ImageGrid shift_subpixel(const ImageGrid& img, double dx, double dy)
{
    ImageGrid out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) out(x, y) = sample_bicubic(img, x - dx, y - dy);
    return out;
}

/// out(x, y) = img(factor*x + px, factor*y + py).
inline ImageGrid subsample(const ImageGrid& img, int factor, int phase_x = 0, int phase_y = 0)
{
    if (factor < 1) throw Error("subsample: factor must be >= 1");
    if (phase_x < 0 || phase_x >= factor || phase_y < 0 || phase_y >= factor)
        throw Error("subsample: phase (" + std::to_string(phase_x) + "," + std::to_string(phase_y) +
                    ") out of range for factor " + std::to_string(factor));
    const int w = img.width() / factor, h = img.height() / factor;
    ImageGrid out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(x, y) = img(factor * x + phase_x, factor * y + phase_y);
    return out;
}

/// Places each sample at (factor*x, factor*y) and zeros elsewhere.
inline ImageGrid zero_insert(const ImageGrid& img, int factor)
{
    ImageGrid out(img.width() * factor, img.height() * factor);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) out(factor * x, factor * y) = img(x, y);
    return out;
}

/// Bilinear zoom by an integer factor. HR pixel u samples LR coordinate u / s,
/// the same origin-aligned map used by the splatting and the subsampling.
inline ImageGrid bilinear_zoom(const ImageGrid& img, int s)
{
    if (s < 1) throw Error("bilinear_zoom: factor must be >= 1");
    ImageGrid out(img.width() * s, img.height() * s);
    for (int v = 0; v < out.height(); ++v)
        for (int u = 0; u < out.width(); ++u)
            out(u, v) = sample_bilinear(img, static_cast<double>(u) / s, static_cast<double>(v) / s);
    return out;
}

/// Returns the sub-image [x0, x0+w) x [y0, y0+h).
inline ImageGrid crop(const ImageGrid& img, int x0, int y0, int w, int h)
{
    if (x0 < 0 || y0 < 0 || x0 + w > img.width() || y0 + h > img.height())
        throw Error("crop: window outside image");
    ImageGrid out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(x, y) = img(x0 + x, y0 + y);
    return out;
}

/// Value reported when the MSE is exactly zero. Also written verbatim to CSV files.
inline constexpr double kInfinitePsnr = 999.0;

inline double mse(const ImageGrid& est, const ImageGrid& ref, int border = 0)
{
    require_same_shape(est, ref, "mse");
    if (2 * border >= est.width() || 2 * border >= est.height())
        throw Error("mse: border leaves no pixels");
    double acc = 0.0;
    std::size_t n = 0;
    for (int y = border; y < est.height() - border; ++y)
        for (int x = border; x < est.width() - border; ++x) {
            const double d = est(x, y) - ref(x, y);
            acc += d * d;
            ++n;
        }
    return acc / static_cast<double>(n);
}

inline double psnr_from_mse(double m, double peak)
{
    if (m <= 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / m);
}

/// PSNR in dB; kInfinitePsnr for identical images.
inline double psnr(const ImageGrid& est, const ImageGrid& ref, double peak = 3400.0, int border = 0)
{
    if (!(peak > 0.0)) throw Error("psnr: peak must be positive");
    return psnr_from_mse(mse(est, ref, border), peak);
}

} // namespace mesr
