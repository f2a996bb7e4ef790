#pragma once

// Base/detail split of normalized frames and the exposure-weighted base fusion.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mesr/flow.hpp"
#include "mesr/image.hpp"
#include "mesr/sequence.hpp"

namespace mesr {

struct BaseDetailPair {
    ImageGrid base;
    ImageGrid detail;
};

/// base = img * G_sigma, detail = img - base.
inline BaseDetailPair decompose(const ImageGrid& img, double sigma = 1.0)
{
    ImageGrid base = convolve(img, Kernel::gaussian(sigma));
    ImageGrid detail = img - base;
    return {std::move(base), std::move(detail)};
}

inline BaseDetailPair decompose(const ImageGrid& img, const Kernel& smoothing)
{
    ImageGrid base = convolve(img, smoothing);
    ImageGrid detail = img - base;
    return {std::move(base), std::move(detail)};
}

inline ImageGrid recompose(const BaseDetailPair& pair)
{
    require_same_shape(pair.base, pair.detail, "recompose");
    return pair.base + pair.detail;
}

/// Exposure-weighted average of the bases aligned on the reference grid (not zoomed).
inline ImageGrid average_bases(std::span<const ImageGrid> bases, std::span<const double> exposures,
                               std::span<const FlowField> flows)
{
    if (bases.empty()) throw Error("fuse_bases: empty list");
    if (exposures.size() != bases.size() || flows.size() != bases.size())
        throw Error("fuse_bases: bases, exposures and flows must have the same length");
    ImageGrid acc(bases[0].width(), bases[0].height());
    double total = 0.0;
    for (std::size_t i = 0; i < bases.size(); ++i) {
        require_same_shape(bases[i], bases[0], "fuse_bases");
        const ImageGrid aligned = warp_to_reference(bases[i], flows[i]);
        for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += exposures[i] * aligned[p];
        total += exposures[i];
    }
    for (auto& v : acc.data()) v /= total;
    return acc;
}

/// Gain g such that g * img has the same interior mean as `target` (1 when img sums to zero).
inline double anchor_gain(const ImageGrid& img, const ImageGrid& target, int border = 2)
{
    require_same_shape(img, target, "anchor_gain");
    if (2 * border >= img.width() || 2 * border >= img.height()) border = 0;
    double si = 0.0, st = 0.0;
    for (int y = border; y < img.height() - border; ++y)
        for (int x = border; x < img.width() - border; ++x) {
            si += img(x, y);
            st += target(x, y);
        }
    return std::abs(si) > 1e-12 * (1.0 + std::abs(st)) ? st / si : 1.0;
}

/// HR base: bilinear zoom of the exposure-weighted average of aligned bases.
inline ImageGrid fuse_bases(std::span<const ImageGrid> bases, std::span<const double> exposures,
                            std::span<const FlowField> flows, int s = 2)
{
    return bilinear_zoom(average_bases(bases, exposures, flows), s);
}

/// Noise parameters of a base image, var ~ (alpha e y + beta) / e^2, derived from
/// the acquisition law with alpha = a sum G^2, beta = b sum G^2.
struct BaseNoise {
    double alpha = 0.0;
    double beta = 0.0;
};

inline BaseNoise base_noise(const NoiseModel& model, const Kernel& g = Kernel::gaussian(1.0))
{
    const double g2 = g.sum_of_squares();
    return {model.a * g2, model.b * g2};
}

struct MleOptions {
    double tol = -1.0;  // negative: 1e-6 * max|z|
    int max_iter = 50;
};

struct MleResult {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Iterative inverse-variance weighted average of samples z_i ~ N(y, (alpha e_i y + beta) / e_i^2).
/// The first weights use the samples themselves (clamped at zero) in place of y.
inline MleResult granados_mle(std::span<const double> z, std::span<const double> exposures, double alpha,
                              double beta, MleOptions opt = {})
{
    if (z.empty() || z.size() != exposures.size()) throw Error("granados_mle: z and exposures must be non-empty and aligned");
    if (alpha < 0.0 || beta < 0.0 || (alpha == 0.0 && beta == 0.0))
        throw Error("granados_mle: need alpha >= 0, beta >= 0, not both zero");
    double zmax = 0.0;
    for (double v : z) zmax = std::max(zmax, std::abs(v));
    const double tol = opt.tol >= 0.0 ? opt.tol : 1e-6 * std::max(zmax, std::numeric_limits<double>::min());

    auto weighted = [&](auto weight_of) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double w = weight_of(i);
            num += w * z[i];
            den += w;
        }
        return num / den;
    };
    auto weight = [&](std::size_t i, double y) {
        const double e = exposures[i];
        return e * e / (alpha * e * std::max(y, 0.0) + beta);
    };

    MleResult res;
    // start from per-sample weights; iterations counts fixed-point updates after that
    double y = weighted([&](std::size_t i) { return weight(i, z[i]); });
    for (int k = 0; k < opt.max_iter; ++k) {
        const double next = weighted([&](std::size_t i) { return weight(i, y); });
        ++res.iterations;
        const double step = std::abs(next - y);
        y = next;
        if (step < tol) {
            res.converged = true;
            break;
        }
    }
    res.value = y;
    return res;
}

} // namespace mesr
