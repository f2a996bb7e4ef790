#pragma once

#include <cmath>
#include <vector>

#include "mesr/image.hpp"

namespace mesr {

/// Largest displacement (LR pixels) the flows are allowed to represent.
inline constexpr double kMaxFlow = 5.0;

/// Global translation F_{i->r} in LR pixels: pixel x of frame i shows the
/// reference content at x + (dx, dy).
struct FlowField {
    double dx = 0.0;
    double dy = 0.0;

    FlowField inverse() const { return {-dx, -dy}; }

    bool finite() const { return std::isfinite(dx) && std::isfinite(dy); }

    bool within_range(double r = kMaxFlow) const { return std::abs(dx) <= r && std::abs(dy) <= r; }

    /// Dense H x W x 2 view, interleaved (dx, dy) per pixel.
    std::vector<double> dense(int width, int height) const
    {
        std::vector<double> out(2 * static_cast<std::size_t>(width) * height);
        for (std::size_t i = 0; i < out.size(); i += 2) {
            out[i] = dx;
            out[i + 1] = dy;
        }
        return out;
    }

    friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// out(x) = img(x + F(x)), bicubic with mirror boundaries.
inline ImageGrid pullback(const ImageGrid& img, const FlowField& flow)
{
    if (!flow.finite()) throw Error("pullback: non-finite flow");
    if (flow.dx == 0.0 && flow.dy == 0.0) return img;
    ImageGrid out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) out(x, y) = sample_bicubic(img, x + flow.dx, y + flow.dy);
    return out;
}

/// Resamples frame i onto the reference grid given F_{i->r}.
inline ImageGrid warp_to_reference(const ImageGrid& img, const FlowField& flow_to_ref)
{
    return pullback(img, flow_to_ref.inverse());
}

} // namespace mesr
