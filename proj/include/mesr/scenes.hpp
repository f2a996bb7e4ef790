#pragma once

// Procedural HR test scenes: smooth terrain, axis-aligned blocks with roofs and
// shadows, roads, and fine texture. Rendered 4x supersampled and box-averaged
// so edges are sharp but not pixel-stepped.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "mesr/image.hpp"
#include "mesr/rng.hpp"

namespace mesr {

struct SceneConfig {
    int size = 128;
    double background_min = 500.0;
    double background_max = 1500.0;
    int blocks_min = 6;
    int blocks_max = 18;
    int roads_max = 3;
    double texture_amplitude = 40.0;
    double peak = 3400.0;
    double optics_sigma = 0.8;  // HR px; 0 disables the final blur
};

inline ImageGrid render_scene(const SceneConfig& cfg, Rng& rng)
{
    constexpr int ss = 4;
    const int n = cfg.size * ss;
    const double inv = 1.0 / ss;
    ImageGrid fine(n, n);

    // Terrain: a few low-frequency cosines around a random base level.
    const double base = rng.uniform(cfg.background_min, cfg.background_max);
    struct Wave { double fx, fy, phase, amp; };
    std::vector<Wave> waves(5);
    for (auto& w : waves) {
        w.fx = rng.uniform(-3.0, 3.0) / cfg.size;
        w.fy = rng.uniform(-3.0, 3.0) / cfg.size;
        w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        w.amp = rng.uniform(20.0, 120.0);
    }
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double v = base;
            for (const auto& w : waves)
                v += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * x * inv + w.fy * y * inv) + w.phase);
            fine(x, y) = v;
        }

    // Roads.
    const int roads = rng.uniform_int(0, cfg.roads_max);
    for (int r = 0; r < roads; ++r) {
        const bool horizontal = rng.uniform() < 0.5;
        const double pos = rng.uniform(0.1, 0.9) * cfg.size;
        const double width = rng.uniform(1.5, 4.0);
        const double level = rng.uniform(300.0, 700.0);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double c = (horizontal ? y : x) * inv;
                if (std::abs(c - pos) < 0.5 * width) fine(x, y) = level;
            }
    }

    // Blocks with a roof ridge and a dark shadow on one side.
    const int blocks = rng.uniform_int(cfg.blocks_min, cfg.blocks_max);
    for (int b = 0; b < blocks; ++b) {
        const double w = rng.uniform(3.0, 0.25 * cfg.size);
        const double h = rng.uniform(3.0, 0.25 * cfg.size);
        const double x0 = rng.uniform(0.0, cfg.size - w);
        const double y0 = rng.uniform(0.0, cfg.size - h);
        const double roof = rng.uniform(800.0, 0.9 * cfg.peak);
        const double ridge = rng.uniform(-0.15, 0.15) * roof;
        const double shadow = rng.uniform(1.0, 3.0);
        const double shadow_level = rng.uniform(150.0, 350.0);
        for (int y = 0; y < n; ++y) {
            const double cy = y * inv;
            if (cy < y0 || cy >= y0 + h + shadow) continue;
            for (int x = 0; x < n; ++x) {
                const double cx = x * inv;
                if (cx < x0 || cx >= x0 + w + shadow) continue;
                const bool inside = cx < x0 + w && cy < y0 + h;
                if (inside)
                    fine(x, y) = roof + (cx - x0 < 0.5 * w ? ridge : -ridge);
                else if (cx >= x0 + shadow && cy >= y0 + shadow)
                    fine(x, y) = shadow_level;
            }
        }
    }

    ImageGrid out(cfg.size, cfg.size);
    for (int y = 0; y < cfg.size; ++y)
        for (int x = 0; x < cfg.size; ++x) {
            double acc = 0.0;
            for (int j = 0; j < ss; ++j)
                for (int i = 0; i < ss; ++i) acc += fine(x * ss + i, y * ss + j);
            out(x, y) = acc / (ss * ss);
        }

    // Fine texture, lightly smoothed so it stays close to the HR band limit.
    ImageGrid tex(cfg.size, cfg.size);
    for (auto& v : tex.data()) v = rng.normal() * cfg.texture_amplitude;
    tex = convolve(tex, Kernel::gaussian(0.7));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] + tex[i], 50.0, cfg.peak);
    if (cfg.optics_sigma > 0.0) out = convolve(out, Kernel::gaussian(cfg.optics_sigma));
    return out;
}

} // namespace mesr
