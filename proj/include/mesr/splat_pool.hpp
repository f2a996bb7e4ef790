#pragma once

// SPMC bilinear splatting onto the s-times finer grid and temporal pooling of
// the splatted stacks, with their adjoints.
//
// A sample at LR pixel x with flow F(x) lands at HR coordinate u = s (x + F(x))
// and is spread over the four surrounding HR pixels with bilinear weights;
// taps outside the HR grid are dropped.

#include <cmath>
#include <string>
#include <vector>

#include "mesr/flow.hpp"
#include "mesr/tensor.hpp"

namespace mesr {

/// Dense [m, 2, H, W] flow tensor (channel 0: dx, channel 1: dy) from per-frame translations.
template <class Real>
Tensor<Real> expand_flows(const std::vector<FlowField>& flows, int height, int width)
{
    Tensor<Real> t(static_cast<int>(flows.size()), 2, height, width);
    for (int i = 0; i < t.n; ++i) {
        std::fill_n(t.plane_ptr(i, 0), t.plane(), static_cast<Real>(flows[i].dx));
        std::fill_n(t.plane_ptr(i, 1), t.plane(), static_cast<Real>(flows[i].dy));
    }
    return t;
}

template <class Real>
struct SplatResult {
    Tensor<Real> values;   // [m, N, sH, sW]
    Tensor<Real> weights;  // [m, 1, sH, sW]
};

namespace detail {

struct BilinearTaps {
    int u0, v0;
    double tu, tv;
};

inline BilinearTaps splat_target(double x, double y, double fx, double fy, int s)
{
    const double u = s * (x + fx), v = s * (y + fy);
    const double u0 = std::floor(u), v0 = std::floor(v);
    return {static_cast<int>(u0), static_cast<int>(v0), u - u0, v - v0};
}

template <class Real>
void check_splat_inputs(const Tensor<Real>& stack, const Tensor<Real>& flows, int s)
{
    if (s < 1) throw Error("spmc_splat: factor must be >= 1");
    if (flows.n != stack.n || flows.c != 2 || flows.h != stack.h || flows.w != stack.w)
        throw ShapeError("spmc_splat: flows " + flows.shape_str() + " do not match stack " + stack.shape_str());
}

} // namespace detail

template <class Real>
SplatResult<Real> spmc_splat(const Tensor<Real>& stack, const Tensor<Real>& flows, int s = 2)
{
    detail::check_splat_inputs(stack, flows, s);
    const int H = stack.h, W = stack.w, SH = s * H, SW = s * W;
    SplatResult<Real> out{Tensor<Real>(stack.n, stack.c, SH, SW), Tensor<Real>(stack.n, 1, SH, SW)};
    for (int i = 0; i < stack.n; ++i)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const auto t = detail::splat_target(x, y, flows(i, 0, y, x), flows(i, 1, y, x), s);
                const double wts[4] = {(1 - t.tu) * (1 - t.tv), t.tu * (1 - t.tv), (1 - t.tu) * t.tv, t.tu * t.tv};
                for (int k = 0; k < 4; ++k) {
                    const int u = t.u0 + (k & 1), v = t.v0 + (k >> 1);
                    if (u < 0 || u >= SW || v < 0 || v >= SH || wts[k] == 0.0) continue;
                    const Real wk = static_cast<Real>(wts[k]);
                    out.weights(i, 0, v, u) += wk;
                    for (int c = 0; c < stack.c; ++c) out.values(i, c, v, u) += wk * stack(i, c, y, x);
                }
            }
    return out;
}

template <class Real>
SplatResult<Real> spmc_splat(const Tensor<Real>& stack, const std::vector<FlowField>& flows, int s = 2)
{
    return spmc_splat(stack, expand_flows<Real>(flows, stack.h, stack.w), s);
}

template <class Real>
struct SplatGradients {
    Tensor<Real> stack;  // [m, N, H, W]
    Tensor<Real> flows;  // [m, 2, H, W]
};

/// Adjoint of spmc_splat given upstream gradients on the splatted values and weights.
/// Either upstream tensor may be empty (treated as zero).
template <class Real>
SplatGradients<Real> spmc_backward(const Tensor<Real>& stack, const Tensor<Real>& flows, int s,
                                   const Tensor<Real>& grad_values, const Tensor<Real>& grad_weights)
{
    detail::check_splat_inputs(stack, flows, s);
    const int H = stack.h, W = stack.w, SH = s * H, SW = s * W;
    const bool has_gv = !grad_values.v.empty(), has_gw = !grad_weights.v.empty();
    if (has_gv && (grad_values.n != stack.n || grad_values.c != stack.c || grad_values.h != SH || grad_values.w != SW))
        throw ShapeError("spmc_backward: grad_values shape " + grad_values.shape_str());
    if (has_gw && (grad_weights.n != stack.n || grad_weights.c != 1 || grad_weights.h != SH || grad_weights.w != SW))
        throw ShapeError("spmc_backward: grad_weights shape " + grad_weights.shape_str());

    SplatGradients<Real> g{Tensor<Real>(stack.n, stack.c, H, W), Tensor<Real>(stack.n, 2, H, W)};
    for (int i = 0; i < stack.n; ++i)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const auto t = detail::splat_target(x, y, flows(i, 0, y, x), flows(i, 1, y, x), s);
                const double wts[4] = {(1 - t.tu) * (1 - t.tv), t.tu * (1 - t.tv), (1 - t.tu) * t.tv, t.tu * t.tv};
                const double dwdu[4] = {-(1 - t.tv), (1 - t.tv), -t.tv, t.tv};
                const double dwdv[4] = {-(1 - t.tu), -t.tu, (1 - t.tu), t.tu};
                double gfx = 0.0, gfy = 0.0;
                for (int k = 0; k < 4; ++k) {
                    const int u = t.u0 + (k & 1), v = t.v0 + (k >> 1);
                    if (u < 0 || u >= SW || v < 0 || v >= SH) continue;
                    // Upstream sensitivity of this tap's weight.
                    double tap = has_gw ? static_cast<double>(grad_weights(i, 0, v, u)) : 0.0;
                    if (has_gv)
                        for (int c = 0; c < stack.c; ++c) {
                            const double gv = grad_values(i, c, v, u);
                            g.stack(i, c, y, x) += static_cast<Real>(wts[k] * gv);
                            tap += gv * stack(i, c, y, x);
                        }
                    gfx += s * dwdu[k] * tap;
                    gfy += s * dwdv[k] * tap;
                }
                g.flows(i, 0, y, x) = static_cast<Real>(gfx);
                g.flows(i, 1, y, x) = static_cast<Real>(gfy);
            }
    return g;
}

/// Which temporal statistics feed the decoder; the aggregation weight is always appended.
struct PoolMode {
    bool avg = true;
    bool max = true;
    bool std = true;

    int stat_count() const { return int(avg) + int(max) + int(std); }

    std::string name() const
    {
        std::string s;
        if (avg) s += 'A';
        if (max) s += 'M';
        if (std) s += 'S';
        return s;
    }

    static PoolMode parse(const std::string& s)
    {
        PoolMode m{false, false, false};
        for (char ch : s) {
            if (ch == 'A') m.avg = true;
            else if (ch == 'M') m.max = true;
            else if (ch == 'S') m.std = true;
            else throw Error("PoolMode: unknown statistic '" + std::string(1, ch) + "' in \"" + s + "\"");
        }
        if (m.stat_count() == 0) throw Error("PoolMode: empty mode");
        return m;
    }

    friend bool operator==(const PoolMode&, const PoolMode&) = default;
};

template <class Real>
struct PooledFeatures {
    Tensor<Real> avg;         // [1, N, sH, sW]
    Tensor<Real> max;         // [1, N, sH, sW]
    Tensor<Real> std;         // [1, N, sH, sW]
    Tensor<Real> agg_weight;  // [1, 1, sH, sW]
};

/// avg = sum_i J_i / sum_i W_i (0 where no weight); max and population std over the
/// raw splatted values of all frames; agg_weight = sum_i W_i.
template <class Real>
PooledFeatures<Real> pool(const SplatResult<Real>& sp)
{
    const Tensor<Real>& J = sp.values;
    const int m = J.n, N = J.c, HH = J.h, WW = J.w;
    if (m < 1) throw Error("pool: need at least one frame");
    PooledFeatures<Real> p{Tensor<Real>(1, N, HH, WW), Tensor<Real>(1, N, HH, WW), Tensor<Real>(1, N, HH, WW),
                           Tensor<Real>(1, 1, HH, WW)};
    const std::size_t P = J.plane();
    for (std::size_t k = 0; k < P; ++k) {
        double wsum = 0.0;
        for (int i = 0; i < m; ++i) wsum += sp.weights.plane_ptr(i, 0)[k];
        p.agg_weight.v[k] = static_cast<Real>(wsum);
    }
    for (int c = 0; c < N; ++c)
        for (std::size_t k = 0; k < P; ++k) {
            double sum = 0.0, mx = J.plane_ptr(0, c)[k];
            for (int i = 0; i < m; ++i) {
                const double v = J.plane_ptr(i, c)[k];
                sum += v;
                if (v > mx) mx = v;
            }
            const double mu = sum / m;
            double var = 0.0;
            for (int i = 0; i < m; ++i) {
                const double d = J.plane_ptr(i, c)[k] - mu;
                var += d * d;
            }
            const double wsum = p.agg_weight.v[k];
            p.avg.plane_ptr(0, c)[k] = static_cast<Real>(wsum > 0.0 ? sum / wsum : 0.0);
            p.max.plane_ptr(0, c)[k] = static_cast<Real>(mx);
            p.std.plane_ptr(0, c)[k] = static_cast<Real>(std::sqrt(var / m));
        }
    return p;
}

/// Adjoint of pool(). Upstream gradients for unused statistics may be left empty.
/// Max routes to the first maximizing frame; std contributes nothing where std == 0.
template <class Real>
SplatResult<Real> pool_backward(const SplatResult<Real>& sp, const PooledFeatures<Real>& upstream)
{
    const Tensor<Real>& J = sp.values;
    const int m = J.n, N = J.c;
    const std::size_t P = J.plane();
    SplatResult<Real> g{Tensor<Real>(m, N, J.h, J.w), Tensor<Real>(m, 1, J.h, J.w)};
    const bool ga = !upstream.avg.v.empty(), gm = !upstream.max.v.empty(), gs = !upstream.std.v.empty(),
               gw = !upstream.agg_weight.v.empty();

    std::vector<double> wsum(P, 0.0);
    for (int i = 0; i < m; ++i)
        for (std::size_t k = 0; k < P; ++k) wsum[k] += sp.weights.plane_ptr(i, 0)[k];

    for (int c = 0; c < N; ++c)
        for (std::size_t k = 0; k < P; ++k) {
            double sum = 0.0, mx = J.plane_ptr(0, c)[k];
            int arg = 0;
            for (int i = 0; i < m; ++i) {
                const double v = J.plane_ptr(i, c)[k];
                sum += v;
                if (v > mx) {
                    mx = v;
                    arg = i;
                }
            }
            const double mu = sum / m;
            double var = 0.0;
            for (int i = 0; i < m; ++i) {
                const double d = J.plane_ptr(i, c)[k] - mu;
                var += d * d;
            }
            const double sd = std::sqrt(var / m);

            if (ga && wsum[k] > 0.0) {
                const double up = upstream.avg.plane_ptr(0, c)[k];
                const double dj = up / wsum[k];
                const double dw = -up * sum / (wsum[k] * wsum[k]);
                for (int i = 0; i < m; ++i) {
                    g.values.plane_ptr(i, c)[k] += static_cast<Real>(dj);
                    g.weights.plane_ptr(i, 0)[k] += static_cast<Real>(dw);
                }
            }
            if (gm) g.values.plane_ptr(arg, c)[k] += upstream.max.plane_ptr(0, c)[k];
            if (gs && sd > 0.0) {
                const double up = upstream.std.plane_ptr(0, c)[k];
                for (int i = 0; i < m; ++i)
                    g.values.plane_ptr(i, c)[k] += static_cast<Real>(up * (J.plane_ptr(i, c)[k] - mu) / (m * sd));
            }
        }
    if (gw)
        for (int i = 0; i < m; ++i)
            for (std::size_t k = 0; k < P; ++k) g.weights.plane_ptr(i, 0)[k] += upstream.agg_weight.v[k];
    return g;
}

/// Decoder input: the selected statistics followed by the aggregation weight, [1, kN+1, sH, sW].
template <class Real>
Tensor<Real> concat_pooled(const PooledFeatures<Real>& p, const PoolMode& mode)
{
    const int N = p.avg.c;
    Tensor<Real> out(1, mode.stat_count() * N + 1, p.avg.h, p.avg.w);
    int ch = 0;
    auto put = [&](const Tensor<Real>& t) {
        for (int c = 0; c < t.c; ++c, ++ch) std::copy_n(t.plane_ptr(0, c), t.plane(), out.plane_ptr(0, ch));
    };
    if (mode.avg) put(p.avg);
    if (mode.max) put(p.max);
    if (mode.std) put(p.std);
    put(p.agg_weight);
    return out;
}

/// Splits a gradient on the concatenated decoder input back into per-statistic gradients.
template <class Real>
PooledFeatures<Real> split_pooled_grad(const Tensor<Real>& g, const PoolMode& mode, int N)
{
    PooledFeatures<Real> out;
    int ch = 0;
    auto take = [&](Tensor<Real>& t, int count) {
        t = Tensor<Real>(1, count, g.h, g.w);
        for (int c = 0; c < count; ++c, ++ch) std::copy_n(g.plane_ptr(0, ch), g.plane(), t.plane_ptr(0, c));
    };
    if (mode.avg) take(out.avg, N);
    if (mode.max) take(out.max, N);
    if (mode.std) take(out.std, N);
    take(out.agg_weight, 1);
    return out;
}

} // namespace mesr
