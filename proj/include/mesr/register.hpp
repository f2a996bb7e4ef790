#pragma once

// Global translation registration (phase correlation + inverse compositional
// Gauss-Newton on band-passed images), detail-domain warping loss, and
// exposure-ratio estimation between two frames.

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <fftw3.h>

#include "mesr/base_detail.hpp"
#include "mesr/flow.hpp"
#include "mesr/image.hpp"

namespace mesr {

class RegistrationError : public Error {
public:
    using Error::Error;
};

/// High-pass residual img - img * G_1; the same code path as decompose().detail.
inline ImageGrid detail_highpass(const ImageGrid& img) { return decompose(img, 1.0).detail; }

namespace detail {

// The FFTW planner is not reentrant; execution of distinct plans is.
inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

class FftBuffer {
public:
    explicit FftBuffer(std::size_t n) : data_(fftw_alloc_complex(n)), n_(n) {}
    ~FftBuffer() { fftw_free(data_); }
    FftBuffer(const FftBuffer&) = delete;
    FftBuffer& operator=(const FftBuffer&) = delete;

    fftw_complex* get() { return data_; }
    std::size_t size() const { return n_; }

private:
    fftw_complex* data_;
    std::size_t n_;
};

inline void fft2d(FftBuffer& buf, int w, int h, int sign)
{
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_2d(h, w, buf.get(), buf.get(), sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

/// Gaussian-prefiltered band (detail layer or mean-removed image), scaled to unit RMS.
inline ImageGrid registration_band(const ImageGrid& img, double* rms_out = nullptr, double sigma = 1.0, bool highpass = true)
{
    ImageGrid band = convolve(highpass ? detail_highpass(img) : img - ImageGrid(img.width(), img.height(), mean(img)), Kernel::gaussian(sigma));
    double ss = 0.0, scale = 0.0;
    for (double v : band.data()) {
        ss += v * v;
        scale = std::max(scale, std::abs(v));
    }
    const double rms = std::sqrt(ss / static_cast<double>(band.size()));
    if (rms_out) *rms_out = rms;
    if (rms > 0.0)
        for (auto& v : band.data()) v /= rms;
    return band;
}

/// Replaces pixels at or above `threshold` by a Gaussian-weighted mean of valid neighbours.
inline ImageGrid fill_saturated(const ImageGrid& img, double threshold)
{
    ImageGrid valid(img.width(), img.height());
    ImageGrid masked(img.width(), img.height());
    bool any = false;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const bool ok = img[i] < threshold;
        any |= !ok;
        valid[i] = ok ? 1.0 : 0.0;
        masked[i] = ok ? img[i] : 0.0;
    }
    if (!any) return img;
    const Kernel g = Kernel::gaussian(1.5);
    const ImageGrid num = convolve(masked, g), den = convolve(valid, g);
    ImageGrid out = img;
    for (std::size_t i = 0; i < img.size(); ++i)
        if (valid[i] == 0.0) out[i] = den[i] > 1e-12 ? num[i] / den[i] : threshold;
    return out;
}

} // namespace detail

struct PhaseCorrelation {
    int dx = 0;
    int dy = 0;
    double peak = 0.0;
};

/// Integer translation d with mov(x) ~ ref(x + d), from the normalized cross-power spectrum.
inline PhaseCorrelation phase_correlation(const ImageGrid& ref, const ImageGrid& mov, double taper = 0.1)
{
    require_same_shape(ref, mov, "phase_correlation");
    const int w = ref.width(), h = ref.height();
    const std::size_t n = ref.size();
    auto window = [&](int i, int len) {
        const double t = taper * len;
        const double d = std::min(i + 0.5, len - i - 0.5);
        return d >= t ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * d / t);
    };
    detail::FftBuffer fa(n), fb(n);
    const double ma = mean(ref), mb = mean(mov);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double win = taper > 0.0 ? window(x, w) * window(y, h) : 1.0;
            const std::size_t k = static_cast<std::size_t>(y) * w + x;
            fa.get()[k][0] = (ref(x, y) - ma) * win;
            fa.get()[k][1] = 0.0;
            fb.get()[k][0] = (mov(x, y) - mb) * win;
            fb.get()[k][1] = 0.0;
        }
    detail::fft2d(fa, w, h, FFTW_FORWARD);
    detail::fft2d(fb, w, h, FFTW_FORWARD);
    for (std::size_t k = 0; k < n; ++k) {
        const std::complex<double> A(fa.get()[k][0], fa.get()[k][1]);
        const std::complex<double> B(fb.get()[k][0], fb.get()[k][1]);
        std::complex<double> r = B * std::conj(A);
        const double mag = std::abs(r);
        r = mag > 1e-300 ? r / mag : 0.0;
        fa.get()[k][0] = r.real();
        fa.get()[k][1] = r.imag();
    }
    detail::fft2d(fa, w, h, FFTW_BACKWARD);
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k)
        if (fa.get()[k][0] > fa.get()[best][0]) best = k;
    int px = static_cast<int>(best % w), py = static_cast<int>(best / w);
    if (px > w / 2) px -= w;
    if (py > h / 2) py -= h;
    // The peak sits at -d.
    return {-px, -py, fa.get()[best][0] / static_cast<double>(n)};
}

struct RegistrationOptions {
    int max_iter = 30;
    double stop = 1e-4;        // px
    double max_flow = kMaxFlow;
    int margin = 8;            // px excluded from the Gauss-Newton sums
    std::optional<double> saturation;  // clip level of the sensor; see estimate_translation
    double band_sigma = 1.0;  // matching band: G_sigma * img, mean removed, unit RMS
    bool highpass = false;    // match on the detail layer instead
};

/// Translation F with mov(x) ~ ref(x + F): the flow from `mov` toward `ref`.
inline FlowField estimate_translation(const ImageGrid& ref, const ImageGrid& mov, const RegistrationOptions& opt = {})
{
    require_same_shape(ref, mov, "estimate_translation");
    if (std::min(ref.width(), ref.height()) < 32) throw RegistrationError("estimate_translation: images must be at least 32x32");

    const ImageGrid ref_in = opt.saturation ? detail::fill_saturated(ref, *opt.saturation) : ref;
    const ImageGrid mov_in = opt.saturation ? detail::fill_saturated(mov, *opt.saturation) : mov;
    double rms_t = 0.0, rms_m = 0.0;
    ImageGrid T = detail::registration_band(ref_in, &rms_t, opt.band_sigma, opt.highpass);
    ImageGrid M = detail::registration_band(mov_in, &rms_m, opt.band_sigma, opt.highpass);
    auto scale_of = [](const ImageGrid& img) {
        double s = 0.0;
        for (double v : img.data()) s = std::max(s, std::abs(v));
        return s;
    };
    if (!(rms_t > 1e-9 * (1.0 + scale_of(ref))) || !(rms_m > 1e-9 * (1.0 + scale_of(mov))))
        throw RegistrationError("estimate_translation: no texture");

    PhaseCorrelation pc = phase_correlation(T, M);
    const int w = ref.width(), h = ref.height();
    const int margin = std::min(opt.margin, std::min(w, h) / 4);

    // With saturation, a rough gain r at the integer offset lets both images be clipped at
    // matching levels (ref at S / r, mov at r S, whichever is lower than S), so that they
    // stay proportional including the clipped areas.
    if (opt.saturation) {
        const double S = *opt.saturation;
        std::vector<double> ratios;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int mx = x - pc.dx, my = y - pc.dy;
                if (mx < 0 || my < 0 || mx >= w || my >= h) continue;
                const double a = ref(x, y), b = mov(mx, my);
                if (a < S && b < S && a > 1e-6 * S && b > 1e-6 * S) ratios.push_back(b / a);
            }
        if (!ratios.empty()) {
            std::nth_element(ratios.begin(), ratios.begin() + static_cast<long>(ratios.size() / 2), ratios.end());
            const double r = ratios[ratios.size() / 2];
            const double lr = std::min(S, S / r), lm = std::min(S, S * r);
            ImageGrid rc = ref, mc = mov;
            for (auto& v : rc.data()) v = std::min(v, lr);
            for (auto& v : mc.data()) v = std::min(v, lm);
            T = detail::registration_band(rc, &rms_t, opt.band_sigma, opt.highpass);
            M = detail::registration_band(mc, &rms_m, opt.band_sigma, opt.highpass);
            if (!(rms_t > 0.0) || !(rms_m > 0.0)) throw RegistrationError("estimate_translation: no texture");
            pc = phase_correlation(T, M);
        }
    }

    // Template gradients and Gauss-Newton Hessian, fixed across iterations.
    std::vector<double> gx, gy, tv;
    std::vector<int> px, py;
    double h11 = 0.0, h12 = 0.0, h22 = 0.0;
    for (int y = margin; y < h - margin; ++y)
        for (int x = margin; x < w - margin; ++x) {
            const double ax = 0.5 * (T(x + 1, y) - T(x - 1, y));
            const double ay = 0.5 * (T(x, y + 1) - T(x, y - 1));
            gx.push_back(ax);
            gy.push_back(ay);
            tv.push_back(T(x, y));
            px.push_back(x);
            py.push_back(y);
            h11 += ax * ax;
            h12 += ax * ay;
            h22 += ay * ay;
        }
    const double det = h11 * h22 - h12 * h12;
    if (!(det > 1e-12 * (h11 + h22) * (h11 + h22))) throw RegistrationError("estimate_translation: no texture");

    // mov(x + q) ~ ref(x) with q = -F.
    double qx = -pc.dx, qy = -pc.dy;
    for (int it = 0; it < opt.max_iter; ++it) {
        double bx = 0.0, by = 0.0;
        for (std::size_t k = 0; k < tv.size(); ++k) {
            const double e = sample_bicubic(M, px[k] + qx, py[k] + qy) - tv[k];
            bx += gx[k] * e;
            by += gy[k] * e;
        }
        const double sx = (h22 * bx - h12 * by) / det;
        const double sy = (h11 * by - h12 * bx) / det;
        qx -= sx;
        qy -= sy;
        if (std::hypot(sx, sy) < opt.stop) break;
    }
    FlowField f{-qx, -qy};
    f.dx = std::clamp(f.dx, -opt.max_flow, opt.max_flow);
    f.dy = std::clamp(f.dy, -opt.max_flow, opt.max_flow);
    return f;
}

/// Anisotropic forward-difference total variation of a dense flow (interleaved dx, dy),
/// averaged over pixels.
inline double flow_tv(std::span<const double> dense, int width, int height)
{
    double acc = 0.0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t k = 2 * (static_cast<std::size_t>(y) * width + x);
            for (int c = 0; c < 2; ++c) {
                if (x + 1 < width) acc += std::abs(dense[k + 2 + c] - dense[k + c]);
                if (y + 1 < height) acc += std::abs(dense[k + 2 * static_cast<std::size_t>(width) + c] - dense[k + c]);
            }
        }
    return acc / (static_cast<double>(width) * height);
}

/// Motion loss: sum over frames of the mean |Detail(I_i - Pullback(I_r, F_i))| inside a
/// `border`-pixel frame, plus lambda1 * TV(F_i).
inline double warping_loss(std::span<const ImageGrid> frames, std::span<const FlowField> flows, int reference_index,
                           double lambda1 = 0.003, int border = 2)
{
    if (frames.size() != flows.size()) throw Error("warping_loss: flows must align with frames");
    if (reference_index < 0 || reference_index >= static_cast<int>(frames.size()))
        throw Error("warping_loss: reference_index out of range");
    const ImageGrid& ref = frames[reference_index];
    double total = 0.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const ImageGrid residual = detail_highpass(frames[i] - pullback(ref, flows[i]));
        double acc = 0.0;
        std::size_t n = 0;
        for (int y = border; y < residual.height() - border; ++y)
            for (int x = border; x < residual.width() - border; ++x) {
                acc += std::abs(residual(x, y));
                ++n;
            }
        total += n ? acc / static_cast<double>(n) : 0.0;
        if (lambda1 != 0.0) {
            const auto dense = flows[i].dense(ref.width(), ref.height());
            total += lambda1 * flow_tv(dense, ref.width(), ref.height());
        }
    }
    return total;
}

struct ExposureRatioEstimate {
    double ratio = 1.0;
    std::size_t n_valid = 0;
    double saturation_threshold = 0.0;
    FlowField flow;
};

inline constexpr double kDefaultSaturation = 0.98 * 4095.0;

/// Median over unsaturated pixels of b (registered onto a) divided by a.
inline ExposureRatioEstimate estimate_exposure_ratio(const ImageGrid& a, const ImageGrid& b,
                                                     double saturation_threshold = kDefaultSaturation,
                                                     double peak = 3400.0)
{
    require_same_shape(a, b, "estimate_exposure_ratio");
    bool any = false;
    for (std::size_t i = 0; i < a.size() && !any; ++i) any = a[i] < saturation_threshold && b[i] < saturation_threshold;
    if (!any) throw Error("estimate_exposure_ratio: all pixels masked");
    RegistrationOptions opt;
    opt.saturation = saturation_threshold;
    const FlowField flow = estimate_translation(a, b, opt);
    const ImageGrid bw = warp_to_reference(b, flow);
    const double eps_div = 1e-3 * peak;
    const FlowField src = flow.inverse();
    const int margin = static_cast<int>(std::ceil(std::max(std::abs(flow.dx), std::abs(flow.dy)))) + 2;

    std::vector<double> ratios;
    for (int y = margin; y < a.height() - margin; ++y)
        for (int x = margin; x < a.width() - margin; ++x) {
            if (a(x, y) >= saturation_threshold || a(x, y) < eps_div || bw(x, y) >= saturation_threshold) continue;
            // Skip pixels whose bicubic support in b touches a saturated sample.
            const int sx = static_cast<int>(std::floor(x + src.dx)), sy = static_cast<int>(std::floor(y + src.dy));
            bool clipped = false;
            for (int j = -1; j <= 2 && !clipped; ++j)
                for (int i = -1; i <= 2; ++i)
                    if (b(reflect_index(sx + i, b.width()), reflect_index(sy + j, b.height())) >= saturation_threshold) {
                        clipped = true;
                        break;
                    }
            if (!clipped) ratios.push_back(bw(x, y) / a(x, y));
        }
    if (ratios.empty()) throw Error("estimate_exposure_ratio: all pixels masked");

    const std::size_t mid = ratios.size() / 2;
    std::nth_element(ratios.begin(), ratios.begin() + mid, ratios.end());
    double med = ratios[mid];
    if (ratios.size() % 2 == 0) med = 0.5 * (med + *std::max_element(ratios.begin(), ratios.begin() + mid));
    return {med, ratios.size(), saturation_threshold, flow};
}

} // namespace mesr
