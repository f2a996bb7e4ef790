#include <gtest/gtest.h>

#include "mesr/noise_sim.hpp"
#include "mesr/register.hpp"
#include "mesr/scenes.hpp"
#include "oracles.hpp"

using namespace mesr;

namespace {

ImageGrid lr_scene(std::uint64_t seed, int lr_size = 64)
{
    SceneConfig sc;
    sc.size = 2 * lr_size;
    Rng rng(seed);
    return subsample(render_scene(sc, rng), 2);
}

ImageGrid circular_shift(const ImageGrid& img, int dx, int dy)
{
    ImageGrid out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const int sx = ((x - dx) % img.width() + img.width()) % img.width();
            const int sy = ((y - dy) % img.height() + img.height()) % img.height();
            out(x, y) = img(sx, sy);
        }
    return out;
}

} // namespace

TEST(Pullback, ZeroAndIntegerFlows)
{
    Rng rng(1);
    const ImageGrid img = oracle::random_image(12, 10, rng);
    const ImageGrid same = pullback(img, {});
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(same[i], img[i], 1e-15);
    const ImageGrid p = pullback(img, {1.0, 0.0});
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 11; ++x) EXPECT_NEAR(p(x, y), img(x + 1, y), 1e-12);
    EXPECT_THROW(pullback(img, {std::nan(""), 0.0}), Error);
}

TEST(Pullback, WarpIsInverse)
{
    Rng rng(2);
    const ImageGrid img = oracle::random_image(12, 12, rng);
    const FlowField f{2.0, -1.0};
    const ImageGrid w = warp_to_reference(pullback(img, f), f);
    for (int y = 3; y < 9; ++y)
        for (int x = 3; x < 9; ++x) EXPECT_NEAR(w(x, y), img(x, y), 1e-12);
}

TEST(FlowField, DenseView)
{
    const FlowField f{0.5, -1.5};
    const auto d = f.dense(3, 2);
    ASSERT_EQ(d.size(), 12u);
    for (std::size_t i = 0; i < d.size(); i += 2) {
        EXPECT_EQ(d[i], 0.5);
        EXPECT_EQ(d[i + 1], -1.5);
    }
    EXPECT_TRUE(f.within_range());
    EXPECT_FALSE((FlowField{5.5, 0}).within_range());
}

TEST(DetailHighpass, ConstantAndSharedPath)
{
    for (double v : detail_highpass(ImageGrid(20, 20, 9.0)).data()) EXPECT_NEAR(v, 0.0, 1e-12);
    Rng rng(3);
    const ImageGrid img = oracle::random_image(20, 16, rng);
    EXPECT_EQ(detail_highpass(img).values(), decompose(img).detail.values());
}

TEST(DetailHighpass, ZeroMeanInterior)
{
    Rng rng(4);
    const ImageGrid img = oracle::random_image(256, 256, rng, 0.0, 1.0);
    const ImageGrid d = detail_highpass(img);
    double s = 0;
    int n = 0;
    for (int y = 4; y < 252; ++y)
        for (int x = 4; x < 252; ++x) {
            s += d(x, y);
            ++n;
        }
    EXPECT_LT(std::abs(s / n), 1e-3);
}

TEST(PhaseCorrelation, CircularIntegerShift)
{
    const ImageGrid ref = lr_scene(5);
    const ImageGrid mov = circular_shift(ref, 3, -2);
    const PhaseCorrelation pc = phase_correlation(ref, mov, 0.0);
    // mov(x) = ref(x - (3, -2)), so F = (-3, 2)
    EXPECT_EQ(pc.dx, -3);
    EXPECT_EQ(pc.dy, 2);
    const PhaseCorrelation pcw = phase_correlation(ref, mov);
    EXPECT_EQ(pcw.dx, -3);
    EXPECT_EQ(pcw.dy, 2);
}

TEST(Translation, IdentityPair)
{
    const ImageGrid ref = lr_scene(6);
    const FlowField f = estimate_translation(ref, ref);
    EXPECT_NEAR(f.dx, 0.0, 1e-6);
    EXPECT_NEAR(f.dy, 0.0, 1e-6);
}

TEST(Translation, SubpixelNoiseless)
{
    const ImageGrid ref = lr_scene(7);
    const ImageGrid mov = shift_subpixel(ref, 0.30, -0.45);
    const FlowField f = estimate_translation(ref, mov);
    EXPECT_NEAR(f.dx, -0.30, 0.05);
    EXPECT_NEAR(f.dy, 0.45, 0.05);
}

TEST(Translation, SimulatedPairsNoiseless)
{
    // the acceptance suite averages over 50 pairs; a smaller sample here
    double err = 0.0;
    const int n = 10;
    for (int k = 0; k < n; ++k) {
        SceneConfig sc;
        Rng rng(100 + k);
        const ImageGrid hr = render_scene(sc, rng);
        const double dx = rng.uniform(-4, 4), dy = rng.uniform(-4, 4);
        const ImageGrid a = subsample(hr, 2), b = subsample(shift_subpixel(hr, dx, dy), 2);
        const FlowField f = estimate_translation(a, b);
        err += std::hypot(f.dx + dx / 2, f.dy + dy / 2);
    }
    EXPECT_LT(err / n, 0.05);
}

TEST(Translation, GainAndOffsetInvariant)
{
    const ImageGrid ref = lr_scene(8);
    ImageGrid mov = shift_subpixel(ref, -0.7, 1.2);
    for (auto& v : mov.data()) v = 2.5 * v + 40.0;
    const FlowField f = estimate_translation(ref, mov);
    EXPECT_NEAR(f.dx, 0.7, 0.05);
    EXPECT_NEAR(f.dy, -1.2, 0.05);
}

TEST(Translation, Errors)
{
    const ImageGrid flat(64, 64, 100.0);
    try {
        estimate_translation(flat, flat);
        FAIL();
    } catch (const RegistrationError& e) {
        EXPECT_NE(std::string(e.what()).find("no texture"), std::string::npos);
    }
    EXPECT_THROW(estimate_translation(ImageGrid(16, 16), ImageGrid(16, 16)), RegistrationError);
    EXPECT_THROW(estimate_translation(ImageGrid(64, 64), ImageGrid(64, 32)), ShapeError);
}

TEST(Translation, ClampedToRange)
{
    const ImageGrid ref = lr_scene(9);
    RegistrationOptions opt;
    opt.max_flow = 1.0;
    const FlowField f = estimate_translation(ref, shift_subpixel(ref, 3.0, 0.0), opt);
    EXPECT_EQ(f.dx, -1.0);
}

TEST(WarpingLoss, ZeroForIdenticalFrames)
{
    const ImageGrid a = lr_scene(10, 32);
    const std::vector<ImageGrid> frames{a, a, a};
    const std::vector<FlowField> flows(3);
    EXPECT_NEAR(warping_loss(frames, flows, 0), 0.0, 1e-12);
    EXPECT_THROW(warping_loss(frames, flows, 3), Error);
}

TEST(WarpingLoss, CorrectFlowsBeatZeroFlows)
{
    const ImageGrid ref = lr_scene(11);
    const ImageGrid mov = shift_subpixel(ref, 0.6, -0.4);
    const std::vector<ImageGrid> frames{ref, mov};
    const std::vector<FlowField> good{FlowField{}, FlowField{-0.6, 0.4}}, zero(2);
    const double lg = warping_loss(frames, good, 0, 0.0), lz = warping_loss(frames, zero, 0, 0.0);
    EXPECT_LT(lg, lz);
    EXPECT_LT(lg, 0.2 * lz);
}

TEST(FlowTv, ConstantFlowHasZeroTv)
{
    const auto d = FlowField{1.3, -0.2}.dense(8, 8);
    EXPECT_EQ(flow_tv(d, 8, 8), 0.0);
    std::vector<double> ramp(2 * 4 * 4, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) ramp[2 * (y * 4 + x)] = x;
    // 3 unit steps per row, 4 rows, over 16 pixels
    EXPECT_NEAR(flow_tv(ramp, 4, 4), 12.0 / 16.0, 1e-12);
}

TEST(ExposureRatio, NoiselessDouble)
{
    const ImageGrid a = lr_scene(12);
    const ExposureRatioEstimate r = estimate_exposure_ratio(a, 2.0 * a);
    EXPECT_NEAR(r.ratio, 2.0, 1e-9);
    EXPECT_GT(r.n_valid, 0u);
}

TEST(ExposureRatio, SaturatedPixelsMasked)
{
    const ImageGrid a = lr_scene(13);
    ImageGrid b = 2.0 * a;
    Rng rng(1);
    const double sat = kDefaultSaturation;
    int count = 0;
    for (auto& v : b.data())
        if (rng.uniform() < 0.1) {
            v = sat + 10.0;
            ++count;
        }
    ASSERT_GT(count, 0);
    const ExposureRatioEstimate r = estimate_exposure_ratio(a, b, sat);
    EXPECT_NEAR(r.ratio, 2.0, 1e-3);
    EXPECT_LT(r.n_valid, a.size() - static_cast<std::size_t>(count));
}

TEST(ExposureRatio, AllMasked)
{
    const ImageGrid a = lr_scene(14);
    try {
        estimate_exposure_ratio(a, a, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("all pixels masked"), std::string::npos);
    }
}

TEST(ExposureRatio, NoisyRatioThree)
{
    SceneConfig sc;
    Rng rng(15);
    const ImageGrid hr = render_scene(sc, rng);
    const ImageGrid clean_a = subsample(hr, 2), clean_b = subsample(shift_subpixel(hr, 1.3, -0.7), 2);
    const double ea = 0.8, eb = 2.4;
    const ImageGrid a = acquire(clean_a, ea, kSkySatNoise, rng), b = acquire(clean_b, eb, kSkySatNoise, rng);
    const ExposureRatioEstimate r = estimate_exposure_ratio(a, b);
    EXPECT_NEAR(r.ratio / 3.0, 1.0, 0.01);
}
