#include <gtest/gtest.h>

#include "mesr/base_detail.hpp"
#include "mesr/noise_sim.hpp"
#include "mesr/scenes.hpp"
#include "oracles.hpp"

using namespace mesr;

TEST(Decompose, Constant)
{
    const BaseDetailPair p = decompose(ImageGrid(16, 12, 742.0));
    for (double v : p.base.data()) EXPECT_NEAR(v, 742.0, 1e-10);
    for (double v : p.detail.data()) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(Decompose, RampHasNoInteriorDetail)
{
    ImageGrid r(24, 20);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 24; ++x) r(x, y) = 10.0 + 3.0 * x - 1.5 * y;
    const BaseDetailPair p = decompose(r);
    for (int y = 4; y < 16; ++y)
        for (int x = 4; x < 20; ++x) EXPECT_NEAR(p.detail(x, y), 0.0, 1e-10);
}

TEST(Recompose, TrivialPairs)
{
    Rng rng(1);
    const ImageGrid d = oracle::random_image(8, 8, rng);
    EXPECT_EQ(recompose({ImageGrid(8, 8, 5.0), ImageGrid(8, 8)}).values(), ImageGrid(8, 8, 5.0).values());
    EXPECT_EQ(recompose({ImageGrid(8, 8), d}).values(), d.values());
    EXPECT_THROW(recompose({ImageGrid(8, 8), ImageGrid(8, 9)}), ShapeError);
}

TEST(Recompose, RoundTrip)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const ImageGrid img = oracle::random_image(rng.uniform_int(10, 30), rng.uniform_int(10, 30), rng, 0, 4000);
        const ImageGrid back = recompose(decompose(img, rng.uniform(0.5, 2.0)));
        for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(back[i], img[i], 1e-6);
    }
}

TEST(Decompose, Linear)
{
    Rng rng(2);
    const ImageGrid x = oracle::random_image(20, 20, rng, -10, 10), y = oracle::random_image(20, 20, rng, -10, 10);
    const double a = 1.7, b = -0.4;
    const BaseDetailPair l = decompose(a * x + b * y), px = decompose(x), py = decompose(y);
    for (std::size_t i = 0; i < l.detail.size(); ++i) {
        EXPECT_NEAR(l.detail[i], a * px.detail[i] + b * py.detail[i], 1e-9);
        EXPECT_NEAR(l.base[i], a * px.base[i] + b * py.base[i], 1e-9);
    }
}

TEST(Decompose, GainErrorMostlyLandsInBase)
{
    SceneConfig sc;
    sc.size = 96;
    Rng rng(3);
    const ImageGrid img = subsample(render_scene(sc, rng), 2);
    const double delta = 0.2;
    const BaseDetailPair p = decompose(img), q = decompose((1.0 + delta) * img);
    double dl1 = 0, bl1 = 0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        EXPECT_NEAR(q.detail[i], (1.0 + delta) * p.detail[i], 1e-9 * (1.0 + std::abs(p.detail[i])));
        dl1 += std::abs(delta * p.detail[i]);
        bl1 += std::abs(delta * p.base[i]);
    }
    EXPECT_LT(dl1 / bl1, 1.0);
    EXPECT_LT(dl1 / bl1, 0.2);
}

TEST(FuseBases, SingleFrameIsZoom)
{
    Rng rng(4);
    const ImageGrid b = oracle::random_image(10, 8, rng, 100, 200);
    const std::vector<ImageGrid> bases{b};
    const std::vector<double> e{1.0};
    const std::vector<FlowField> f{FlowField{}};
    const ImageGrid out = fuse_bases(bases, e, f, 2);
    const ImageGrid z = bilinear_zoom(b, 2);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(out[i], z[i], 1e-12);
}

TEST(FuseBases, WeightedMean)
{
    const std::vector<ImageGrid> bases{ImageGrid(6, 6, 1.0), ImageGrid(6, 6, 3.0)};
    const std::vector<double> e{1.0, 3.0};
    const std::vector<FlowField> f(2);
    const ImageGrid out = fuse_bases(bases, e, f, 2);
    EXPECT_EQ(out.width(), 12);
    for (double v : out.data()) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(FuseBases, AlignsWithFlows)
{
    // a frame whose content sits at x + F is pulled back onto the reference grid
    SceneConfig sc;
    sc.size = 64;
    Rng rng(5);
    const ImageGrid ref = convolve(render_scene(sc, rng), Kernel::gaussian(1.5));
    const ImageGrid moved = shift_subpixel(ref, 1.0, -2.0);  // moved(x) = ref(x - (1,-2))
    const std::vector<ImageGrid> bases{ref, moved};
    const std::vector<double> e{1.0, 1.0};
    const std::vector<FlowField> f{FlowField{}, FlowField{-1.0, 2.0}};
    const ImageGrid avg = average_bases(bases, e, f);
    for (int y = 6; y < 58; ++y)
        for (int x = 6; x < 58; ++x) EXPECT_NEAR(avg(x, y), ref(x, y), 1e-9);
}

TEST(FuseBases, Errors)
{
    const std::vector<ImageGrid> none;
    const std::vector<double> e;
    const std::vector<FlowField> f;
    EXPECT_THROW(fuse_bases(none, e, f), Error);
    const std::vector<ImageGrid> two{ImageGrid(4, 4), ImageGrid(4, 4)};
    const std::vector<double> one{1.0};
    const std::vector<FlowField> f2(2);
    EXPECT_THROW(fuse_bases(two, one, f2), Error);
}

TEST(AnchorGain, InteriorMeanRatio)
{
    Rng rng(6);
    const ImageGrid img = oracle::random_image(12, 12, rng, 10, 20);
    EXPECT_NEAR(anchor_gain(img, 1.25 * img), 1.25, 1e-12);
    EXPECT_EQ(anchor_gain(ImageGrid(12, 12), img), 1.0);
}

TEST(BaseNoise, ScaledBySumOfSquares)
{
    const Kernel g = Kernel::gaussian(1.0);
    const BaseNoise bn = base_noise(kSkySatNoise, g);
    EXPECT_NEAR(bn.alpha, 0.119 * g.sum_of_squares(), 1e-15);
    EXPECT_NEAR(bn.beta, 12.050 * g.sum_of_squares(), 1e-15);
}

TEST(Granados, EqualSamplesOneIteration)
{
    const std::vector<double> z(5, 321.0), e{0.5, 1, 2, 3, 4};
    const MleResult r = granados_mle(z, e, 0.1, 1.0);
    EXPECT_NEAR(r.value, 321.0, 1e-9);
    EXPECT_LE(r.iterations, 1);
    EXPECT_TRUE(r.converged);
}

TEST(Granados, ZeroAlphaIsSquaredExposureWeighting)
{
    const std::vector<double> z{10, 20, 35}, e{1, 2, 3};
    const MleResult r = granados_mle(z, e, 0.0, 2.0);
    EXPECT_NEAR(r.value, (1 * 10 + 4 * 20 + 9 * 35) / 14.0, 1e-12);
    EXPECT_LE(r.iterations, 1);
}

TEST(Granados, Errors)
{
    const std::vector<double> z{1.0}, e{1.0, 2.0};
    EXPECT_THROW(granados_mle(z, e, 1.0, 1.0), Error);
    EXPECT_THROW(granados_mle(z, std::vector<double>{1.0}, 0.0, 0.0), Error);
}

TEST(Granados, MatchesLikelihoodGridSearch)
{
    const BaseNoise bn = base_noise(kSkySatNoise);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(1000 + seed);
        const int m = rng.uniform_int(2, 15);
        const double y = rng.uniform(5.0, 3000.0);
        std::vector<double> z(m), e(m);
        for (int i = 0; i < m; ++i) {
            e[i] = std::pow(1.3, rng.uniform_int(-5, 5));
            z[i] = y + std::sqrt((bn.alpha * e[i] * y + bn.beta)) / e[i] * rng.normal();
        }
        const MleResult r = granados_mle(z, e, bn.alpha, bn.beta);
        ASSERT_TRUE(r.converged);
        double zmax = 0.0, zlo = z[0], zhi = z[0];
        for (double v : z) {
            zmax = std::max(zmax, std::abs(v));
            zlo = std::min(zlo, v);
            zhi = std::max(zhi, v);
        }
        const double grid = oracle::mle_grid_search(z, e, bn.alpha, bn.beta, zlo - 1.0, zhi + 1.0);
        EXPECT_LT(std::abs(r.value - grid), 1e-4 * zmax) << "seed " << seed;

        // fixed-point equation
        double num = 0, den = 0;
        for (int i = 0; i < m; ++i) {
            const double w = e[i] * e[i] / (bn.alpha * e[i] * std::max(r.value, 0.0) + bn.beta);
            num += w * z[i];
            den += w;
        }
        EXPECT_LT(std::abs(num / den - r.value), 1e-6 * zmax);
    }
}

TEST(Granados, HighSnrLimitIsExposureWeighting)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const int m = rng.uniform_int(2, 15);
        const double y = rng.uniform(1000, 3000), alpha = 1.0, beta = 1e-3;
        std::vector<double> z(m), e(m);
        double num = 0, den = 0;
        for (int i = 0; i < m; ++i) {
            e[i] = std::pow(1.3, rng.uniform_int(-5, 5));
            z[i] = y + std::sqrt(alpha * e[i] * y + beta) / e[i] * rng.normal();
            num += e[i] * z[i];
            den += e[i];
        }
        const MleResult r = granados_mle(z, e, alpha, beta);
        EXPECT_NEAR(r.value / (num / den), 1.0, 1e-3);
    }
}
