#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mesr/image.hpp"
#include "mesr/rng.hpp"
#include "mesr/sequence.hpp"
#include "oracles.hpp"

using namespace mesr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
    fs::path p = fs::temp_directory_path() / ("mesr_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

ImageGrid ramp(int w, int h, double gx = 1.0, double gy = 0.0, double c = 0.0)
{
    ImageGrid img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img(x, y) = c + gx * x + gy * y;
    return img;
}

} // namespace

TEST(ImageGrid, RejectsBadDims)
{
    EXPECT_THROW(ImageGrid(0, 3), Error);
    EXPECT_THROW(ImageGrid(3, -1), Error);
    EXPECT_THROW(ImageGrid(2, 2, std::vector<double>(3)), Error);
}

TEST(Container, SingleZeroFrame)
{
    const fs::path dir = temp_dir("zero");
    LRSequence seq;
    seq.frames = {ImageGrid(4, 4)};
    seq.exposures = {1.0};
    save_sequence(seq, dir);
    const LRSequence back = load_sequence(dir);
    ASSERT_EQ(back.size(), 1);
    EXPECT_EQ(back.width(), 4);
    for (double v : back.frames[0].data()) EXPECT_EQ(v, 0.0);
    fs::remove_all(dir);
}

TEST(Container, RoundTripBitExact)
{
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const fs::path dir = temp_dir("rt" + std::to_string(trial));
        LRSequence seq;
        const int w = rng.uniform_int(1, 17), h = rng.uniform_int(1, 13), m = rng.uniform_int(1, 5);
        for (int i = 0; i < m; ++i) {
            ImageGrid f = oracle::random_image(w, h, rng, -100.0, 4000.0);
            // f32 storage: only values representable in float survive bit-exactly
            for (auto& v : f.data()) v = static_cast<float>(v);
            seq.frames.push_back(f);
            seq.exposures.push_back(rng.uniform(0.1, 5.0));
        }
        seq.reference_index = rng.uniform_int(0, m - 1);
        seq.noise_model = NoiseModel{0.119, 12.05};
        save_sequence(seq, dir);
        const LRSequence back = load_sequence(dir);
        ASSERT_EQ(back.size(), m);
        EXPECT_EQ(back.reference_index, seq.reference_index);
        EXPECT_EQ(back.exposures, seq.exposures);
        ASSERT_TRUE(back.noise_model.has_value());
        EXPECT_EQ(back.noise_model->a, 0.119);
        for (int i = 0; i < m; ++i) EXPECT_EQ(back.frames[i].values(), seq.frames[i].values());
        fs::remove_all(dir);
    }
}

TEST(Container, MissingFrameFile)
{
    const fs::path dir = temp_dir("missing");
    LRSequence seq;
    seq.frames = {ImageGrid(4, 4), ImageGrid(4, 4), ImageGrid(4, 4)};
    seq.exposures = {1, 2, 3};
    save_sequence(seq, dir);
    fs::remove(dir / "frame_002.raw");
    try {
        load_sequence(dir);
        FAIL() << "expected an error";
    } catch (const ContainerError& e) {
        EXPECT_EQ(e.kind(), ContainerError::Kind::MissingFile);
        EXPECT_NE(std::string(e.what()).find("missing frame file"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(Container, MalformedMeta)
{
    const fs::path dir = temp_dir("bad");
    fs::create_directories(dir);
    {
        std::ofstream(dir / "meta.json") << "{ not json";
    }
    try {
        load_sequence(dir);
        FAIL();
    } catch (const ContainerError& e) {
        EXPECT_EQ(e.kind(), ContainerError::Kind::MalformedJson);
    }
    {
        std::ofstream(dir / "meta.json") << R"({"version":1,"width":2,"height":2,"frames":1,"exposures_ms":[0.0]})";
    }
    try {
        load_sequence(dir);
        FAIL();
    } catch (const ContainerError& e) {
        EXPECT_EQ(e.kind(), ContainerError::Kind::NonPositiveExposure);
    }
    {
        std::ofstream(dir / "meta.json") << R"({"version":1,"width":2,"height":2,"frames":2,"exposures_ms":[1.0]})";
    }
    EXPECT_THROW(load_sequence(dir), ContainerError);
    fs::remove_all(dir);
}

TEST(Container, WrongFileSize)
{
    const fs::path dir = temp_dir("size");
    LRSequence seq;
    seq.frames = {ImageGrid(4, 4)};
    seq.exposures = {1};
    save_sequence(seq, dir);
    {
        std::ofstream(dir / "frame_000.raw", std::ios::binary | std::ios::trunc) << "abc";
    }
    try {
        load_sequence(dir);
        FAIL();
    } catch (const ContainerError& e) {
        EXPECT_EQ(e.kind(), ContainerError::Kind::DimensionMismatch);
    }
    fs::remove_all(dir);
}

TEST(Normalize, ScalarDivision)
{
    LRSequence seq;
    seq.frames = {ImageGrid(2, 1, std::vector<double>{2, 4}), ImageGrid(2, 1, std::vector<double>{5, 7})};
    seq.exposures = {2.0, 1.0};
    const auto n = normalize_sequence(seq);
    EXPECT_EQ(n[0].values(), (std::vector<double>{1, 2}));
    EXPECT_EQ(n[1].values(), seq.frames[1].values());
}

TEST(Subsample, IdentityAndPhases)
{
    const ImageGrid r = ramp(4, 4, 1.0, 4.0);  // value = 4y + x
    EXPECT_EQ(subsample(r, 1).values(), r.values());
    const ImageGrid even = subsample(r, 2, 0, 0);
    EXPECT_EQ(even.values(), (std::vector<double>{0, 2, 8, 10}));
    const ImageGrid odd = subsample(r, 2, 1, 1);
    EXPECT_EQ(odd.values(), (std::vector<double>{5, 7, 13, 15}));
    EXPECT_THROW(subsample(r, 2, 2, 0), Error);
}

TEST(Subsample, ZeroInsertInverse)
{
    Rng rng(5);
    const ImageGrid img = oracle::random_image(7, 5, rng);
    EXPECT_EQ(subsample(zero_insert(img, 2), 2).values(), img.values());
    EXPECT_EQ(subsample(zero_insert(img, 3), 3).values(), img.values());
}

TEST(Convolve, IdentityAndConstant)
{
    Rng rng(1);
    const ImageGrid img = oracle::random_image(9, 8, rng);
    EXPECT_EQ(convolve(img, Kernel::identity()).values(), img.values());
    const ImageGrid c(12, 11, 3.25);
    for (double s : {0.5, 1.0, 2.0}) {
        const ImageGrid out = convolve(c, Kernel::gaussian(s));
        for (double v : out.data()) EXPECT_NEAR(v, 3.25, 1e-12);
    }
}

TEST(Convolve, ImpulseReplicatesGaussian)
{
    // impulse far enough from the edges that no reflected tap reaches it
    ImageGrid imp(17, 17);
    imp(8, 8) = 1.0;
    const ImageGrid out = convolve(imp, Kernel::gaussian(1.0));
    const auto g = oracle::gaussian_1d(1.0);  // radius 4
    for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 17; ++x) {
            const bool inside = std::abs(x - 8) <= 4 && std::abs(y - 8) <= 4;
            EXPECT_NEAR(out(x, y), inside ? g[x - 4] * g[y - 4] : 0.0, 1e-15);
        }
}

TEST(Convolve, GaussianTruncation)
{
    for (double s : {0.5, 1.0, 1.7}) {
        const Kernel k = Kernel::gaussian(s);
        EXPECT_EQ(k.radius, static_cast<int>(std::ceil(4.0 * s)));
        EXPECT_NEAR(k.sum(), 1.0, 1e-14);
    }
}

TEST(Convolve, MatchesDirectSumWithNonSymmetricKernel)
{
    Rng rng(11);
    const ImageGrid img = oracle::random_image(10, 7, rng);
    std::vector<double> taps(9);
    for (auto& t : taps) t = rng.uniform(-1, 1);
    const ImageGrid out = convolve(img, Kernel::from_taps(1, taps));
    const ImageGrid ref = oracle::convolve_direct(img, taps, 1);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
    const auto g = oracle::gaussian_1d(1.0);
    std::vector<double> g2;
    for (double a : g)
        for (double b : g) g2.push_back(a * b);
    const ImageGrid sep = convolve(img, Kernel::gaussian(1.0));
    const ImageGrid sep_ref = oracle::convolve_direct(img, g2, 4);
    for (std::size_t i = 0; i < sep.size(); ++i) EXPECT_NEAR(sep[i], sep_ref[i], 1e-12);
}

TEST(Convolve, Linear)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const ImageGrid x = oracle::random_image(13, 9, rng, -5, 5), y = oracle::random_image(13, 9, rng, -5, 5);
        const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
        const Kernel k = Kernel::gaussian(rng.uniform(0.5, 1.5));
        const ImageGrid lhs = convolve(a * x + b * y, k);
        const ImageGrid rhs = a * convolve(x, k) + b * convolve(y, k);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            num = std::max(num, std::abs(lhs[i] - rhs[i]));
            den = std::max(den, std::abs(rhs[i]));
        }
        EXPECT_LT(num / den, 1e-6);
    }
}

TEST(Convolve, KernelTooLarge)
{
    EXPECT_THROW(convolve(ImageGrid(4, 4), Kernel::gaussian(1.0)), Error);
}

TEST(Shift, ZeroIsIdentity)
{
    Rng rng(2);
    const ImageGrid img = oracle::random_image(8, 8, rng);
    const ImageGrid out = shift_subpixel(img, 0.0, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out[i], img[i], 1e-15);
}

TEST(Shift, IntegerShiftInterior)
{
    Rng rng(4);
    const ImageGrid img = oracle::random_image(12, 10, rng);
    const ImageGrid out = shift_subpixel(img, 1.0, 0.0);
    for (int y = 0; y < 10; ++y)
        for (int x = 1; x < 12; ++x) EXPECT_NEAR(out(x, y), img(x - 1, y), 1e-12);
    const ImageGrid out2 = shift_subpixel(img, -2.0, 1.0);
    for (int y = 1; y < 10; ++y)
        for (int x = 0; x < 10; ++x) EXPECT_NEAR(out2(x, y), img(x + 2, y - 1), 1e-12);
}

TEST(Shift, HalfStepOnRampIsAnalytic)
{
    const ImageGrid r = ramp(16, 12, 3.0, -2.0, 100.0);
    const ImageGrid out = shift_subpixel(r, 0.5, 0.0);
    for (int y = 2; y < 10; ++y)
        for (int x = 3; x < 13; ++x) EXPECT_NEAR(out(x, y), 100.0 + 3.0 * (x - 0.5) - 2.0 * y, 1e-9);
    const ImageGrid out2 = shift_subpixel(r, -0.25, 0.75);
    for (int y = 3; y < 9; ++y)
        for (int x = 3; x < 13; ++x) EXPECT_NEAR(out2(x, y), 100.0 + 3.0 * (x + 0.25) - 2.0 * (y - 0.75), 1e-9);
}

TEST(Shift, CubicPolynomialExactInterior)
{
    // Keys a = -0.5 reproduces quadratics exactly
    ImageGrid q(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) q(x, y) = 0.1 * x * x - 0.3 * x * y + 2.0 * y;
    const ImageGrid out = shift_subpixel(q, 0.3, -0.6);
    for (int y = 3; y < 13; ++y)
        for (int x = 3; x < 13; ++x) {
            const double sx = x - 0.3, sy = y + 0.6;
            EXPECT_NEAR(out(x, y), 0.1 * sx * sx - 0.3 * sx * sy + 2.0 * sy, 1e-9);
        }
}

TEST(BilinearZoom, OriginAligned)
{
    const ImageGrid r = ramp(6, 5, 2.0, 1.0);
    const ImageGrid z = bilinear_zoom(r, 2);
    ASSERT_EQ(z.width(), 12);
    ASSERT_EQ(z.height(), 10);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) EXPECT_DOUBLE_EQ(z(2 * x, 2 * y), r(x, y));
    // interior half-sample points interpolate linearly
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 10; ++u) EXPECT_NEAR(z(u, v), 2.0 * u / 2.0 + v / 2.0, 1e-12);
    EXPECT_EQ(subsample(z, 2).values(), r.values());
}

TEST(Psnr, SentinelAndKnownValue)
{
    Rng rng(6);
    const ImageGrid a = oracle::random_image(8, 8, rng, 0, 3400);
    EXPECT_EQ(psnr(a, a), kInfinitePsnr);
    ImageGrid b = a;
    for (auto& v : b.data()) v += 34.0;
    EXPECT_NEAR(psnr(b, a, 3400.0), 40.0, 1e-9);
}

TEST(Psnr, MatchesTwoPassOracle)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const ImageGrid a = oracle::random_image(11, 7, rng, 0, 3400), b = oracle::random_image(11, 7, rng, 0, 3400);
        const double ref = 10.0 * std::log10(3400.0 * 3400.0 / oracle::mse_two_pass(a, b));
        EXPECT_NEAR(psnr(a, b), ref, 1e-9 * std::abs(ref));
        EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
    }
}

TEST(Psnr, DecreasingInMse)
{
    Rng rng(8);
    const ImageGrid a = oracle::random_image(8, 8, rng, 0, 3400);
    double prev = kInfinitePsnr;
    for (double off : {0.5, 1.0, 3.0, 10.0, 100.0}) {
        ImageGrid b = a;
        for (auto& v : b.data()) v += off;
        const double p = psnr(b, a);
        EXPECT_LT(p, prev);
        prev = p;
    }
}

TEST(Psnr, Border)
{
    ImageGrid a(10, 10), b(10, 10);
    b(0, 0) = 1000.0;
    EXPECT_EQ(psnr(b, a, 3400.0, 1), kInfinitePsnr);
    EXPECT_LT(psnr(b, a, 3400.0, 0), kInfinitePsnr);
    EXPECT_THROW(psnr(a, b, 3400.0, 5), Error);
}
