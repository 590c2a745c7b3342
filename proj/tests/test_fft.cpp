#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>

#include "doctest.h"
#include "sarmatch/errors.hpp"
#include "sarmatch/fft.hpp"
#include "sarmatch/rng.hpp"
#include "support/oracles.hpp"

using namespace sarmatch;
using fft::cd;

TEST_CASE("all-zero input has an all-zero spectrum") {
    std::vector<float> x(8 * 8, 0.0f);
    auto spec = fft::fft2_real({x.data(), x.size()}, 8, 8, 8, 8);
    for (const auto& v : spec) CHECK(std::abs(v) == 0.0);
}

TEST_CASE("unit impulse at the origin gives a flat unit spectrum") {
    std::vector<float> x(6 * 10, 0.0f);
    x[0] = 1.0f;
    auto spec = fft::fft2_real({x.data(), x.size()}, 6, 10, 6, 10);
    for (const auto& v : spec) {
        CHECK(v.real() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(v.imag() == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("fft2 matches the direct DFT oracle and round-trips") {
    Rng rng(42);
    for (auto [h, w] : {std::pair{8, 8}, {12, 15}, {17, 9}, {5, 31}}) {
        std::vector<float> x(static_cast<size_t>(h) * w);
        std::vector<double> xd(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            xd[i] = rng.uniform(-1, 1);
            x[i] = static_cast<float>(xd[i]);
        }
        auto spec = fft::fft2_real({x.data(), x.size()}, h, w, h, w);
        auto ref = oracles::dft2(std::vector<double>(x.begin(), x.end()), h, w);
        double err = 0;
        for (size_t i = 0; i < spec.size(); ++i) err = std::max(err, std::abs(spec[i] - ref[i]));
        CHECK(err <= 1e-9);

        fft::ifft2(spec, h, w);
        double rt = 0;
        for (size_t i = 0; i < spec.size(); ++i)
            rt = std::max(rt, std::abs(spec[i].real() - static_cast<double>(x[i])));
        CHECK(rt <= 1e-5);
    }
}

TEST_CASE("1-D transform handles awkward lengths including large primes") {
    Rng rng(5);
    for (int n : {16, 24, 27, 37, 97, 111, 120, 125, 128, 193}) {
        std::vector<cd> x(n);
        for (auto& v : x) v = cd(rng.uniform(-1, 1), rng.uniform(-1, 1));
        std::vector<cd> f = x;
        fft::fft(f, false);
        // check a few bins against the direct sum
        for (int k : {0, 1, n / 2, n - 1}) {
            cd s(0, 0);
            for (int j = 0; j < n; ++j) {
                const double a = -2.0 * M_PI * static_cast<double>(j) * k / n;
                s += x[j] * cd(std::cos(a), std::sin(a));
            }
            CHECK(std::abs(f[k] - s) <= 1e-8 * std::max(1.0, std::abs(s)));
        }
        fft::fft(f, true);
        double rt = 0;
        for (int i = 0; i < n; ++i) rt = std::max(rt, std::abs(f[i] - x[i]));
        CHECK(rt <= 1e-10);
    }
}

TEST_CASE("fft2 linearity") {
    Rng rng(11);
    const int h = 9, w = 14;
    std::vector<float> x(h * w), y(h * w), z(h * w);
    const float a = 1.7f, b = -0.6f;
    for (size_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<float>(rng.uniform(-1, 1));
        y[i] = static_cast<float>(rng.uniform(-1, 1));
        z[i] = a * x[i] + b * y[i];
    }
    auto fx = fft::fft2_real({x.data(), x.size()}, h, w, h, w);
    auto fy = fft::fft2_real({y.data(), y.size()}, h, w, h, w);
    auto fz = fft::fft2_real({z.data(), z.size()}, h, w, h, w);
    double err = 0;
    for (size_t i = 0; i < fz.size(); ++i)
        err = std::max(err, std::abs(fz[i] - (static_cast<double>(a) * fx[i] +
                                              static_cast<double>(b) * fy[i])));
    CHECK(err <= 1e-5);
}

TEST_CASE("Parseval's identity") {
    Rng rng(23);
    const int h = 12, w = 20;
    std::vector<float> x(h * w);
    double sum_sq = 0;
    for (auto& v : x) {
        v = static_cast<float>(rng.uniform(-1, 1));
        sum_sq += static_cast<double>(v) * v;
    }
    auto spec = fft::fft2_real({x.data(), x.size()}, h, w, h, w);
    double spec_sq = 0;
    for (const auto& v : spec) spec_sq += std::norm(v);
    spec_sq /= static_cast<double>(h) * w;
    CHECK(std::abs(sum_sq - spec_sq) / sum_sq <= 1e-4);
}

TEST_CASE("zero-padded transforms embed the input") {
    Rng rng(31);
    const int h = 5, w = 7;
    std::vector<float> x(h * w);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
    auto spec = fft::fft2_real({x.data(), x.size()}, h, w, 12, 16);
    fft::ifft2(spec, 12, 16);
    for (int y = 0; y < 12; ++y)
        for (int xx = 0; xx < 16; ++xx) {
            const double want = (y < h && xx < w) ? x[static_cast<size_t>(y) * w + xx] : 0.0;
            CHECK(std::abs(spec[static_cast<size_t>(y) * 16 + xx].real() - want) <= 1e-6);
        }
}

TEST_CASE("argument validation") {
    std::vector<float> x(4, 0.0f);
    CHECK_THROWS_AS(fft::fft2_real({x.data(), x.size()}, 2, 2, 0, 4), ArgumentError);
    CHECK_THROWS_AS(fft::fft2_real({x.data(), x.size()}, 2, 2, 1, 4), ArgumentError);
    CHECK_THROWS_AS(fft::next_fast_size(0), ArgumentError);
}

TEST_CASE("next_fast_size returns 5-smooth sizes") {
    CHECK(fft::next_fast_size(1) == 1);
    CHECK(fft::next_fast_size(97) == 100);
    CHECK(fft::next_fast_size(111) == 120);
    CHECK(fft::next_fast_size(128) == 128);
    CHECK(fft::next_fast_size(241) == 243);
    for (int n : {1, 100, 120, 128, 243}) CHECK(fft::is_fast_size(n));
    CHECK_FALSE(fft::is_fast_size(97));
}
