// Test-side reference implementations, independent of the library's
// computation paths: direct DFT, nested-loop convolution/NCC, quadratic
// attention, and a central finite-difference gradient checker.
#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "sarmatch/tensor.hpp"

namespace oracles {

using cplx = std::complex<double>;

// O(N^2) DFT per axis
inline std::vector<cplx> dft2(const std::vector<double>& x, int h, int w) {
    std::vector<cplx> out(static_cast<size_t>(h) * w, cplx(0, 0));
    for (int ky = 0; ky < h; ++ky)
        for (int kx = 0; kx < w; ++kx) {
            cplx s(0, 0);
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double a = -2.0 * M_PI * (static_cast<double>(ky) * y / h +
                                                    static_cast<double>(kx) * xx / w);
                    s += x[static_cast<size_t>(y) * w + xx] * cplx(std::cos(a), std::sin(a));
                }
            out[static_cast<size_t>(ky) * w + kx] = s;
        }
    return out;
}

// direct cross-correlation convolution, the conv2d contract
inline std::vector<double> conv2d_naive(const std::vector<float>& input, int ci, int h, int w,
                                        const std::vector<float>& kernel, int co, int k,
                                        int stride, int pad) {
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<size_t>(co) * ho * wo, 0.0);
    for (int o = 0; o < co; ++o)
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                double s = 0;
                for (int c = 0; c < ci; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = y * stride + ky - pad;
                            const int ix = x * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            s += static_cast<double>(
                                     input[(static_cast<size_t>(c) * h + iy) * w + ix]) *
                                 kernel[((static_cast<size_t>(o) * ci + c) * k + ky) * k + kx];
                        }
                out[(static_cast<size_t>(o) * ho + y) * wo + x] = s;
            }
    return out;
}

// nested-loop NCC over the joint (all-channel) sample set
inline std::vector<double> ncc_naive_joint(const std::vector<float>& tpl, int c, int h, int w,
                                           const std::vector<float>& ref, int H, int W) {
    const int ho = H - h + 1, wo = W - w + 1;
    const double n = static_cast<double>(c) * h * w;
    double ts = 0, tss = 0;
    for (double v : std::vector<float>(tpl)) {
        ts += v;
        tss += v * v;
    }
    const double tmean = ts / n;
    const double ten = tss - ts * ts / n;
    std::vector<double> out(static_cast<size_t>(ho) * wo, 0.0);
    for (int u = 0; u < ho; ++u)
        for (int v = 0; v < wo; ++v) {
            double rs = 0, rss = 0, cross = 0;
            for (int cc = 0; cc < c; ++cc)
                for (int dy = 0; dy < h; ++dy)
                    for (int dx = 0; dx < w; ++dx) {
                        const double rv =
                            ref[(static_cast<size_t>(cc) * H + u + dy) * W + v + dx];
                        rs += rv;
                        rss += rv * rv;
                        cross += rv * tpl[(static_cast<size_t>(cc) * h + dy) * w + dx];
                    }
            const double rvar = rss - rs * rs / n;
            if (!(ten > 1e-5 * tss + 1e-20) || !(rvar > 1e-5 * rss + 1e-20)) continue;
            out[static_cast<size_t>(u) * wo + v] =
                (cross - tmean * rs) / (std::sqrt(ten) * std::sqrt(rvar));
        }
    return out;
}

// Central finite differences against the tape gradient of f(x).
// Returns max |analytic - fd| / max(||fd||_inf, ||analytic||_inf, floor).
inline double gradcheck(const std::function<sarmatch::Tensor(const sarmatch::Tensor&)>& f,
                        sarmatch::Tensor& x, float step = 1e-3f, double floor = 1e-4) {
    sarmatch::Tensor loss = f(x);
    x.zero_grad();
    loss.backward();
    std::vector<float> analytic(x.grad().begin(), x.grad().end());
    auto xv = x.raw_data();
    double max_fd = 0, max_an = 0, max_err = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float keep = xv[i];
        xv[i] = keep + step;
        const double lp = f(x).item();
        xv[i] = keep - step;
        const double lm = f(x).item();
        xv[i] = keep;
        const double fd = (lp - lm) / (2.0 * static_cast<double>(step));
        max_fd = std::max(max_fd, std::abs(fd));
        max_an = std::max(max_an, std::abs(static_cast<double>(analytic[i])));
        max_err = std::max(max_err, std::abs(fd - analytic[i]));
    }
    return max_err / std::max({max_fd, max_an, floor});
}

}  // namespace oracles
