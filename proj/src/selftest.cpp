#include "sarmatch/selftest.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <vector>

#include "sarmatch/enhance.hpp"
#include "sarmatch/fft.hpp"
#include "sarmatch/losses.hpp"
#include "sarmatch/ncc.hpp"
#include "sarmatch/rng.hpp"
#include "sarmatch/tensor.hpp"

namespace sarmatch {

namespace {

using fft::cd;

bool report(bool ok, const char* name, double metric, bool verbose) {
    if (verbose) std::printf("[%s] %-38s %.3g\n", ok ? "ok" : "FAIL", name, metric);
    return ok;
}

// O(N^2) reference DFT
std::vector<cd> dft_1d(const std::vector<cd>& x, bool inverse) {
    const int n = static_cast<int>(x.size());
    std::vector<cd> out(n);
    for (int k = 0; k < n; ++k) {
        cd s(0, 0);
        for (int j = 0; j < n; ++j) {
            const double a = (inverse ? 1 : -1) * 2.0 * M_PI * j * k / n;
            s += x[j] * cd(std::cos(a), std::sin(a));
        }
        out[k] = inverse ? s / static_cast<double>(n) : s;
    }
    return out;
}

bool check_fft(bool verbose) {
    Rng rng(11);
    bool ok = true;
    for (int n : {8, 12, 15, 31, 37, 111}) {
        std::vector<cd> x(n);
        for (auto& v : x) v = cd(rng.uniform(-1, 1), rng.uniform(-1, 1));
        std::vector<cd> f = x;
        fft::fft(f, false);
        auto ref = dft_1d(x, false);
        double err = 0;
        for (int i = 0; i < n; ++i) err = std::max(err, std::abs(f[i] - ref[i]));
        fft::fft(f, true);
        for (int i = 0; i < n; ++i) err = std::max(err, std::abs(f[i] - x[i]));
        ok &= report(err < 1e-9, "fft vs direct dft", err, verbose);
    }
    return ok;
}

bool check_ncc(bool verbose) {
    Rng rng(22);
    bool ok = true;
    for (int t = 0; t < 10; ++t) {
        const int c = 1 + static_cast<int>(rng.below(3));
        const int h = 3 + static_cast<int>(rng.below(6));
        const int w = 3 + static_cast<int>(rng.below(6));
        const int H = h + static_cast<int>(rng.below(10));
        const int W = w + static_cast<int>(rng.below(10));
        Tensor tpl = Tensor::uniform({c, h, w}, rng, -1, 1);
        Tensor ref = Tensor::uniform({c, H, W}, rng, -1, 1);
        Heatmap a = ncc_heatmap(tpl, ref, HeatmapLevel::Shallow);
        Heatmap b = ncc_heatmap_naive(tpl, ref, HeatmapLevel::Shallow);
        double err = 0;
        for (size_t i = 0; i < a.values.size(); ++i)
            err = std::max(err, std::abs(static_cast<double>(a.values[i]) - b.values[i]));
        ok &= report(err < 1e-4, "fft ncc vs naive", err, verbose);
    }
    return ok;
}

// direct quadratic-form evaluation of kernel attention
std::vector<float> quadratic_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                       int heads, bool normalized) {
    const int nq = q.dim(0), nk = k.dim(0), c = q.dim(1), d = c / heads;
    auto phi = [](float x) { return (x > 0 ? x : std::expm1(x)) + 1.0f; };
    std::vector<float> out(static_cast<size_t>(nq) * c, 0.0f);
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < nq; ++i) {
            std::vector<double> acc(d, 0.0);
            double den = 0;
            for (int j = 0; j < nk; ++j) {
                double sim = 0;
                for (int e = 0; e < d; ++e)
                    sim += static_cast<double>(phi(q.at(i * c + h * d + e))) *
                           phi(k.at(j * c + h * d + e));
                den += sim;
                for (int e = 0; e < d; ++e) acc[e] += sim * v.at(j * c + h * d + e);
            }
            for (int e = 0; e < d; ++e) {
                double val = acc[e];
                if (normalized) val /= (den + 1e-6);
                out[static_cast<size_t>(i) * c + h * d + e] = static_cast<float>(val);
            }
        }
    return out;
}

bool check_attention(bool verbose) {
    Rng rng(33);
    bool ok = true;
    for (bool normalized : {true, false}) {
        const int n = 12, c = 8, heads = 2;
        Tensor q = Tensor::uniform({n, c}, rng, -1, 1);
        Tensor k = Tensor::uniform({n, c}, rng, -1, 1);
        Tensor v = Tensor::uniform({n, c}, rng, -1, 1);
        Tensor out = linear_attention(q, k, v, heads, normalized);
        auto ref = quadratic_attention(q, k, v, heads, normalized);
        double err = 0;
        for (int64_t i = 0; i < out.numel(); ++i)
            err = std::max(err, std::abs(static_cast<double>(out.at(i)) - ref[i]));
        ok &= report(err < 1e-5, normalized ? "linear attention (normalized)"
                                            : "linear attention (paper-literal)",
                     err, verbose);
    }
    return ok;
}

bool check_mi(bool verbose) {
    Rng rng(44);
    const int n = 2048;
    std::vector<float> xs(n), ys(n);
    for (int i = 0; i < n; ++i) {
        xs[i] = static_cast<float>(rng.uniform(0, 1));
        ys[i] = static_cast<float>(rng.uniform(0, 1));
    }
    Tensor x = Tensor::from_vector({n}, xs);
    Tensor y = Tensor::from_vector({n}, ys);
    const double mi_indep = mutual_information(x, y).item();
    const double mi_self = mutual_information(x, x).item();
    bool ok = report(mi_indep < 0.08, "mi independent near zero", mi_indep, verbose);
    ok &= report(mi_self > mi_indep + 0.5, "mi self >> independent", mi_self, verbose);
    return ok;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, float step) {
    Tensor loss = f(x);
    x.zero_grad();
    loss.backward();
    std::vector<float> analytic(x.grad().begin(), x.grad().end());
    double max_fd = 0, max_err = 0;
    auto xv = x.raw_data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float keep = xv[i];
        xv[i] = keep + step;
        const double lp = f(x).item();
        xv[i] = keep - step;
        const double lm = f(x).item();
        xv[i] = keep;
        const double fd = (lp - lm) / (2.0 * step);
        max_fd = std::max(max_fd, std::abs(fd));
        max_err = std::max(max_err, std::abs(fd - analytic[i]));
    }
    return max_err / std::max({max_fd, 1e-4});
}

bool check_gradients(bool verbose) {
    Rng rng(55);
    bool ok = true;
    {
        Tensor x = Tensor::uniform({2, 5, 5}, rng, -1, 1, true);
        Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
        Tensor w = Tensor::uniform({3, 5, 5}, rng, -1, 1);
        auto f = [&](const Tensor& t) { return sum_all(mul(conv2d(t, k, 1, 1), w)); };
        const double e = grad_check(f, x, 1e-2f);
        ok &= report(e < 1e-3, "grad conv2d", e, verbose);
    }
    {
        Tensor x = Tensor::uniform({2, 4, 6}, rng, -1, 1, true);
        Tensor r = Tensor::uniform({2, 7, 9}, rng, -1, 1);
        Tensor w = Tensor::uniform({4, 4}, rng, -1, 1);
        auto f = [&](const Tensor& t) { return sum_all(mul(ncc_map(t, r).map, w)); };
        const double e = grad_check(f, x, 1e-2f);
        ok &= report(e < 1e-3, "grad ncc template", e, verbose);
    }
    {
        Tensor x = Tensor::uniform({24}, rng, -1, 1, true);
        Tensor y = Tensor::uniform({24}, rng, -1, 1);
        auto f = [&](const Tensor& t) { return mutual_information(t, y, 6, 1.0f / 6); };
        // wider step: the f32 forward noise floor dominates central differences
        // below ~1e-2 on this loss
        const double e = grad_check(f, x, 1e-2f);
        ok &= report(e < 1e-3, "grad mutual information", e, verbose);
    }
    {
        Tensor x = Tensor::uniform({4, 5}, rng, -1, 1, true);
        auto f = [&](const Tensor& t) {
            GroundTruthHeatmap gt;
            gt.h = 4;
            gt.w = 5;
            gt.row = 2;
            gt.col = 3;
            return heatmap_ce(t, gt, 10.0f);
        };
        const double e = grad_check(f, x, 1e-3f);
        ok &= report(e < 1e-3, "grad heatmap cross-entropy", e, verbose);
    }
    return ok;
}

}  // namespace

int run_selftest(bool verbose) {
    bool ok = true;
    ok &= check_fft(verbose);
    ok &= check_ncc(verbose);
    ok &= check_attention(verbose);
    ok &= check_mi(verbose);
    ok &= check_gradients(verbose);
    if (verbose) std::printf(ok ? "selftest: all checks passed\n" : "selftest: FAILURES\n");
    return ok ? 0 : 1;
}

}  // namespace sarmatch
