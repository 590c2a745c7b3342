#include <cmath>
#include <memory>

#include "sarmatch/fft.hpp"
#include "sarmatch/tensor.hpp"

// FFT-backed valid cross-correlation and integral-image window sums.
// Both are recorded on the tape; the correlation backward reuses the input
// spectra cached at forward time, window sums rebuild integral images.

namespace sarmatch {

namespace {

using detail::Node;
using fft::cd;

struct CorrDims {
    int C, h, w, H, W, Ho, Wo, Ph, Pw;
};

CorrDims corr_dims(const Tensor& tpl, const Tensor& ref) {
    if (tpl.rank() != 3 || ref.rank() != 3)
        throw ShapeError("cross_correlate_valid: expects [C,h,w] x [C,H,W], got " +
                         shape_str(tpl.shape()) + " x " + shape_str(ref.shape()));
    if (tpl.dim(0) != ref.dim(0))
        throw ShapeError("cross_correlate_valid: channel mismatch on axis 0: " +
                         std::to_string(tpl.dim(0)) + " vs " + std::to_string(ref.dim(0)));
    if (tpl.dim(1) > ref.dim(1) || tpl.dim(2) > ref.dim(2))
        throw ArgumentError("cross_correlate_valid: template " + shape_str(tpl.shape()) +
                            " larger than reference " + shape_str(ref.shape()));
    CorrDims d;
    d.C = tpl.dim(0);
    d.h = tpl.dim(1);
    d.w = tpl.dim(2);
    d.H = ref.dim(1);
    d.W = ref.dim(2);
    d.Ho = d.H - d.h + 1;
    d.Wo = d.W - d.w + 1;
    d.Ph = fft::next_fast_size(d.H);
    d.Pw = fft::next_fast_size(d.W);
    return d;
}

// real part of ifft2(spec), cropped to oh x ow, += into dst at dst_off
void ifft_crop_accum(std::vector<cd> spec, int Ph, int Pw, int oh, int ow, float* dst) {
    fft::ifft2(spec, Ph, Pw);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            dst[static_cast<size_t>(y) * ow + x] +=
                static_cast<float>(spec[static_cast<size_t>(y) * Pw + x].real());
}

using SpecList = std::vector<std::vector<cd>>;

}  // namespace

Tensor cross_correlate_valid(const Tensor& tpl, const Tensor& ref, bool per_channel) {
    const CorrDims d = corr_dims(tpl, ref);
    const float* T = tpl.data().data();
    const float* R = ref.data().data();

    auto tpl_spec = std::make_shared<SpecList>();
    auto ref_spec = std::make_shared<SpecList>();
    tpl_spec->reserve(d.C);
    ref_spec->reserve(d.C);
    for (int c = 0; c < d.C; ++c) {
        tpl_spec->push_back(fft::fft2_real(
            {T + static_cast<size_t>(c) * d.h * d.w, static_cast<size_t>(d.h) * d.w}, d.h, d.w,
            d.Ph, d.Pw));
        ref_spec->push_back(fft::fft2_real(
            {R + static_cast<size_t>(c) * d.H * d.W, static_cast<size_t>(d.H) * d.W}, d.H, d.W,
            d.Ph, d.Pw));
    }

    const size_t plane = static_cast<size_t>(d.Ph) * d.Pw;
    Shape out_shape = per_channel ? Shape{d.C, d.Ho, d.Wo} : Shape{d.Ho, d.Wo};
    std::vector<float> out(shape_numel(out_shape), 0.0f);
    if (per_channel) {
        for (int c = 0; c < d.C; ++c) {
            std::vector<cd> spec(plane);
            for (size_t i = 0; i < plane; ++i)
                spec[i] = std::conj((*tpl_spec)[c][i]) * (*ref_spec)[c][i];
            ifft_crop_accum(std::move(spec), d.Ph, d.Pw, d.Ho, d.Wo,
                            out.data() + static_cast<size_t>(c) * d.Ho * d.Wo);
        }
    } else {
        std::vector<cd> spec(plane, cd(0, 0));
        for (int c = 0; c < d.C; ++c)
            for (size_t i = 0; i < plane; ++i)
                spec[i] += std::conj((*tpl_spec)[c][i]) * (*ref_spec)[c][i];
        ifft_crop_accum(std::move(spec), d.Ph, d.Pw, d.Ho, d.Wo, out.data());
    }

    auto tn = tpl.node();
    auto rn = ref.node();
    auto backward = [tn, rn, d, per_channel, tpl_spec, ref_spec](Node& self) {
        const float* G = self.grad.data();
        const size_t plane = static_cast<size_t>(d.Ph) * d.Pw;
        const bool want_tpl = tn->requires_grad || !tn->is_leaf();
        const bool want_ref = rn->requires_grad || !rn->is_leaf();
        if (want_tpl) tn->ensure_grad();
        if (want_ref) rn->ensure_grad();

        // spectra of the upstream gradient planes
        const int n_gplanes = per_channel ? d.C : 1;
        SpecList g_spec;
        g_spec.reserve(n_gplanes);
        for (int c = 0; c < n_gplanes; ++c)
            g_spec.push_back(fft::fft2_real(
                {G + static_cast<size_t>(c) * d.Ho * d.Wo, static_cast<size_t>(d.Ho) * d.Wo},
                d.Ho, d.Wo, d.Ph, d.Pw));

        for (int c = 0; c < d.C; ++c) {
            const auto& gs = g_spec[per_channel ? c : 0];
            if (want_tpl) {
                // d/dtpl = valid correlation of grad over the reference
                std::vector<cd> spec(plane);
                for (size_t i = 0; i < plane; ++i)
                    spec[i] = std::conj(gs[i]) * (*ref_spec)[c][i];
                ifft_crop_accum(std::move(spec), d.Ph, d.Pw, d.h, d.w,
                                tn->grad.data() + static_cast<size_t>(c) * d.h * d.w);
            }
            if (want_ref) {
                // d/dref = full convolution of grad with the template
                std::vector<cd> spec(plane);
                for (size_t i = 0; i < plane; ++i) spec[i] = gs[i] * (*tpl_spec)[c][i];
                ifft_crop_accum(std::move(spec), d.Ph, d.Pw, d.H, d.W,
                                rn->grad.data() + static_cast<size_t>(c) * d.H * d.W);
            }
        }
    };

    auto n = std::make_shared<Node>();
    n->shape = std::move(out_shape);
    n->value = std::move(out);
    n->op = "cross_correlate_valid";
    if (detail::grad_enabled() && (tpl.requires_grad() || ref.requires_grad())) {
        n->requires_grad = true;
        n->parents = {tn, rn};
        n->backward = std::move(backward);
    }
    return Tensor(n);
}

namespace {

// integral image with a zero top row/left column, built in double
std::vector<double> integral_plane(const float* p, int H, int W) {
    std::vector<double> I(static_cast<size_t>(H + 1) * (W + 1), 0.0);
    for (int y = 0; y < H; ++y) {
        double row = 0.0;
        for (int x = 0; x < W; ++x) {
            row += p[static_cast<size_t>(y) * W + x];
            I[static_cast<size_t>(y + 1) * (W + 1) + x + 1] =
                I[static_cast<size_t>(y) * (W + 1) + x + 1] + row;
        }
    }
    return I;
}

inline double box(const std::vector<double>& I, int W1, int y0, int x0, int y1, int x1) {
    // inclusive-exclusive rectangle [y0,y1) x [x0,x1)
    return I[static_cast<size_t>(y1) * W1 + x1] - I[static_cast<size_t>(y0) * W1 + x1] -
           I[static_cast<size_t>(y1) * W1 + x0] + I[static_cast<size_t>(y0) * W1 + x0];
}

}  // namespace

Tensor window_sum(const Tensor& x, int h, int w, bool per_channel) {
    if (x.rank() != 3)
        throw ShapeError("window_sum: expects [C,H,W], got " + shape_str(x.shape()));
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (h < 1 || w < 1 || h > H || w > W)
        throw ArgumentError("window_sum: window " + std::to_string(h) + "x" + std::to_string(w) +
                            " does not fit in " + std::to_string(H) + "x" + std::to_string(W));
    const int Ho = H - h + 1, Wo = W - w + 1;
    const float* X = x.data().data();

    Shape out_shape = per_channel ? Shape{C, Ho, Wo} : Shape{Ho, Wo};
    std::vector<float> out(shape_numel(out_shape), 0.0f);
    for (int c = 0; c < C; ++c) {
        auto I = integral_plane(X + static_cast<size_t>(c) * H * W, H, W);
        float* o = per_channel ? out.data() + static_cast<size_t>(c) * Ho * Wo : out.data();
        for (int u = 0; u < Ho; ++u)
            for (int v = 0; v < Wo; ++v)
                o[static_cast<size_t>(u) * Wo + v] +=
                    static_cast<float>(box(I, W + 1, u, v, u + h, v + w));
    }

    auto xn = x.node();
    return [&] {
        auto n = std::make_shared<Node>();
        n->shape = out_shape;
        n->value = std::move(out);
        n->op = "window_sum";
        if (detail::grad_enabled() && x.requires_grad()) {
            n->requires_grad = true;
            n->parents = {xn};
            n->backward = [xn, C, H, W, h, w, Ho, Wo, per_channel](Node& self) {
                if (!xn->requires_grad && xn->is_leaf()) return;
                xn->ensure_grad();
                const float* G = self.grad.data();
                // dx[c,y,x] = sum of grad over windows covering (y,x)
                const int n_gplanes = per_channel ? C : 1;
                std::vector<std::vector<double>> IG;
                IG.reserve(n_gplanes);
                for (int c = 0; c < n_gplanes; ++c)
                    IG.push_back(integral_plane(G + static_cast<size_t>(c) * Ho * Wo, Ho, Wo));
                for (int c = 0; c < C; ++c) {
                    const auto& I = IG[per_channel ? c : 0];
                    float* gx = xn->grad.data() + static_cast<size_t>(c) * H * W;
                    for (int y = 0; y < H; ++y) {
                        const int u0 = std::max(0, y - h + 1), u1 = std::min(y, Ho - 1);
                        if (u0 > u1) continue;
                        for (int xx = 0; xx < W; ++xx) {
                            const int v0 = std::max(0, xx - w + 1), v1 = std::min(xx, Wo - 1);
                            if (v0 > v1) continue;
                            gx[static_cast<size_t>(y) * W + xx] +=
                                static_cast<float>(box(I, Wo + 1, u0, v0, u1 + 1, v1 + 1));
                        }
                    }
                }
            };
        }
        return Tensor(n);
    }();
}

}  // namespace sarmatch
