#include "sarmatch/ncc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sarmatch/errors.hpp"

namespace sarmatch {

namespace {

// relative variance floor; windows below it count as constant
constexpr float kVarRel = 1e-5f;
constexpr float kVarAbs = 1e-20f;

}  // namespace

NccMode ncc_mode_from_string(const std::string& s) {
    if (s == "joint") return NccMode::Joint;
    if (s == "per-channel" || s == "per_channel") return NccMode::PerChannel;
    throw ArgumentError("unknown ncc mode '" + s + "' (expected joint|per-channel)");
}

std::pair<int, int> Heatmap::argmax_rc() const {
    const int64_t i = static_cast<int64_t>(
        std::max_element(values.begin(), values.end()) - values.begin());
    return {static_cast<int>(i / w), static_cast<int>(i % w)};
}

float Heatmap::peak() const { return *std::max_element(values.begin(), values.end()); }

namespace {

// Channel mean of a [C,Ho,Wo] tensor -> [Ho,Wo]
Tensor channel_mean(const Tensor& x) {
    const int C = x.dim(0), Ho = x.dim(1), Wo = x.dim(2);
    Tensor flat = reshape(x, {C, Ho * Wo});
    return reshape(scale(sum_axis0(flat), 1.0f / static_cast<float>(C)), {Ho, Wo});
}

struct JointStats {
    Tensor num, varn;  // [Ho,Wo]
    Tensor tpl_energy;
    float tpl_energy_val = 0, tpl_ss_val = 0;
};

}  // namespace

NccResult ncc_map(const Tensor& tpl, const Tensor& ref, NccMode mode) {
    if (tpl.rank() != 3 || ref.rank() != 3)
        throw ShapeError("ncc_map: expects [C,h,w] x [C,H,W], got " + shape_str(tpl.shape()) +
                         " x " + shape_str(ref.shape()));
    if (tpl.dim(1) > ref.dim(1) || tpl.dim(2) > ref.dim(2))
        throw ArgumentError("ncc_map: template " + shape_str(tpl.shape()) +
                            " larger than reference " + shape_str(ref.shape()));
    const int C = tpl.dim(0), h = tpl.dim(1), w = tpl.dim(2);
    const int Ho = ref.dim(1) - h + 1, Wo = ref.dim(2) - w + 1;
    const bool per_channel = (mode == NccMode::PerChannel);
    const float n = static_cast<float>(per_channel ? h * w : C * h * w);

    const Tensor cc = cross_correlate_valid(tpl, ref, per_channel);
    const Tensor s1 = window_sum(ref, h, w, per_channel);
    const Tensor s2 = window_sum(mul(ref, ref), h, w, per_channel);

    Tensor num, varn, ten;
    if (!per_channel) {
        Tensor tsum = sum_all(tpl);
        Tensor tss = sum_all(mul(tpl, tpl));
        ten = clamp_min(sub(tss, scale(mul(tsum, tsum), 1.0f / n)), 0.0f);  // [1]
        num = sub(cc, mul(scale(tsum, 1.0f / n), s1));
        varn = clamp_min(sub(s2, scale(mul(s1, s1), 1.0f / n)), 0.0f);
    } else {
        Tensor tflat = reshape(tpl, {C, h * w});
        Tensor tsum = sum_axis1(tflat);                       // [C]
        Tensor tss = sum_axis1(mul(tflat, tflat));            // [C]
        Tensor ten_c = clamp_min(sub(tss, scale(mul(tsum, tsum), 1.0f / n)), 0.0f);  // [C]
        num = sub(cc, mul_channel(s1, scale(tsum, 1.0f / n)));
        varn = clamp_min(sub(s2, scale(mul(s1, s1), 1.0f / n)), 0.0f);
        ten = ten_c;
    }

    // constant-window / constant-template mask, built outside the tape
    bool flagged = false;
    const auto varn_v = varn.data();
    const auto s2_v = s2.data();
    const auto ten_v = ten.data();
    std::vector<bool> tpl_ok(per_channel ? C : 1);
    {
        NoGradGuard ng;
        if (!per_channel) {
            const float tss = sum_all(mul(tpl, tpl)).item();
            tpl_ok[0] = ten_v[0] > kVarRel * tss + kVarAbs;
        } else {
            Tensor tflat = reshape(tpl, {C, h * w});
            Tensor tss = sum_axis1(mul(tflat, tflat));
            for (int c = 0; c < C; ++c) tpl_ok[c] = ten_v[c] > kVarRel * tss.at(c) + kVarAbs;
        }
    }
    const int64_t plane = static_cast<int64_t>(Ho) * Wo;
    std::vector<float> mask_v(varn.numel());
    std::vector<float> off_v(varn.numel());
    for (int64_t i = 0; i < varn.numel(); ++i) {
        const bool window_ok = varn_v[i] > kVarRel * s2_v[i] + kVarAbs;
        const bool ok = window_ok && tpl_ok[per_channel ? i / plane : 0];
        mask_v[i] = ok ? 1.0f : 0.0f;
        off_v[i] = ok ? 0.0f : 1.0f;
        if (!ok) flagged = true;
    }
    Tensor mask = Tensor::from_vector(varn.shape(), std::move(mask_v));
    Tensor off = Tensor::from_vector(varn.shape(), std::move(off_v));

    Tensor denom;
    if (!per_channel)
        denom = mul(sqrt_t(ten), sqrt_t(varn));
    else
        denom = mul_channel(sqrt_t(varn), sqrt_t(ten));

    Tensor map = div(mul(num, mask), add(denom, off));
    if (per_channel) map = channel_mean(map);

    NccResult r;
    r.map = map;
    r.zero_variance = flagged;
    return r;
}

Heatmap heatmap_from_tensor(HeatmapLevel level, const Tensor& map2d, bool zero_variance) {
    if (map2d.rank() != 2)
        throw ShapeError("heatmap_from_tensor: expects 2-D, got " + shape_str(map2d.shape()));
    Heatmap hm;
    hm.level = level;
    hm.kind = HeatmapKind::Raw;
    hm.h = map2d.dim(0);
    hm.w = map2d.dim(1);
    hm.values.assign(map2d.data().begin(), map2d.data().end());
    hm.zero_variance = zero_variance;
    return hm;
}

Heatmap ncc_heatmap(const Tensor& tpl, const Tensor& ref, HeatmapLevel level, NccMode mode) {
    NoGradGuard ng;
    NccResult r = ncc_map(tpl, ref, mode);
    return heatmap_from_tensor(level, r.map, r.zero_variance);
}

Heatmap ncc_heatmap_naive(const Tensor& tpl, const Tensor& ref, HeatmapLevel level, NccMode mode) {
    if (tpl.rank() != 3 || ref.rank() != 3)
        throw ShapeError("ncc_heatmap_naive: expects [C,h,w] x [C,H,W]");
    if (tpl.dim(0) != ref.dim(0))
        throw ShapeError("ncc_heatmap_naive: channel mismatch on axis 0");
    if (tpl.dim(1) > ref.dim(1) || tpl.dim(2) > ref.dim(2))
        throw ArgumentError("ncc_heatmap_naive: template larger than reference");
    const int C = tpl.dim(0), h = tpl.dim(1), w = tpl.dim(2);
    const int H = ref.dim(1), W = ref.dim(2);
    const int Ho = H - h + 1, Wo = W - w + 1;
    const float* T = tpl.data().data();
    const float* R = ref.data().data();

    Heatmap hm;
    hm.level = level;
    hm.kind = HeatmapKind::Raw;
    hm.h = Ho;
    hm.w = Wo;
    hm.values.assign(static_cast<size_t>(Ho) * Wo, 0.0f);

    const bool per_channel = (mode == NccMode::PerChannel);
    const int groups = per_channel ? C : 1;
    const int gc = per_channel ? 1 : C;  // channels per normalization group
    const double n = static_cast<double>(gc) * h * w;

    // per-group template stats
    std::vector<double> tmean(groups, 0.0), tenergy(groups, 0.0), tss(groups, 0.0);
    for (int g = 0; g < groups; ++g) {
        double s = 0, ss = 0;
        for (int c = g * gc; c < (g + 1) * gc; ++c)
            for (int i = 0; i < h * w; ++i) {
                const double v = T[static_cast<size_t>(c) * h * w + i];
                s += v;
                ss += v * v;
            }
        tmean[g] = s / n;
        tss[g] = ss;
        tenergy[g] = ss - s * s / n;
    }

    bool flagged = false;
    for (int u = 0; u < Ho; ++u)
        for (int v = 0; v < Wo; ++v) {
            double acc = 0;
            int live = 0;
            for (int g = 0; g < groups; ++g) {
                if (!(tenergy[g] > kVarRel * tss[g] + kVarAbs)) {
                    flagged = true;
                    ++live;  // still counted in the channel mean, contributes 0
                    continue;
                }
                double rs = 0, rss = 0, cross = 0;
                for (int c = g * gc; c < (g + 1) * gc; ++c) {
                    const float* tp = T + static_cast<size_t>(c) * h * w;
                    const float* rp = R + static_cast<size_t>(c) * H * W;
                    for (int dy = 0; dy < h; ++dy)
                        for (int dx = 0; dx < w; ++dx) {
                            const double rv = rp[static_cast<size_t>(u + dy) * W + v + dx];
                            rs += rv;
                            rss += rv * rv;
                            cross += rv * tp[static_cast<size_t>(dy) * w + dx];
                        }
                }
                const double rvar = rss - rs * rs / n;
                ++live;
                if (!(rvar > kVarRel * rss + kVarAbs)) {
                    flagged = true;
                    continue;
                }
                const double num = cross - tmean[g] * rs;
                acc += num / (std::sqrt(tenergy[g]) * std::sqrt(rvar));
            }
            hm.values[static_cast<size_t>(u) * Wo + v] =
                static_cast<float>(acc / static_cast<double>(live));
        }
    hm.zero_variance = flagged;
    return hm;
}

Heatmap fuse_heatmaps(const Heatmap& deep, const Heatmap& shallow, UpscaleMode up) {
    if (deep.level != HeatmapLevel::Deep || shallow.level != HeatmapLevel::Shallow)
        throw ArgumentError("fuse_heatmaps: expects (deep, shallow) level tags");
    if (deep.kind != HeatmapKind::Raw || shallow.kind != HeatmapKind::Raw)
        throw ArgumentError("fuse_heatmaps: both heatmaps must be raw");

    Heatmap out;
    out.level = HeatmapLevel::Shallow;
    out.kind = HeatmapKind::Raw;
    out.h = shallow.h;
    out.w = shallow.w;
    out.values.resize(shallow.values.size());
    out.zero_variance = deep.zero_variance || shallow.zero_variance;

    std::vector<float> up_vals(shallow.values.size());
    if (up == UpscaleMode::Bilinear) {
        NoGradGuard ng;
        Tensor d = Tensor::from_vector({deep.h, deep.w},
                                       std::vector<float>(deep.values.begin(), deep.values.end()));
        Tensor u = bilinear_resize(d, shallow.h, shallow.w, /*align_corners=*/true);
        std::copy(u.data().begin(), u.data().end(), up_vals.begin());
    } else {
        for (int y = 0; y < shallow.h; ++y) {
            const int sy = std::min(deep.h - 1,
                                    static_cast<int>(std::lround(
                                        shallow.h == 1 ? 0.0
                                                       : static_cast<double>(y) * (deep.h - 1) /
                                                             (shallow.h - 1))));
            for (int x = 0; x < shallow.w; ++x) {
                const int sx = std::min(deep.w - 1,
                                        static_cast<int>(std::lround(
                                            shallow.w == 1 ? 0.0
                                                           : static_cast<double>(x) * (deep.w - 1) /
                                                                 (shallow.w - 1))));
                up_vals[static_cast<size_t>(y) * shallow.w + x] = deep.at(sy, sx);
            }
        }
    }
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = up_vals[i] * shallow.values[i];
    return out;
}

Heatmap to_probability(const Heatmap& hm, float scale) {
    Heatmap out = hm;
    out.kind = HeatmapKind::Probability;
    double mx = -1e300;
    for (float v : hm.values) mx = std::max(mx, static_cast<double>(scale) * v);
    double denom = 0;
    std::vector<double> e(hm.values.size());
    for (size_t i = 0; i < hm.values.size(); ++i) {
        e[i] = std::exp(static_cast<double>(scale) * hm.values[i] - mx);
        denom += e[i];
    }
    for (size_t i = 0; i < hm.values.size(); ++i)
        out.values[i] = static_cast<float>(e[i] / denom);
    return out;
}

void save_heatmap(const std::string& path, const Heatmap& hm) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("HMP1", 4);
    const uint32_t h = static_cast<uint32_t>(hm.h), w = static_cast<uint32_t>(hm.w);
    unsigned char b[8] = {
        static_cast<unsigned char>(h),       static_cast<unsigned char>(h >> 8),
        static_cast<unsigned char>(h >> 16), static_cast<unsigned char>(h >> 24),
        static_cast<unsigned char>(w),       static_cast<unsigned char>(w >> 8),
        static_cast<unsigned char>(w >> 16), static_cast<unsigned char>(w >> 24)};
    os.write(reinterpret_cast<const char*>(b), 8);
    os.write(reinterpret_cast<const char*>(hm.values.data()),
             static_cast<std::streamsize>(hm.values.size() * 4));
    if (!os) throw IoError("write failed: " + path);
}

Heatmap load_heatmap(const std::string& path, HeatmapLevel level) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HMP1", 4) != 0) throw IoError("bad HMP1 magic in " + path);
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("truncated HMP1 header in " + path);
    Heatmap hm;
    hm.level = level;
    hm.h = static_cast<int>(b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24));
    hm.w = static_cast<int>(b[4] | (b[5] << 8) | (b[6] << 16) | (static_cast<uint32_t>(b[7]) << 24));
    if (hm.h <= 0 || hm.w <= 0) throw IoError("bad HMP1 dims in " + path);
    hm.values.resize(static_cast<size_t>(hm.h) * hm.w);
    is.read(reinterpret_cast<char*>(hm.values.data()),
            static_cast<std::streamsize>(hm.values.size() * 4));
    if (!is) throw IoError("truncated HMP1 payload in " + path);
    return hm;
}

void save_heatmap_pgm(const std::string& path, const Heatmap& hm) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    float mn = hm.values[0], mx = hm.values[0];
    for (float v : hm.values) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const float range = (mx - mn) > 0 ? (mx - mn) : 1.0f;
    os << "P5\n" << hm.w << " " << hm.h << "\n255\n";
    for (float v : hm.values) {
        const int q = static_cast<int>(std::lround((v - mn) / range * 255.0f));
        os.put(static_cast<char>(std::clamp(q, 0, 255)));
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace sarmatch
