#include "sarmatch/losses.hpp"

#include <algorithm>

#include "sarmatch/errors.hpp"

namespace sarmatch {

std::pair<GroundTruthHeatmap, GroundTruthHeatmap> make_gt_heatmaps(int gt_row, int gt_col,
                                                                   int shallow_h, int shallow_w,
                                                                   int deep_h, int deep_w) {
    if (shallow_h < 1 || shallow_w < 1 || deep_h < 1 || deep_w < 1)
        throw ArgumentError("make_gt_heatmaps: non-positive heatmap dims");
    if (gt_row < 0 || gt_col < 0 || gt_row >= shallow_h || gt_col >= shallow_w)
        throw ArgumentError("make_gt_heatmaps: position (" + std::to_string(gt_row) + "," +
                            std::to_string(gt_col) + ") outside " + std::to_string(shallow_h) +
                            "x" + std::to_string(shallow_w));
    GroundTruthHeatmap s;
    s.level = HeatmapLevel::Shallow;
    s.h = shallow_h;
    s.w = shallow_w;
    s.row = gt_row;
    s.col = gt_col;
    GroundTruthHeatmap d;
    d.level = HeatmapLevel::Deep;
    d.h = deep_h;
    d.w = deep_w;
    d.row = std::min(gt_row / 8, deep_h - 1);
    d.col = std::min(gt_col / 8, deep_w - 1);
    return {s, d};
}

Tensor heatmap_ce(const Tensor& heat, const GroundTruthHeatmap& gt, float scale) {
    if (heat.rank() != 2 || heat.dim(0) != gt.h || heat.dim(1) != gt.w)
        throw ShapeError("heatmap_ce: heatmap " + shape_str(heat.shape()) + " vs target " +
                         std::to_string(gt.h) + "x" + std::to_string(gt.w));
    return cross_entropy_at(heat, scale, gt.flat_index());
}

PseudoMode pseudo_mode_from_string(const std::string& s) {
    if (s == "hard") return PseudoMode::Hard;
    if (s == "soft") return PseudoMode::Soft;
    throw ArgumentError("unknown pseudo mode '" + s + "' (expected hard|soft)");
}

PseudoLabel make_pseudo_label(const Heatmap& deep, const Heatmap& shallow, PseudoMode mode,
                              float scale, UpscaleMode up) {
    PseudoLabel label;
    label.mode = mode;
    label.fused = fuse_heatmaps(deep, shallow, up);
    const auto& v = label.fused.values;
    label.hard_index =
        static_cast<int64_t>(std::max_element(v.begin(), v.end()) - v.begin());
    if (mode == PseudoMode::Soft) {
        Heatmap p = to_probability(label.fused, scale);
        label.soft_target = Tensor::from_vector({p.h, p.w}, std::move(p.values));
    }
    return label;
}

Tensor pseudo_ce(const Tensor& shallow_heat, const PseudoLabel& label, float scale) {
    if (shallow_heat.rank() != 2 || shallow_heat.dim(0) != label.fused.h ||
        shallow_heat.dim(1) != label.fused.w)
        throw ShapeError("pseudo_ce: heatmap " + shape_str(shallow_heat.shape()) + " vs target " +
                         std::to_string(label.fused.h) + "x" + std::to_string(label.fused.w));
    if (label.mode == PseudoMode::Hard)
        return cross_entropy_at(shallow_heat, scale, label.hard_index);
    return cross_entropy_soft(shallow_heat, scale, label.soft_target);
}

Tensor mutual_information(const Tensor& x, const Tensor& y, int bins, float sigma) {
    if (x.rank() != 1 || y.rank() != 1)
        throw ShapeError("mutual_information: expects 1-D sequences, got " +
                         shape_str(x.shape()) + " and " + shape_str(y.shape()));
    if (x.dim(0) != y.dim(0))
        throw ShapeError("mutual_information: lengths differ, " + std::to_string(x.dim(0)) +
                         " vs " + std::to_string(y.dim(0)));
    if (bins < 2) throw ArgumentError("mutual_information: bins must be >= 2");
    const int n = x.dim(0);

    Tensor ax = soft_bin_assign(minmax_normalize(x), bins, sigma);  // [n,B]
    Tensor ay = soft_bin_assign(minmax_normalize(y), bins, sigma);
    Tensor joint = scale(matmul(transpose2d(ax), ay), 1.0f / static_cast<float>(n));  // [B,B]
    Tensor px = sum_axis1(joint);
    Tensor py = sum_axis0(joint);
    Tensor outer = matmul(reshape(px, {bins, 1}), reshape(py, {1, bins}));
    // p log(p / (px py + 1e-8)); the inner 1e-12 keeps empty cells at exactly 0
    Tensor ratio = sub(log_t(add_scalar(joint, 1e-12f)), log_t(add_scalar(outer, 1e-8f)));
    Tensor mi = sum_all(mul(reshape(joint, {bins * bins}), reshape(ratio, {bins * bins})));
    return clamp_min(mi, 0.0f);
}

Tensor cmi_loss(const EnhancedPair& enh, const CmiOptions& opts) {
    auto flat = [&](const Tensor& t) {
        Tensor f = reshape(t, {static_cast<int>(t.numel())});
        return sample_stride(f, opts.max_samples);
    };
    Tensor mi_sar = mutual_information(flat(enh.cmi_sar), flat(enh.specific_sar), opts.bins,
                                       opts.sigma);
    Tensor mi_opt = mutual_information(flat(enh.cmi_opt), flat(enh.specific_opt), opts.bins,
                                       opts.sigma);
    return add(mi_sar, mi_opt);
}

}  // namespace sarmatch
