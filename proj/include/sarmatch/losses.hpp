#pragma once

#include <utility>

#include "sarmatch/enhance.hpp"
#include "sarmatch/ncc.hpp"
#include "sarmatch/tensor.hpp"

namespace sarmatch {

// One-hot target: exactly one cell set, at (row,col).
struct GroundTruthHeatmap {
    HeatmapLevel level = HeatmapLevel::Shallow;
    int h = 0, w = 0;
    int row = 0, col = 0;

    int64_t flat_index() const { return static_cast<int64_t>(row) * w + col; }
};

// Shallow one-hot at gt; deep one-hot at (gt/8, clamped into the deep grid).
std::pair<GroundTruthHeatmap, GroundTruthHeatmap> make_gt_heatmaps(int gt_row, int gt_col,
                                                                   int shallow_h, int shallow_w,
                                                                   int deep_h, int deep_w);

// -log softmax_flat(scale * heat)[gt]; scale sharpens the bounded NCC logits.
Tensor heatmap_ce(const Tensor& heat, const GroundTruthHeatmap& gt, float scale);

enum class PseudoMode { Hard, Soft };
PseudoMode pseudo_mode_from_string(const std::string& s);

// Training target for unlabeled pairs, built from heatmap snapshots so no
// gradient can reach it.
struct PseudoLabel {
    PseudoMode mode = PseudoMode::Hard;
    int64_t hard_index = 0;  // argmax of the fused map
    Tensor soft_target;      // soft mode only; constant distribution
    Heatmap fused;
};
PseudoLabel make_pseudo_label(const Heatmap& deep, const Heatmap& shallow,
                              PseudoMode mode = PseudoMode::Hard, float scale = 10.0f,
                              UpscaleMode up = UpscaleMode::Bilinear);

Tensor pseudo_ce(const Tensor& shallow_heat, const PseudoLabel& label, float scale);

// Soft-histogram mutual information between two equal-length sequences.
// Each sequence is min-max normalized, soft-assigned to `bins` Gaussian bins
// (bandwidth sigma), and the joint histogram is the outer-product
// accumulation. Estimator clamped at zero (true MI is non-negative).
Tensor mutual_information(const Tensor& x, const Tensor& y, int bins = 16,
                          float sigma = 1.0f / 16.0f);

struct CmiOptions {
    int bins = 16;
    float sigma = 1.0f / 16.0f;
    int max_samples = 8192;  // strided subsample cap per map
};

// MI(shared_sar, specific_sar) + MI(shared_opt, specific_opt) for one level.
Tensor cmi_loss(const EnhancedPair& enh, const CmiOptions& opts = {});

// Per-batch scalar loss components and their compositions.
struct LossBundle {
    double ce_deep = 0, ce_shallow = 0;
    double pce = 0;
    double cmi_sar = 0, cmi_opt = 0;
    double cmi_deep = 0, cmi_shallow = 0;
    double cmi = 0;
    double sup_total = 0, unsup_total = 0, semi_total = 0;
};

}  // namespace sarmatch
