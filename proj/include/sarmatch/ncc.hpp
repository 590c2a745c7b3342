#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sarmatch/tensor.hpp"

namespace sarmatch {

enum class HeatmapLevel { Shallow, Deep };
enum class HeatmapKind { Raw, Probability };
enum class NccMode { Joint, PerChannel };
enum class UpscaleMode { Bilinear, Nearest };

NccMode ncc_mode_from_string(const std::string& s);

// 2-D similarity surface over all valid template placements.
struct Heatmap {
    HeatmapLevel level = HeatmapLevel::Shallow;
    HeatmapKind kind = HeatmapKind::Raw;
    int h = 0, w = 0;
    std::vector<float> values;
    // set when any window (or the template) had no variance and scored 0
    bool zero_variance = false;

    float at(int r, int c) const { return values[static_cast<size_t>(r) * w + c]; }
    std::pair<int, int> argmax_rc() const;
    float peak() const;
};

// Differentiable NCC map as a tensor (training path).
struct NccResult {
    Tensor map;  // [Ho,Wo]
    bool zero_variance = false;
};
NccResult ncc_map(const Tensor& tpl, const Tensor& ref, NccMode mode = NccMode::Joint);

// Inference-path wrappers producing Heatmap values.
Heatmap ncc_heatmap(const Tensor& tpl, const Tensor& ref, HeatmapLevel level,
                    NccMode mode = NccMode::Joint);
// Direct-summation reference implementation (double accumulation).
Heatmap ncc_heatmap_naive(const Tensor& tpl, const Tensor& ref, HeatmapLevel level,
                          NccMode mode = NccMode::Joint);

// upscale(deep) ⊙ shallow; result is a shallow-level raw heatmap
Heatmap fuse_heatmaps(const Heatmap& deep, const Heatmap& shallow,
                      UpscaleMode up = UpscaleMode::Bilinear);

// flat softmax with logit scale; kind becomes Probability
Heatmap to_probability(const Heatmap& hm, float scale);

Heatmap heatmap_from_tensor(HeatmapLevel level, const Tensor& map2d, bool zero_variance = false);

// HMP1: "HMP1" | u32 H | u32 W | f32 data
void save_heatmap(const std::string& path, const Heatmap& hm);
Heatmap load_heatmap(const std::string& path, HeatmapLevel level = HeatmapLevel::Shallow);
// 8-bit PGM rendering, min-max normalized
void save_heatmap_pgm(const std::string& path, const Heatmap& hm);

}  // namespace sarmatch
