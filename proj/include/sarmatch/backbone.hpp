#pragma once

#include <string>
#include <vector>

#include "sarmatch/params.hpp"
#include "sarmatch/tensor.hpp"

namespace sarmatch {

enum class Modality { Optical, Sar };

struct BackboneConfig {
    int stem_channels = 16;
    std::vector<int> stage_channels = {16, 32, 64, 128};  // strides 1, 2, 4, 8
    int fpn_channels_shallow = 16;  // C_s
    int fpn_channels_deep = 64;     // C_d
    int blocks_per_stage = 1;

    void validate() const;
};

struct FeaturePair {
    Tensor shallow;  // [C_s, H, W]
    Tensor deep;     // [C_d, H/8, W/8]
    Modality modality = Modality::Optical;
};

// Residual pyramid feature extractor with shared weights across modalities.
// The first stage keeps full resolution; the top-down path adds an extra
// full-resolution level so shallow features match the input pixel grid.
// Normalization-free: per-channel affine + ELU after each conv.
class Backbone {
public:
    Backbone(const BackboneConfig& config, ParamStore& params, const std::string& prefix = "backbone");

    FeaturePair extract(const Tensor& image, Modality modality) const;  // image [1,H,W]
    const BackboneConfig& config() const { return cfg_; }

private:
    Tensor conv_unit(const Tensor& x, const std::string& name, int stride, int pad) const;
    Tensor residual_block(const Tensor& x, const std::string& name) const;

    BackboneConfig cfg_;
    ParamStore* params_;
    std::string prefix_;
};

}  // namespace sarmatch
