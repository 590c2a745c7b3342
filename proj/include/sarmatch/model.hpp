#pragma once

#include <map>
#include <memory>
#include <string>

#include "sarmatch/backbone.hpp"
#include "sarmatch/data.hpp"
#include "sarmatch/enhance.hpp"
#include "sarmatch/losses.hpp"
#include "sarmatch/ncc.hpp"
#include "sarmatch/params.hpp"

namespace sarmatch {

struct ModelConfig {
    BackboneConfig backbone;
    int enhance_heads_deep = 4;
    int enhance_heads_shallow = 2;
    int enhance_blocks = 1;           // 0 disables the enhancement module
    bool normalize_attention = true;
    bool pool_shallow_tokens = true;  // 2x2 pooled tokens for shallow attention
    bool cmi_tap_after_conv = true;
    bool multiscale = true;           // compute the deep level and fuse
    NccMode ncc_mode = NccMode::Joint;
    UpscaleMode fuse_upscale = UpscaleMode::Bilinear;
    float logit_scale = 10.0f;
    CmiOptions cmi;

    bool use_enhance() const { return enhance_blocks > 0; }

    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

    // desk-scale width preset used by the toy benchmark
    static ModelConfig tiny();
};

struct MatchResult {
    int row = 0, col = 0;
    float peak_score = 0.0f;  // probability at the predicted offset
    Heatmap deep, shallow, fused, fused_prob;
    double elapsed_ms = 0.0, feature_ms = 0.0, match_ms = 0.0;
};

Tensor image_to_tensor(const Image& img);

// Full matching model: shared-weight feature extractor, optional per-level
// enhancement modules, NCC heatmaps at both levels.
class Model {
public:
    Model(const ModelConfig& config, uint64_t seed);

    struct Forward {
        Tensor heat_shallow;  // [Hs,Ws] on the tape
        Tensor heat_deep;     // defined only when multiscale
        bool shallow_zero_var = false, deep_zero_var = false;
        bool has_enhance = false;
        EnhancedPair enh_shallow, enh_deep;
    };
    Forward forward_pair(const ImagePair& pair) const;

    MatchResult infer(const ImagePair& pair, bool shallow_only = false) const;

    ParamStore& params() { return *params_; }
    const ParamStore& params() const { return *params_; }
    const ModelConfig& config() const { return cfg_; }
    uint64_t seed() const { return params_->seed(); }

    // CKPT1 plus a plain-text config echo at <path>.cfg. Entries under other
    // namespaces (optimizer state) are preserved for the caller.
    void save(const std::string& path, const NamedTensors& extra = {}) const;
    NamedTensors load(const std::string& path);  // returns non-parameter entries

    static Model from_checkpoint(const std::string& path, NamedTensors* extra = nullptr);

private:
    ModelConfig cfg_;
    std::unique_ptr<ParamStore> params_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<EnhanceModule> enhance_shallow_, enhance_deep_;
};

}  // namespace sarmatch
