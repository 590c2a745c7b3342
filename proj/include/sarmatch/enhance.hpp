#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sarmatch/backbone.hpp"
#include "sarmatch/params.hpp"
#include "sarmatch/tensor.hpp"

namespace sarmatch {

struct EnhanceConfig {
    int channels = 64;
    int heads = 4;                 // heads * head_dim == channels
    bool normalize_attention = true;  // per-row normalizer on the kernel attention
    int blocks_n = 1;
    bool pool_tokens = false;      // 2x2-average-pool tokens before attention
    bool cmi_tap_after_conv = true;  // where the shared map is tapped for the MI loss

    int head_dim() const;
    void validate() const;
};

// phi(x) = ELU(x) + 1 kernel attention, O(N) in tokens. Q [Nq,C], K/V [Nk,C].
// Normalized mode divides each row by phi(q) . sum(phi(k)) + eps; the
// unnormalized variant is the formula as printed.
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                        bool normalized);

// Learned Q/K/V/out projections around linear_attention.
class AttentionLayer {
public:
    AttentionLayer(ParamStore& params, const std::string& prefix, const EnhanceConfig& cfg);
    // tokens in, tokens out; self-attention passes the same tensor twice
    Tensor forward(const Tensor& q_tokens, const Tensor& kv_tokens) const;

private:
    ParamStore* params_;
    std::string prefix_;
    int heads_;
    bool normalized_;
};

// Parallel 1x1/3x3/5x5 convolutions; out = x + ELU(sum + bias).
// Zero weights give an exact passthrough.
class MultiscaleConvBlock {
public:
    MultiscaleConvBlock(ParamStore& params, const std::string& prefix, int channels);
    Tensor forward(const Tensor& x) const;

private:
    ParamStore* params_;
    std::string prefix_;
};

struct EnhancedPair {
    Tensor shared_opt, shared_sar;      // maps used for matching
    Tensor specific_opt, specific_sar;  // discarded maps, only the MI loss sees them
    // taps used by the MI loss (equal to shared_* when cmi_tap_after_conv)
    Tensor cmi_opt, cmi_sar;
};

// One feature enhancement block: per-modality self-attention subtraction,
// shared cross-attention addition, each followed by a multiscale conv.
class EnhanceBlock {
public:
    EnhanceBlock(ParamStore& params, const std::string& prefix, const EnhanceConfig& cfg);

    // (residual after conv, extracted self-attention map)
    std::pair<Tensor, Tensor> self_attention(const Tensor& f, Modality m) const;
    // residual additions, before the shared conv
    std::pair<Tensor, Tensor> cross_attention(const Tensor& f1, const Tensor& f2) const;

    struct Output {
        Tensor out_opt, out_sar;          // after the shared conv
        Tensor pre_conv_opt, pre_conv_sar;  // after cross-attention residual add
    };
    Output forward(const Tensor& f_opt, const Tensor& f_sar) const;

private:
    Tensor attend_map(const AttentionLayer& layer, const Tensor& q_map, const Tensor& kv_map) const;

    EnhanceConfig cfg_;
    AttentionLayer self_opt_, self_sar_, cross_;
    MultiscaleConvBlock conv_self_opt_, conv_self_sar_, conv_cross_;
};

// blocks_n enhancement blocks applied sequentially; the specific map is the
// module input minus the final shared output.
class EnhanceModule {
public:
    EnhanceModule(ParamStore& params, const std::string& prefix, const EnhanceConfig& cfg);
    EnhancedPair forward(const Tensor& f_opt, const Tensor& f_sar) const;
    const EnhanceConfig& config() const { return cfg_; }

private:
    EnhanceConfig cfg_;
    std::vector<EnhanceBlock> blocks_;
};

// [C,H,W] <-> [H*W, C]
Tensor map_to_tokens(const Tensor& f);
Tensor tokens_to_map(const Tensor& tokens, int c, int h, int w);

}  // namespace sarmatch
