#include "sarmatch/enhance.hpp"

#include <cmath>

#include "sarmatch/errors.hpp"

namespace sarmatch {

namespace {
constexpr float kNormEps = 1e-6f;
}

int EnhanceConfig::head_dim() const { return channels / heads; }

void EnhanceConfig::validate() const {
    if (channels < 1 || heads < 1 || blocks_n < 1)
        throw ConfigError("enhance: channels/heads/blocks_n must be positive");
    if (channels % heads != 0)
        throw ConfigError("enhance: heads (" + std::to_string(heads) +
                          ") must divide channels (" + std::to_string(channels) + ")");
}

Tensor map_to_tokens(const Tensor& f) {
    if (f.rank() != 3) throw ShapeError("map_to_tokens: expects [C,H,W], got " + shape_str(f.shape()));
    const int c = f.dim(0), n = f.dim(1) * f.dim(2);
    return transpose2d(reshape(f, {c, n}));
}

Tensor tokens_to_map(const Tensor& tokens, int c, int h, int w) {
    if (tokens.rank() != 2 || tokens.dim(1) != c || tokens.dim(0) != h * w)
        throw ShapeError("tokens_to_map: got " + shape_str(tokens.shape()) + " for C=" +
                         std::to_string(c) + " H=" + std::to_string(h) + " W=" + std::to_string(w));
    return reshape(transpose2d(tokens), {c, h, w});
}

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                        bool normalized) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("linear_attention: expects 2-D token matrices");
    const int c = q.dim(1);
    if (k.dim(1) != c || v.dim(1) != c)
        throw ShapeError("linear_attention: channel mismatch on axis 1: q " + shape_str(q.shape()) +
                         ", k " + shape_str(k.shape()) + ", v " + shape_str(v.shape()));
    if (k.dim(0) != v.dim(0))
        throw ShapeError("linear_attention: K and V row counts differ");
    if (heads < 1 || c % heads != 0)
        throw ArgumentError("linear_attention: heads must divide channels");
    const int d = c / heads;

    Tensor fq = add_scalar(elu(q), 1.0f);
    Tensor fk = add_scalar(elu(k), 1.0f);

    std::vector<Tensor> out_heads;
    out_heads.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(fq, h * d, (h + 1) * d);
        Tensor kh = slice_cols(fk, h * d, (h + 1) * d);
        Tensor vh = slice_cols(v, h * d, (h + 1) * d);
        Tensor kv = matmul(transpose2d(kh), vh);  // [d,d]
        Tensor num = matmul(qh, kv);              // [Nq,d]
        if (normalized) {
            Tensor ksum = sum_axis0(kh);                          // [d]
            Tensor den = reshape(matmul(qh, reshape(ksum, {d, 1})), {q.dim(0)});
            Tensor inv = div(Tensor::scalar(1.0f), add_scalar(den, kNormEps));
            num = mul_rows(num, inv);
        }
        out_heads.push_back(num);
    }
    return heads == 1 ? out_heads[0] : concat_cols(out_heads);
}

AttentionLayer::AttentionLayer(ParamStore& params, const std::string& prefix,
                               const EnhanceConfig& cfg)
    : params_(&params), prefix_(prefix), heads_(cfg.heads), normalized_(cfg.normalize_attention) {
    const int c = cfg.channels;
    const float stddev = 1.0f / std::sqrt(static_cast<float>(c));
    params.create(prefix + ".wq", {c, c}, stddev);
    params.create(prefix + ".wk", {c, c}, stddev);
    params.create(prefix + ".wv", {c, c}, stddev);
    params.create(prefix + ".bq", {c}, 0.0f);
    params.create(prefix + ".bk", {c}, 0.0f);
    params.create(prefix + ".bv", {c}, 0.0f);
    // zero-init output projection: the block starts as an exact identity
    params.create(prefix + ".wo", {c, c}, 0.0f);
    params.create(prefix + ".bo", {c}, 0.0f);
}

Tensor AttentionLayer::forward(const Tensor& q_tokens, const Tensor& kv_tokens) const {
    auto proj = [&](const Tensor& t, const char* w, const char* b) {
        return add_rowvec(matmul(t, params_->get(prefix_ + w)), params_->get(prefix_ + b));
    };
    Tensor q = proj(q_tokens, ".wq", ".bq");
    Tensor k = proj(kv_tokens, ".wk", ".bk");
    Tensor v = proj(kv_tokens, ".wv", ".bv");
    Tensor a = linear_attention(q, k, v, heads_, normalized_);
    return proj(a, ".wo", ".bo");
}

MultiscaleConvBlock::MultiscaleConvBlock(ParamStore& params, const std::string& prefix,
                                         int channels)
    : params_(&params), prefix_(prefix) {
    // zero-init keeps the block an exact passthrough until trained
    params.create(prefix + ".k1", {channels, channels, 1, 1}, 0.0f);
    params.create(prefix + ".k3", {channels, channels, 3, 3}, 0.0f);
    params.create(prefix + ".k5", {channels, channels, 5, 5}, 0.0f);
    params.create(prefix + ".bias", {channels}, 0.0f);
}

Tensor MultiscaleConvBlock::forward(const Tensor& x) const {
    Tensor s = conv2d(x, params_->get(prefix_ + ".k1"), 1, 0);
    s = add(s, conv2d(x, params_->get(prefix_ + ".k3"), 1, 1));
    s = add(s, conv2d(x, params_->get(prefix_ + ".k5"), 1, 2));
    s = add_channel_bias(s, params_->get(prefix_ + ".bias"));
    return add(x, elu(s));
}

EnhanceBlock::EnhanceBlock(ParamStore& params, const std::string& prefix, const EnhanceConfig& cfg)
    : cfg_(cfg),
      self_opt_(params, prefix + ".self_opt", cfg),
      self_sar_(params, prefix + ".self_sar", cfg),
      cross_(params, prefix + ".cross", cfg),
      conv_self_opt_(params, prefix + ".conv_self_opt", cfg.channels),
      conv_self_sar_(params, prefix + ".conv_self_sar", cfg.channels),
      conv_cross_(params, prefix + ".conv_cross", cfg.channels) {}

Tensor EnhanceBlock::attend_map(const AttentionLayer& layer, const Tensor& q_map,
                                const Tensor& kv_map) const {
    const int c = q_map.dim(0), h = q_map.dim(1), w = q_map.dim(2);
    const bool pool = cfg_.pool_tokens && h % 2 == 0 && w % 2 == 0 && kv_map.dim(1) % 2 == 0 &&
                      kv_map.dim(2) % 2 == 0;
    if (!pool) {
        Tensor out = layer.forward(map_to_tokens(q_map), map_to_tokens(kv_map));
        return tokens_to_map(out, c, h, w);
    }
    Tensor qp = avg_pool2(q_map);
    Tensor kvp = avg_pool2(kv_map);
    Tensor out = layer.forward(map_to_tokens(qp), map_to_tokens(kvp));
    Tensor out_map = tokens_to_map(out, c, h / 2, w / 2);
    return bilinear_resize(out_map, h, w, false);
}

std::pair<Tensor, Tensor> EnhanceBlock::self_attention(const Tensor& f, Modality m) const {
    const AttentionLayer& layer = (m == Modality::Optical) ? self_opt_ : self_sar_;
    const MultiscaleConvBlock& conv =
        (m == Modality::Optical) ? conv_self_opt_ : conv_self_sar_;
    Tensor extracted = attend_map(layer, f, f);
    Tensor residual = sub(f, extracted);
    return {conv.forward(residual), extracted};
}

std::pair<Tensor, Tensor> EnhanceBlock::cross_attention(const Tensor& f1, const Tensor& f2) const {
    if (f1.dim(0) != f2.dim(0))
        throw ShapeError("cross_attention: channel mismatch on axis 0: " +
                         std::to_string(f1.dim(0)) + " vs " + std::to_string(f2.dim(0)));
    Tensor c1 = attend_map(cross_, f1, f2);
    Tensor c2 = attend_map(cross_, f2, f1);
    return {add(f1, c1), add(f2, c2)};
}

EnhanceBlock::Output EnhanceBlock::forward(const Tensor& f_opt, const Tensor& f_sar) const {
    auto [r_opt, extracted_opt] = self_attention(f_opt, Modality::Optical);
    auto [r_sar, extracted_sar] = self_attention(f_sar, Modality::Sar);
    auto [pre_opt, pre_sar] = cross_attention(r_opt, r_sar);
    Output out;
    out.pre_conv_opt = pre_opt;
    out.pre_conv_sar = pre_sar;
    out.out_opt = conv_cross_.forward(pre_opt);
    out.out_sar = conv_cross_.forward(pre_sar);
    return out;
}

EnhanceModule::EnhanceModule(ParamStore& params, const std::string& prefix,
                             const EnhanceConfig& cfg)
    : cfg_(cfg) {
    cfg_.validate();
    blocks_.reserve(cfg_.blocks_n);
    for (int b = 0; b < cfg_.blocks_n; ++b)
        blocks_.emplace_back(params, prefix + ".block" + std::to_string(b), cfg_);
}

EnhancedPair EnhanceModule::forward(const Tensor& f_opt, const Tensor& f_sar) const {
    Tensor x_opt = f_opt, x_sar = f_sar;
    Tensor tap_opt, tap_sar;
    for (const auto& block : blocks_) {
        auto out = block.forward(x_opt, x_sar);
        tap_opt = cfg_.cmi_tap_after_conv ? out.out_opt : out.pre_conv_opt;
        tap_sar = cfg_.cmi_tap_after_conv ? out.out_sar : out.pre_conv_sar;
        x_opt = out.out_opt;
        x_sar = out.out_sar;
    }
    EnhancedPair pair;
    pair.shared_opt = x_opt;
    pair.shared_sar = x_sar;
    pair.specific_opt = sub(f_opt, x_opt);
    pair.specific_sar = sub(f_sar, x_sar);
    pair.cmi_opt = tap_opt;
    pair.cmi_sar = tap_sar;
    return pair;
}

}  // namespace sarmatch
