#include "sarmatch/backbone.hpp"

#include "sarmatch/errors.hpp"

namespace sarmatch {

void BackboneConfig::validate() const {
    if (stage_channels.size() != 4)
        throw ConfigError("backbone: expected 4 stages, got " +
                          std::to_string(stage_channels.size()));
    if (stem_channels < 1 || fpn_channels_shallow < 1 || fpn_channels_deep < 1 ||
        blocks_per_stage < 1)
        throw ConfigError("backbone: all channel/block counts must be positive");
    for (int c : stage_channels)
        if (c < 1) throw ConfigError("backbone: stage channels must be positive");
}

Backbone::Backbone(const BackboneConfig& config, ParamStore& params, const std::string& prefix)
    : cfg_(config), params_(&params), prefix_(prefix) {
    cfg_.validate();
    auto& p = *params_;
    p.create_conv(prefix_ + ".stem.w", cfg_.stem_channels, 1, 3);
    p.create_const(prefix_ + ".stem.scale", {cfg_.stem_channels}, 1.0f);
    p.create(prefix_ + ".stem.bias", {cfg_.stem_channels}, 0.0f);

    int prev = cfg_.stem_channels;
    for (int s = 0; s < 4; ++s) {
        const int c = cfg_.stage_channels[s];
        const std::string sp = prefix_ + ".stage" + std::to_string(s);
        p.create_conv(sp + ".entry.w", c, prev, 3);
        p.create_const(sp + ".entry.scale", {c}, 1.0f);
        p.create(sp + ".entry.bias", {c}, 0.0f);
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            const std::string bp = sp + ".block" + std::to_string(b);
            p.create_conv(bp + ".conv1.w", c, c, 3);
            p.create_const(bp + ".conv1.scale", {c}, 1.0f);
            p.create(bp + ".conv1.bias", {c}, 0.0f);
            p.create_conv(bp + ".conv2.w", c, c, 3);
            p.create_const(bp + ".conv2.scale", {c}, 1.0f);
            p.create(bp + ".conv2.bias", {c}, 0.0f);
        }
        prev = c;
    }

    const int cd = cfg_.fpn_channels_deep, cs = cfg_.fpn_channels_shallow;
    // top-down path at C_d for strides 8/4/2, then the extra full-res level at C_s
    p.create_conv(prefix_ + ".fpn.lat3.w", cd, cfg_.stage_channels[3], 1);
    p.create_conv(prefix_ + ".fpn.lat2.w", cd, cfg_.stage_channels[2], 1);
    p.create_conv(prefix_ + ".fpn.lat1.w", cd, cfg_.stage_channels[1], 1);
    p.create_conv(prefix_ + ".fpn.lat0.w", cs, cfg_.stage_channels[0], 1);
    p.create_conv(prefix_ + ".fpn.shrink.w", cs, cd, 1);  // half-res C_d -> full-res C_s merge
    p.create_conv(prefix_ + ".fpn.out_deep.w", cd, cd, 3);
    p.create(prefix_ + ".fpn.out_deep.bias", {cd}, 0.0f);
    p.create_conv(prefix_ + ".fpn.out_shallow.w", cs, cs, 3);
    p.create(prefix_ + ".fpn.out_shallow.bias", {cs}, 0.0f);
}

Tensor Backbone::conv_unit(const Tensor& x, const std::string& name, int stride, int pad) const {
    Tensor y = conv2d(x, params_->get(name + ".w"), stride, pad);
    return channel_affine_elu(y, params_->get(name + ".scale"), params_->get(name + ".bias"));
}

Tensor Backbone::residual_block(const Tensor& x, const std::string& name) const {
    Tensor y = conv_unit(x, name + ".conv1", 1, 1);
    y = conv2d(y, params_->get(name + ".conv2.w"), 1, 1);
    y = mul_channel(y, params_->get(name + ".conv2.scale"));
    y = add_channel_bias(y, params_->get(name + ".conv2.bias"));
    return elu(add(y, x));
}

FeaturePair Backbone::extract(const Tensor& image, Modality modality) const {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw ShapeError("extract: expects [1,H,W], got " + shape_str(image.shape()));
    const int H = image.dim(1), W = image.dim(2);
    if (H % 8 != 0 || W % 8 != 0)
        throw ArgumentError("extract: input dims must be divisible by 8, got " +
                            std::to_string(H) + "x" + std::to_string(W));

    Tensor x = conv_unit(image, prefix_ + ".stem", 1, 1);
    std::vector<Tensor> stage_out;
    for (int s = 0; s < 4; ++s) {
        const std::string sp = prefix_ + ".stage" + std::to_string(s);
        if (s > 0) x = avg_pool2(x);  // exact 2x downsampling
        x = conv_unit(x, sp + ".entry", 1, 1);
        for (int b = 0; b < cfg_.blocks_per_stage; ++b)
            x = residual_block(x, sp + ".block" + std::to_string(b));
        stage_out.push_back(x);
    }

    auto lateral = [&](int i, const char* name) {
        return conv2d(stage_out[i], params_->get(prefix_ + std::string(".fpn.") + name + ".w"), 1, 0);
    };
    Tensor p3 = lateral(3, "lat3");                                       // 1/8
    Tensor p2 = add(lateral(2, "lat2"),
                    bilinear_resize(p3, stage_out[2].dim(1), stage_out[2].dim(2), false));  // 1/4
    Tensor p1 = add(lateral(1, "lat1"),
                    bilinear_resize(p2, stage_out[1].dim(1), stage_out[1].dim(2), false));  // 1/2
    Tensor up_full = bilinear_resize(p1, H, W, false);
    Tensor p0 = add(lateral(0, "lat0"), conv2d(up_full, params_->get(prefix_ + ".fpn.shrink.w"), 1, 0));

    Tensor deep = conv2d(p3, params_->get(prefix_ + ".fpn.out_deep.w"), 1, 1);
    deep = add_channel_bias(deep, params_->get(prefix_ + ".fpn.out_deep.bias"));
    Tensor shallow = conv2d(p0, params_->get(prefix_ + ".fpn.out_shallow.w"), 1, 1);
    shallow = add_channel_bias(shallow, params_->get(prefix_ + ".fpn.out_shallow.bias"));

    FeaturePair fp;
    fp.shallow = shallow;
    fp.deep = deep;
    fp.modality = modality;
    return fp;
}

}  // namespace sarmatch
