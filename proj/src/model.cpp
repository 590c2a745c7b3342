#include "sarmatch/model.hpp"

#include <chrono>
#include <sstream>

#include "sarmatch/errors.hpp"
#include "sarmatch/serialize.hpp"

namespace sarmatch {

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["backbone.stem_channels"] = std::to_string(backbone.stem_channels);
    kv["backbone.stage_channels"] = join_ints(backbone.stage_channels);
    kv["backbone.fpn_channels_shallow"] = std::to_string(backbone.fpn_channels_shallow);
    kv["backbone.fpn_channels_deep"] = std::to_string(backbone.fpn_channels_deep);
    kv["backbone.blocks_per_stage"] = std::to_string(backbone.blocks_per_stage);
    kv["enhance.heads_deep"] = std::to_string(enhance_heads_deep);
    kv["enhance.heads_shallow"] = std::to_string(enhance_heads_shallow);
    kv["enhance.blocks"] = std::to_string(enhance_blocks);
    kv["enhance.normalize_attention"] = normalize_attention ? "1" : "0";
    kv["enhance.pool_shallow_tokens"] = pool_shallow_tokens ? "1" : "0";
    kv["enhance.cmi_tap_after_conv"] = cmi_tap_after_conv ? "1" : "0";
    kv["multiscale"] = multiscale ? "1" : "0";
    kv["ncc_mode"] = (ncc_mode == NccMode::Joint) ? "joint" : "per-channel";
    kv["fuse_upscale"] = (fuse_upscale == UpscaleMode::Bilinear) ? "bilinear" : "nearest";
    kv["logit_scale"] = std::to_string(logit_scale);
    kv["cmi.bins"] = std::to_string(cmi.bins);
    kv["cmi.sigma"] = std::to_string(cmi.sigma);
    kv["cmi.max_samples"] = std::to_string(cmi.max_samples);
    return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto get = [&](const char* k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError(std::string("model config missing key ") + k);
        return it->second;
    };
    c.backbone.stem_channels = std::stoi(get("backbone.stem_channels"));
    c.backbone.stage_channels = parse_ints(get("backbone.stage_channels"));
    c.backbone.fpn_channels_shallow = std::stoi(get("backbone.fpn_channels_shallow"));
    c.backbone.fpn_channels_deep = std::stoi(get("backbone.fpn_channels_deep"));
    c.backbone.blocks_per_stage = std::stoi(get("backbone.blocks_per_stage"));
    c.enhance_heads_deep = std::stoi(get("enhance.heads_deep"));
    c.enhance_heads_shallow = std::stoi(get("enhance.heads_shallow"));
    c.enhance_blocks = std::stoi(get("enhance.blocks"));
    c.normalize_attention = get("enhance.normalize_attention") == "1";
    c.pool_shallow_tokens = get("enhance.pool_shallow_tokens") == "1";
    c.cmi_tap_after_conv = get("enhance.cmi_tap_after_conv") == "1";
    c.multiscale = get("multiscale") == "1";
    c.ncc_mode = ncc_mode_from_string(get("ncc_mode"));
    c.fuse_upscale = get("fuse_upscale") == "bilinear" ? UpscaleMode::Bilinear : UpscaleMode::Nearest;
    c.logit_scale = std::stof(get("logit_scale"));
    c.cmi.bins = std::stoi(get("cmi.bins"));
    c.cmi.sigma = std::stof(get("cmi.sigma"));
    c.cmi.max_samples = std::stoi(get("cmi.max_samples"));
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.backbone.stem_channels = 8;
    c.backbone.stage_channels = {8, 16, 24, 32};
    c.backbone.fpn_channels_shallow = 8;
    c.backbone.fpn_channels_deep = 32;
    c.backbone.blocks_per_stage = 1;
    c.enhance_heads_deep = 4;
    c.enhance_heads_shallow = 2;
    c.cmi.max_samples = 2048;
    return c;
}

Tensor image_to_tensor(const Image& img) {
    return Tensor::from_vector({1, img.h, img.w}, std::vector<float>(img.pix));
}

Model::Model(const ModelConfig& config, uint64_t seed) : cfg_(config) {
    params_ = std::make_unique<ParamStore>(seed);
    backbone_ = std::make_unique<Backbone>(cfg_.backbone, *params_, "backbone");
    if (cfg_.use_enhance()) {
        EnhanceConfig es;
        es.channels = cfg_.backbone.fpn_channels_shallow;
        es.heads = cfg_.enhance_heads_shallow;
        es.normalize_attention = cfg_.normalize_attention;
        es.blocks_n = cfg_.enhance_blocks;
        es.pool_tokens = cfg_.pool_shallow_tokens;
        es.cmi_tap_after_conv = cfg_.cmi_tap_after_conv;
        enhance_shallow_ = std::make_unique<EnhanceModule>(*params_, "enhance.shallow", es);

        EnhanceConfig ed = es;
        ed.channels = cfg_.backbone.fpn_channels_deep;
        ed.heads = cfg_.enhance_heads_deep;
        ed.pool_tokens = false;  // deep grids are small
        enhance_deep_ = std::make_unique<EnhanceModule>(*params_, "enhance.deep", ed);
    }
}

Model::Forward Model::forward_pair(const ImagePair& pair) const {
    Tensor t_opt = image_to_tensor(pair.optical);
    Tensor t_sar = image_to_tensor(pair.sar);
    FeaturePair f_opt = backbone_->extract(t_opt, Modality::Optical);
    FeaturePair f_sar = backbone_->extract(t_sar, Modality::Sar);

    Forward out;
    Tensor shallow_opt = f_opt.shallow, shallow_sar = f_sar.shallow;
    Tensor deep_opt = f_opt.deep, deep_sar = f_sar.deep;
    if (cfg_.use_enhance()) {
        out.has_enhance = true;
        out.enh_shallow = enhance_shallow_->forward(shallow_opt, shallow_sar);
        shallow_opt = out.enh_shallow.shared_opt;
        shallow_sar = out.enh_shallow.shared_sar;
        if (cfg_.multiscale) {
            out.enh_deep = enhance_deep_->forward(deep_opt, deep_sar);
            deep_opt = out.enh_deep.shared_opt;
            deep_sar = out.enh_deep.shared_sar;
        }
    }

    NccResult shallow = ncc_map(shallow_sar, shallow_opt, cfg_.ncc_mode);
    out.heat_shallow = shallow.map;
    out.shallow_zero_var = shallow.zero_variance;
    if (cfg_.multiscale) {
        NccResult deep = ncc_map(deep_sar, deep_opt, cfg_.ncc_mode);
        out.heat_deep = deep.map;
        out.deep_zero_var = deep.zero_variance;
    }
    return out;
}

MatchResult Model::infer(const ImagePair& pair, bool shallow_only) const {
    NoGradGuard ng;
    MatchResult r;
    const double t0 = now_ms();

    Tensor t_opt = image_to_tensor(pair.optical);
    Tensor t_sar = image_to_tensor(pair.sar);
    FeaturePair f_opt = backbone_->extract(t_opt, Modality::Optical);
    FeaturePair f_sar = backbone_->extract(t_sar, Modality::Sar);
    Tensor shallow_opt = f_opt.shallow, shallow_sar = f_sar.shallow;
    Tensor deep_opt = f_opt.deep, deep_sar = f_sar.deep;
    if (cfg_.use_enhance()) {
        EnhancedPair es = enhance_shallow_->forward(shallow_opt, shallow_sar);
        shallow_opt = es.shared_opt;
        shallow_sar = es.shared_sar;
        if (cfg_.multiscale && !shallow_only) {
            EnhancedPair ed = enhance_deep_->forward(deep_opt, deep_sar);
            deep_opt = ed.shared_opt;
            deep_sar = ed.shared_sar;
        }
    }
    const double t1 = now_ms();

    r.shallow = ncc_heatmap(shallow_sar, shallow_opt, HeatmapLevel::Shallow, cfg_.ncc_mode);
    const bool fuse = cfg_.multiscale && !shallow_only;
    if (fuse) {
        r.deep = ncc_heatmap(deep_sar, deep_opt, HeatmapLevel::Deep, cfg_.ncc_mode);
        r.fused = fuse_heatmaps(r.deep, r.shallow, cfg_.fuse_upscale);
    } else {
        r.fused = r.shallow;
    }
    r.fused_prob = to_probability(r.fused, cfg_.logit_scale);
    auto [row, col] = r.fused_prob.argmax_rc();
    r.row = row;
    r.col = col;
    r.peak_score = r.fused_prob.at(row, col);
    const double t2 = now_ms();

    r.feature_ms = t1 - t0;
    r.match_ms = t2 - t1;
    r.elapsed_ms = t2 - t0;
    return r;
}

void Model::save(const std::string& path, const NamedTensors& extra) const {
    NamedTensors entries = params_->items();
    entries.insert(entries.end(), extra.begin(), extra.end());
    save_checkpoint(path, entries);
    auto kv = cfg_.to_kv();
    kv["seed"] = std::to_string(params_->seed());
    save_kv_file(path + ".cfg", kv);
}

NamedTensors Model::load(const std::string& path) {
    NamedTensors entries = load_checkpoint(path);
    NamedTensors own, extra;
    for (auto& e : entries) {
        if (params_->has(e.first)) own.push_back(std::move(e));
        else extra.push_back(std::move(e));
    }
    params_->load_values(own);
    return extra;
}

Model Model::from_checkpoint(const std::string& path, NamedTensors* extra) {
    auto kv = load_kv_file(path + ".cfg");
    ModelConfig cfg = ModelConfig::from_kv(kv);
    uint64_t seed = 1;
    if (auto it = kv.find("seed"); it != kv.end()) seed = std::stoull(it->second);
    Model m(cfg, seed);
    NamedTensors rest = m.load(path);
    if (extra) *extra = std::move(rest);
    return m;
}

}  // namespace sarmatch
