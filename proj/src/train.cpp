#include "sarmatch/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sarmatch/errors.hpp"
#include "sarmatch/serialize.hpp"

namespace fs = std::filesystem;

namespace sarmatch {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr > 0.0f)) throw ConfigError("train: lr must be > 0");
    if (weight_decay < 0.0f) throw ConfigError("train: negative weight decay");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (unlabeled_per_labeled < 0) throw ConfigError("train: negative labeled ratio");
    if (val_fraction < 0.0 || val_fraction > 0.5)
        throw ConfigError("train: val_fraction must be in [0, 0.5]");
    if (tpl_h < 8 || tpl_w < 8 || tpl_h % 8 || tpl_w % 8)
        throw ConfigError("train: template dims must be positive multiples of 8");
}

AdamW::AdamW(NamedTensors params, float lr, float weight_decay, float beta1, float beta2,
             float eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].second.numel(), 0.0f);
        v_[i].assign(params_[i].second.numel(), 0.0f);
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

void AdamW::clip_grad_norm(float max_norm) {
    if (max_norm <= 0.0f) return;
    double sq = 0;
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) continue;
        for (float g : p.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) continue;
        for (float& g : p.raw_grad()) g *= scale;
    }
}

void AdamW::step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(b1_, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(b2_, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        if (!p.has_grad()) continue;
        auto pv = p.raw_data();
        auto gv = p.grad();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const int64_t n = p.numel();
        for (int64_t j = 0; j < n; ++j) {
            const float g = gv[j];
            m[j] = b1_ * m[j] + (1.0f - b1_) * g;
            v[j] = b2_ * v[j] + (1.0f - b2_) * g * g;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            pv[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * pv[j]);
        }
    }
}

NamedTensors AdamW::state() const {
    NamedTensors out;
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto& shape = params_[i].second.shape();
        out.emplace_back("opt.m." + params_[i].first, Tensor::from_vector(shape, m_[i]));
        out.emplace_back("opt.v." + params_[i].first, Tensor::from_vector(shape, v_[i]));
    }
    out.emplace_back("opt.t", Tensor::from_vector({1}, {static_cast<float>(t_)}));
    return out;
}

void AdamW::load_state(const NamedTensors& state) {
    for (const auto& [name, t] : state) {
        if (name == "opt.t") {
            t_ = static_cast<int64_t>(t.at(0));
            continue;
        }
        const bool is_m = name.rfind("opt.m.", 0) == 0;
        const bool is_v = name.rfind("opt.v.", 0) == 0;
        if (!is_m && !is_v) continue;
        const std::string pname = name.substr(6);
        for (size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].first != pname) continue;
            auto& dst = is_m ? m_[i] : v_[i];
            if (static_cast<int64_t>(dst.size()) != t.numel())
                throw ShapeError("optimizer state size mismatch for " + name);
            std::copy(t.data().begin(), t.data().end(), dst.begin());
            break;
        }
    }
}

Trainer::Trainer(Model& model, const TrainConfig& cfg, const DatasetManifest& manifest)
    : model_(&model),
      cfg_(cfg),
      manifest_(&manifest),
      opt_(model.params().items(), cfg.lr, cfg.weight_decay) {
    cfg_.validate();

    // deterministic held-out split
    std::vector<int> idx(manifest.entries.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng(cfg_.seed ^ 0x76a1da7a5eedull);
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const size_t n_val = static_cast<size_t>(std::llround(cfg_.val_fraction * idx.size()));
    val_indices_.assign(idx.begin(), idx.begin() + n_val);
    train_indices_.assign(idx.begin() + n_val, idx.end());
    std::sort(val_indices_.begin(), val_indices_.end());
    std::sort(train_indices_.begin(), train_indices_.end());

    train_manifest_.base_dir = manifest.base_dir;
    for (int i : train_indices_) train_manifest_.entries.push_back(manifest.entries[i]);
}

ImagePair Trainer::load_entry(int idx, int epoch) const {
    const auto& e = train_manifest_.entries[idx];
    Rng crop_rng(cfg_.seed ^ (0x9e3779b97f4a7c15ull * (static_cast<uint64_t>(epoch) + 1) +
                              0x85ebca6bull * static_cast<uint64_t>(idx + 1)));
    return load_pair(e, train_manifest_.base_dir, cfg_.tpl_h, cfg_.tpl_w, crop_rng,
                     cfg_.static_crops);
}

void Trainer::check_finite(const LossBundle& b, const std::vector<int>& entries) const {
    if (std::isfinite(b.semi_total)) return;
    std::ostringstream os;
    os << "non-finite loss (semi_total=" << b.semi_total << ", ce_d=" << b.ce_deep
       << ", ce_s=" << b.ce_shallow << ", pce=" << b.pce << ", cmi=" << b.cmi << ") on entries [";
    for (size_t i = 0; i < entries.size(); ++i) {
        if (i) os << ",";
        os << train_manifest_.entries[entries[i]].optical_path;
    }
    os << "]";
    std::cerr << "train: " << os.str() << "\n";
    throw std::runtime_error("train aborted: " + os.str());
}

LossBundle Trainer::run_batch(const std::vector<ImagePair>& batch, bool labeled, bool want_pce) {
    const auto& mcfg = model_->config();
    const float inv_n = 1.0f / static_cast<float>(batch.size());
    LossBundle acc;

    for (const auto& pair : batch) {
        Model::Forward fwd = model_->forward_pair(pair);
        Tensor loss = Tensor::scalar(0.0f);
        LossBundle b;

        if (labeled) {
            if (!pair.has_gt)
                throw ArgumentError("labeled step on a pair without ground truth");
            auto [gt_s, gt_d] = make_gt_heatmaps(
                pair.gt_row, pair.gt_col, fwd.heat_shallow.dim(0), fwd.heat_shallow.dim(1),
                mcfg.multiscale ? fwd.heat_deep.dim(0) : 1,
                mcfg.multiscale ? fwd.heat_deep.dim(1) : 1);
            Tensor ce_s = heatmap_ce(fwd.heat_shallow, gt_s, cfg_.logit_scale);
            b.ce_shallow = ce_s.item();
            loss = add(loss, scale(ce_s, cfg_.w_ce));
            if (mcfg.multiscale) {
                Tensor ce_d = heatmap_ce(fwd.heat_deep, gt_d, cfg_.logit_scale);
                b.ce_deep = ce_d.item();
                loss = add(loss, scale(ce_d, cfg_.w_ce));
            }
        }
        if (want_pce) {
            // stop-gradient: targets come from value snapshots of the heatmaps
            Heatmap shallow_snap =
                heatmap_from_tensor(HeatmapLevel::Shallow, fwd.heat_shallow, fwd.shallow_zero_var);
            PseudoLabel label;
            if (mcfg.multiscale) {
                Heatmap deep_snap =
                    heatmap_from_tensor(HeatmapLevel::Deep, fwd.heat_deep, fwd.deep_zero_var);
                label = make_pseudo_label(deep_snap, shallow_snap, cfg_.pseudo_mode,
                                          cfg_.logit_scale, mcfg.fuse_upscale);
            } else {
                label.mode = cfg_.pseudo_mode;
                label.fused = shallow_snap;
                label.hard_index = static_cast<int64_t>(
                    std::max_element(shallow_snap.values.begin(), shallow_snap.values.end()) -
                    shallow_snap.values.begin());
                if (cfg_.pseudo_mode == PseudoMode::Soft) {
                    Heatmap p = to_probability(shallow_snap, cfg_.logit_scale);
                    label.soft_target = Tensor::from_vector({p.h, p.w}, std::move(p.values));
                }
            }
            Tensor pce = pseudo_ce(fwd.heat_shallow, label, cfg_.logit_scale);
            b.pce = pce.item();
            loss = add(loss, scale(pce, cfg_.w_pce));
        }
        if (fwd.has_enhance) {
            Tensor cmi_s = cmi_loss(fwd.enh_shallow, mcfg.cmi);
            b.cmi_shallow = cmi_s.item();
            Tensor cmi = cmi_s;
            if (mcfg.multiscale) {
                Tensor cmi_d = cmi_loss(fwd.enh_deep, mcfg.cmi);
                b.cmi_deep = cmi_d.item();
                cmi = add(cmi, cmi_d);
            }
            b.cmi = cmi.item();
            loss = add(loss, scale(cmi, cfg_.w_cmi));
        }

        scale(loss, inv_n).backward();

        acc.ce_deep += b.ce_deep * inv_n;
        acc.ce_shallow += b.ce_shallow * inv_n;
        acc.pce += b.pce * inv_n;
        acc.cmi += b.cmi * inv_n;
        acc.cmi_deep += b.cmi_deep * inv_n;
        acc.cmi_shallow += b.cmi_shallow * inv_n;
    }

    // compositions over the batch means
    if (labeled) acc.sup_total = cfg_.w_ce * (acc.ce_deep + acc.ce_shallow) +
                                 (want_pce ? 0.0 : cfg_.w_cmi * acc.cmi);
    if (want_pce) acc.unsup_total = cfg_.w_pce * acc.pce + (labeled ? 0.0 : cfg_.w_cmi * acc.cmi);
    if (labeled && want_pce) {
        // joint step on labeled data: CMI charged once, to the supervised side
        acc.sup_total = cfg_.w_ce * (acc.ce_deep + acc.ce_shallow) + cfg_.w_cmi * acc.cmi;
        acc.unsup_total = cfg_.w_pce * acc.pce;
    }
    acc.semi_total = acc.sup_total + acc.unsup_total;
    return acc;
}

LossBundle Trainer::train_step_labeled(const std::vector<ImagePair>& batch) {
    for (const auto& p : batch)
        if (!p.labeled) throw ArgumentError("train_step_labeled: batch contains unlabeled pairs");
    opt_.zero_grad();
    LossBundle b = run_batch(batch, /*labeled=*/true, /*want_pce=*/false);
    check_finite(b, {});
    opt_.clip_grad_norm(cfg_.clip_norm);
    opt_.step();
    return b;
}

LossBundle Trainer::train_step_unlabeled(const std::vector<ImagePair>& batch) {
    opt_.zero_grad();
    LossBundle b = run_batch(batch, /*labeled=*/false, /*want_pce=*/true);
    check_finite(b, {});
    opt_.clip_grad_norm(cfg_.clip_norm);
    opt_.step();
    return b;
}

ValPoint Trainer::validate(int epoch) const {
    ValPoint v;
    v.epoch = epoch;
    std::vector<PredGt> pseudo, shallow;
    for (int idx : val_indices_) {
        const auto& e = manifest_->entries[idx];
        // crops fixed per entry so the validation set is stable across epochs
        Rng crop_rng(cfg_.seed ^ (0xabcddcba12344321ull + static_cast<uint64_t>(idx)));
        ImagePair pair;
        try {
            pair = load_pair(e, manifest_->base_dir, cfg_.tpl_h, cfg_.tpl_w, crop_rng, true);
        } catch (const ArgumentError&) {
            continue;  // static crop impossible for this entry
        }
        if (!pair.has_gt) continue;
        MatchResult r = model_->infer(pair);
        auto [sr, sc] = r.shallow.argmax_rc();
        auto [fr, fc] = r.fused.argmax_rc();
        shallow.push_back({{sr, sc}, {pair.gt_row, pair.gt_col}});
        pseudo.push_back({{fr, fc}, {pair.gt_row, pair.gt_col}});
    }
    if (!pseudo.empty()) {
        EvalReport rp = compute_metrics(pseudo);
        EvalReport rs = compute_metrics(shallow);
        v.pseudo_rmse = rp.rmse_all;
        v.shallow_rmse = rs.rmse_all;
        v.pseudo_fmr5 = rp.fmr5;
        v.shallow_fmr5 = rs.fmr5;
    }
    return v;
}

FitResult Trainer::fit(const std::string& run_dir, const std::string& resume_from) {
    fs::create_directories(run_dir);
    {
        auto kv = model_->config().to_kv();
        kv["train.epochs"] = std::to_string(cfg_.epochs);
        kv["train.lr"] = std::to_string(cfg_.lr);
        kv["train.weight_decay"] = std::to_string(cfg_.weight_decay);
        kv["train.batch_size"] = std::to_string(cfg_.batch_size);
        kv["train.unlabeled_per_labeled"] = std::to_string(cfg_.unlabeled_per_labeled);
        kv["train.logit_scale"] = std::to_string(cfg_.logit_scale);
        kv["train.pseudo_mode"] = cfg_.pseudo_mode == PseudoMode::Hard ? "hard" : "soft";
        kv["train.seed"] = std::to_string(cfg_.seed);
        kv["train.joint_step"] = cfg_.joint_step ? "1" : "0";
        kv["train.static_crops"] = cfg_.static_crops ? "1" : "0";
        kv["train.tpl"] = std::to_string(cfg_.tpl_h) + "x" + std::to_string(cfg_.tpl_w);
        save_kv_file((fs::path(run_dir) / "config.txt").string(), kv);
    }

    int start_epoch = 0;
    if (!resume_from.empty()) {
        NamedTensors extra = model_->load(resume_from);
        opt_.load_state(extra);
        for (const auto& [name, t] : extra)
            if (name == "trainer.next_epoch") start_epoch = static_cast<int>(t.at(0));
    }

    std::ofstream log((fs::path(run_dir) / "train_log.jsonl").string(),
                      start_epoch ? std::ios::app : std::ios::trunc);
    std::ofstream val_log((fs::path(run_dir) / "val_log.jsonl").string(),
                          start_epoch ? std::ios::app : std::ios::trunc);

    BatchIterator batches(train_manifest_, cfg_.batch_size, cfg_.unlabeled_per_labeled, cfg_.seed);

    FitResult result;
    result.checkpoint_path = (fs::path(run_dir) / "model.ckpt").string();
    int step = 0;

    auto log_step = [&](const LossBundle& b, bool labeled) {
        log << "{\"step\":" << step << ",\"labeled\":" << (labeled ? "true" : "false")
            << ",\"ce_d\":" << b.ce_deep << ",\"ce_s\":" << b.ce_shallow << ",\"pce\":" << b.pce
            << ",\"cmi\":" << b.cmi << ",\"semi_total\":" << b.semi_total << "}\n";
    };

    for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
        const auto schedule = batches.epoch_schedule(epoch);
        size_t i = 0;
        while (i < schedule.size()) {
            if (!cfg_.joint_step) {
                const auto& spec = schedule[i++];
                std::vector<ImagePair> batch;
                batch.reserve(spec.entry_indices.size());
                for (int idx : spec.entry_indices) batch.push_back(load_entry(idx, epoch));
                opt_.zero_grad();
                LossBundle b = run_batch(batch, spec.labeled, /*want_pce=*/!spec.labeled);
                check_finite(b, spec.entry_indices);
                opt_.clip_grad_norm(cfg_.clip_norm);
                opt_.step();
                ++step;
                result.final_semi_total = b.semi_total;
                log_step(b, spec.labeled);
            } else {
                // one optimizer step per cycle: labeled batch + its unlabeled run
                opt_.zero_grad();
                LossBundle cycle;
                int parts = 0;
                do {
                    const auto& spec = schedule[i++];
                    std::vector<ImagePair> batch;
                    for (int idx : spec.entry_indices) batch.push_back(load_entry(idx, epoch));
                    LossBundle b =
                        run_batch(batch, spec.labeled, /*want_pce=*/true);
                    check_finite(b, spec.entry_indices);
                    cycle.ce_deep += b.ce_deep;
                    cycle.ce_shallow += b.ce_shallow;
                    cycle.pce += b.pce;
                    cycle.cmi += b.cmi;
                    cycle.sup_total += b.sup_total;
                    cycle.unsup_total += b.unsup_total;
                    ++parts;
                } while (i < schedule.size() && !schedule[i].labeled);
                cycle.semi_total = cycle.sup_total + cycle.unsup_total;
                (void)parts;
                opt_.clip_grad_norm(cfg_.clip_norm);
                opt_.step();
                ++step;
                result.final_semi_total = cycle.semi_total;
                log_step(cycle, true);
            }
        }

        ValPoint v = validate(epoch + 1);
        result.val_history.push_back(v);
        val_log << "{\"epoch\":" << v.epoch << ",\"val_pseudo_rmse\":" << v.pseudo_rmse
                << ",\"val_shallow_rmse\":" << v.shallow_rmse
                << ",\"val_pseudo_fmr5\":" << v.pseudo_fmr5
                << ",\"val_shallow_fmr5\":" << v.shallow_fmr5 << "}\n";
        val_log.flush();
        if (!cfg_.quiet)
            std::cerr << "epoch " << (epoch + 1) << "/" << cfg_.epochs
                      << " semi_total=" << result.final_semi_total
                      << " val_pseudo_rmse=" << v.pseudo_rmse
                      << " val_shallow_rmse=" << v.shallow_rmse << "\n";

        if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0) {
            NamedTensors extra = opt_.state();
            extra.emplace_back("trainer.next_epoch",
                               Tensor::from_vector({1}, {static_cast<float>(epoch + 1)}));
            model_->save((fs::path(run_dir) / ("ckpt_epoch" + std::to_string(epoch + 1) + ".ckpt"))
                             .string(),
                         extra);
        }
    }

    NamedTensors extra = opt_.state();
    extra.emplace_back("trainer.next_epoch",
                       Tensor::from_vector({1}, {static_cast<float>(cfg_.epochs)}));
    model_->save(result.checkpoint_path, extra);
    result.steps = step;
    return result;
}

}  // namespace sarmatch
