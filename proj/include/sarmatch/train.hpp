#pragma once

#include <string>
#include <vector>

#include "sarmatch/data.hpp"
#include "sarmatch/losses.hpp"
#include "sarmatch/metrics.hpp"
#include "sarmatch/model.hpp"

namespace sarmatch {

struct TrainConfig {
    int epochs = 5;
    float lr = 5e-4f;
    float weight_decay = 1e-2f;
    int batch_size = 16;
    int unlabeled_per_labeled = 15;  // 1:k interleave; 0 = fully supervised
    float logit_scale = 10.0f;
    PseudoMode pseudo_mode = PseudoMode::Hard;
    uint64_t seed = 1;
    int checkpoint_every = 1;  // epochs; 0 disables periodic checkpoints
    bool joint_step = false;   // sum one labeled + k unlabeled losses per step
    bool static_crops = false;
    float clip_norm = 5.0f;
    float w_ce = 1.0f, w_pce = 1.0f, w_cmi = 1.0f;
    double val_fraction = 0.1;
    int tpl_h = 192, tpl_w = 192;
    bool quiet = false;

    void validate() const;
};

// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(NamedTensors params, float lr, float weight_decay, float beta1 = 0.9f,
          float beta2 = 0.999f, float eps = 1e-8f);

    void step();
    void zero_grad();
    // global-norm clipping; no-op when max_norm <= 0
    void clip_grad_norm(float max_norm);

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    NamedTensors state() const;          // "opt.m.<name>", "opt.v.<name>", "opt.t"
    void load_state(const NamedTensors& state);

private:
    NamedTensors params_;
    std::vector<std::vector<float>> m_, v_;
    float lr_, wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

struct ValPoint {
    int epoch = 0;
    double pseudo_rmse = 0, shallow_rmse = 0;
    double pseudo_fmr5 = 0, shallow_fmr5 = 0;
};

struct FitResult {
    std::string checkpoint_path;
    double final_semi_total = 0;  // semi_total of the last optimizer step
    std::vector<ValPoint> val_history;
    int steps = 0;
};

class Trainer {
public:
    Trainer(Model& model, const TrainConfig& cfg, const DatasetManifest& manifest);

    LossBundle train_step_labeled(const std::vector<ImagePair>& batch);
    LossBundle train_step_unlabeled(const std::vector<ImagePair>& batch);

    // Full run: interleaved schedule, JSONL logging, per-epoch validation,
    // checkpoints under run_dir. resume_from restores weights + optimizer.
    FitResult fit(const std::string& run_dir, const std::string& resume_from = "");

    const std::vector<int>& val_indices() const { return val_indices_; }

private:
    LossBundle run_batch(const std::vector<ImagePair>& batch, bool labeled, bool want_pce);
    ImagePair load_entry(int idx, int epoch) const;
    ValPoint validate(int epoch) const;
    void check_finite(const LossBundle& b, const std::vector<int>& entries) const;

    Model* model_;
    TrainConfig cfg_;
    const DatasetManifest* manifest_;
    AdamW opt_;
    std::vector<int> train_indices_, val_indices_;
    DatasetManifest train_manifest_;  // restricted view used by the batch schedule
};

}  // namespace sarmatch
