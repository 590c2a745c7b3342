// sarmatch: SAR-optical multiscale template matching toolkit.
//
// Subcommands:
//   synth     generate a synthetic aligned-pair dataset + manifest
//   train     semi-supervised training (interleaved labeled/unlabeled batches)
//   match     single-pair inference; prints the predicted offset
//   eval      run a manifest (or a predictions CSV) into an EvalReport JSON
//   selftest  built-in oracle and gradient checks

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sarmatch/data.hpp"
#include "sarmatch/metrics.hpp"
#include "sarmatch/model.hpp"
#include "sarmatch/selftest.hpp"
#include "sarmatch/serialize.hpp"
#include "sarmatch/train.hpp"

namespace fs = std::filesystem;
using namespace sarmatch;

namespace {

struct ModelFlags {
    std::string preset = "default";
    std::string config_file;
    int blocks_n = 1;
    bool no_enhance = false;
    bool shallow_only = false;
    std::string ncc_mode = "joint";
    std::string fuse_upscale = "bilinear";
    float logit_scale = 10.0f;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--preset", mf.preset, "Width preset: default|tiny")
        ->check(CLI::IsMember({"default", "tiny"}));
    cmd->add_option("--config", mf.config_file, "Model config key=value file");
    cmd->add_option("--blocks-n", mf.blocks_n, "Feature enhancement blocks per level");
    cmd->add_flag("--no-enhance", mf.no_enhance, "Disable the enhancement module");
    cmd->add_flag("--shallow-only", mf.shallow_only, "Single-level matching (no deep heatmap)");
    cmd->add_option("--ncc-mode", mf.ncc_mode, "joint|per-channel normalization")
        ->check(CLI::IsMember({"joint", "per-channel"}));
    cmd->add_option("--fuse-upscale", mf.fuse_upscale, "bilinear|nearest deep-heatmap upscaling")
        ->check(CLI::IsMember({"bilinear", "nearest"}));
    cmd->add_option("--logit-scale", mf.logit_scale, "Softmax logit scale for heatmaps");
}

ModelConfig build_model_config(const ModelFlags& mf) {
    ModelConfig cfg = (mf.preset == "tiny") ? ModelConfig::tiny() : ModelConfig();
    if (!mf.config_file.empty()) cfg = ModelConfig::from_kv(load_kv_file(mf.config_file));
    cfg.enhance_blocks = mf.no_enhance ? 0 : mf.blocks_n;
    cfg.multiscale = !mf.shallow_only;
    cfg.ncc_mode = ncc_mode_from_string(mf.ncc_mode);
    cfg.fuse_upscale =
        (mf.fuse_upscale == "bilinear") ? UpscaleMode::Bilinear : UpscaleMode::Nearest;
    cfg.logit_scale = mf.logit_scale;
    return cfg;
}

// raw-pixel matching: NCC directly on image intensities
MatchResult match_raw(const ImagePair& pair) {
    MatchResult r;
    const auto t0 = std::chrono::steady_clock::now();
    Tensor opt = image_to_tensor(pair.optical);
    Tensor sar = image_to_tensor(pair.sar);
    r.shallow = ncc_heatmap(sar, opt, HeatmapLevel::Shallow);
    r.fused = r.shallow;
    r.fused_prob = to_probability(r.fused, 10.0f);
    auto [row, col] = r.fused_prob.argmax_rc();
    r.row = row;
    r.col = col;
    r.peak_score = r.fused_prob.at(row, col);
    r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                       .count();
    r.match_ms = r.elapsed_ms;
    return r;
}

int cmd_synth(const std::string& out_dir, SynthDatasetConfig cfg) {
    const std::string manifest = generate_synth_dataset(out_dir, cfg);
    std::cout << "wrote " << cfg.n_pairs << " pairs to " << out_dir << "\n"
              << "manifest: " << manifest << "\n";
    return 0;
}

std::vector<PredGt> load_predictions_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError(path + ": empty file");
    std::vector<PredGt> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        PredGt p;
        if (std::sscanf(line.c_str(), "%d,%d,%d,%d", &p.pred.row, &p.pred.col, &p.gt.row,
                        &p.gt.col) != 4)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 4 integers");
        out.push_back(p);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAR-optical multiscale template matching"};
    app.require_subcommand(1);

    uint64_t seed = 1;
    app.add_option("--seed", seed, "Global RNG seed")->capture_default_str();

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string synth_out = "synth_data";
    SynthDatasetConfig scfg;
    std::string gap_str = "mild";
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--n", scfg.n_pairs, "Number of aligned pairs");
    synth->add_option("--size", scfg.size, "Image side (divisible by 8)");
    synth->add_option("--tpl", scfg.tpl_size, "Template side used for labeled offsets");
    synth->add_option("--gap", gap_str, "none|mild|harsh")
        ->check(CLI::IsMember({"none", "mild", "harsh"}));
    synth->add_option("--labeled-fraction", scfg.labeled_fraction, "Fraction of labeled entries");

    // ---- train ----
    auto* train = app.add_subcommand("train", "Fit a model on a manifest");
    std::string train_manifest_path, run_dir = "runs/run", resume_from;
    TrainConfig tcfg;
    ModelFlags train_mf;
    std::string pseudo_mode = "hard";
    int labeled_ratio = 15;
    train->add_option("--manifest", train_manifest_path, "Training manifest CSV")->required();
    train->add_option("--run-dir", run_dir, "Run directory (logs, checkpoints)");
    train->add_option("--epochs", tcfg.epochs, "Training epochs");
    train->add_option("--lr", tcfg.lr, "Learning rate");
    train->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay");
    train->add_option("--batch-size", tcfg.batch_size, "Pairs per batch");
    train->add_option("--labeled-ratio", labeled_ratio,
                      "Unlabeled batches per labeled batch (0 = fully supervised)");
    train->add_option("--pseudo-mode", pseudo_mode, "hard|soft pseudo-labels")
        ->check(CLI::IsMember({"hard", "soft"}));
    train->add_flag("--joint-step", tcfg.joint_step,
                    "Sum one labeled + k unlabeled losses per optimizer step");
    train->add_flag("--static-crops", tcfg.static_crops, "Freeze template crops across epochs");
    train->add_option("--tpl", tcfg.tpl_h, "Template side (crop size)");
    train->add_option("--val-fraction", tcfg.val_fraction, "Held-out validation fraction");
    train->add_option("--checkpoint-every", tcfg.checkpoint_every, "Epochs between checkpoints");
    train->add_option("--clip-norm", tcfg.clip_norm, "Global gradient-norm clip (<=0 disables)");
    train->add_option("--resume", resume_from, "Checkpoint to resume from");
    add_model_flags(train, train_mf);

    // ---- match ----
    auto* match = app.add_subcommand("match", "Match one SAR template against one optical image");
    std::string ckpt_path, optical_path, sar_path, export_prefix;
    bool match_raw_mode = false, match_shallow_only = false;
    ModelFlags match_mf;
    match->add_option("--checkpoint", ckpt_path, "Model checkpoint (omit for random init)");
    match->add_option("--optical", optical_path, "Optical reference image")->required();
    match->add_option("--sar", sar_path, "SAR template image")->required();
    match->add_option("--export-prefix", export_prefix,
                      "Write <prefix>_{deep,shallow,fused}.hmp/.pgm");
    match->add_flag("--raw", match_raw_mode, "Raw-pixel NCC, no features");
    match->add_flag("--shallow-only-infer", match_shallow_only,
                    "Predict from the shallow heatmap alone");
    add_model_flags(match, match_mf);

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Evaluate a manifest or a predictions CSV");
    std::string eval_manifest_path, eval_ckpt, eval_out, predictions_csv;
    std::string metric_mode = "mean";
    bool eval_raw = false, eval_shallow_only = false;
    int eval_tpl = 192;
    ModelFlags eval_mf;
    eval->add_option("--manifest", eval_manifest_path, "Test manifest CSV");
    eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint");
    eval->add_option("--predictions", predictions_csv,
                     "pred_row,pred_col,gt_row,gt_col CSV (metrics only)");
    eval->add_option("--out", eval_out, "Write the JSON report here too");
    eval->add_option("--metric-mode", metric_mode, "mean|rms distance aggregation")
        ->check(CLI::IsMember({"mean", "rms"}));
    eval->add_option("--tpl", eval_tpl, "Template side for aligned pairs");
    eval->add_flag("--raw", eval_raw, "Raw-pixel NCC baseline");
    eval->add_flag("--shallow-only-infer", eval_shallow_only,
                   "Predict from the shallow heatmap alone");
    add_model_flags(eval, eval_mf);

    // ---- selftest ----
    auto* selftest = app.add_subcommand("selftest", "Run built-in oracle/gradient checks");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            scfg.gap = gap_from_string(gap_str);
            scfg.seed = seed;
            return cmd_synth(synth_out, scfg);
        }

        if (*train) {
            tcfg.seed = seed;
            tcfg.unlabeled_per_labeled = labeled_ratio;
            tcfg.pseudo_mode = pseudo_mode_from_string(pseudo_mode);
            tcfg.tpl_w = tcfg.tpl_h;
            tcfg.logit_scale = train_mf.logit_scale;
            ModelConfig mcfg = build_model_config(train_mf);
            Model model(mcfg, seed);
            DatasetManifest manifest = load_manifest(train_manifest_path);
            Trainer trainer(model, tcfg, manifest);
            FitResult r = trainer.fit(run_dir, resume_from);
            std::cout << "checkpoint: " << r.checkpoint_path << "\n"
                      << "steps: " << r.steps << "\n"
                      << "final_semi_total: " << r.final_semi_total << "\n";
            return 0;
        }

        if (*match) {
            ImagePair pair;
            pair.optical = load_image(optical_path);
            pair.sar = load_image(sar_path);
            MatchResult r;
            if (match_raw_mode) {
                r = match_raw(pair);
            } else if (!ckpt_path.empty()) {
                Model model = Model::from_checkpoint(ckpt_path);
                r = model.infer(pair, match_shallow_only);
            } else {
                Model model(build_model_config(match_mf), seed);
                r = model.infer(pair, match_shallow_only);
            }
            std::cout << "offset: " << r.row << " " << r.col << "\n"
                      << "peak_score: " << r.peak_score << "\n"
                      << "elapsed_ms: " << r.elapsed_ms << " (features " << r.feature_ms
                      << ", matching " << r.match_ms << ")\n";
            if (!export_prefix.empty()) {
                auto dump = [&](const Heatmap& hm, const std::string& tag) {
                    if (hm.values.empty()) return;
                    save_heatmap(export_prefix + "_" + tag + ".hmp", hm);
                    save_heatmap_pgm(export_prefix + "_" + tag + ".pgm", hm);
                };
                dump(r.deep, "deep");
                dump(r.shallow, "shallow");
                dump(r.fused, "fused");
            }
            return 0;
        }

        if (*eval) {
            EvalReport report;
            const MetricMode mode = metric_mode_from_string(metric_mode);
            if (!predictions_csv.empty()) {
                report = compute_metrics(load_predictions_csv(predictions_csv), mode);
            } else {
                if (eval_manifest_path.empty())
                    throw ArgumentError("eval: need --manifest or --predictions");
                DatasetManifest manifest = load_manifest(eval_manifest_path);
                std::unique_ptr<Model> model;
                if (!eval_raw) {
                    if (!eval_ckpt.empty())
                        model = std::make_unique<Model>(Model::from_checkpoint(eval_ckpt));
                    else
                        model = std::make_unique<Model>(build_model_config(eval_mf), seed);
                }
                std::vector<PredGt> preds;
                std::vector<double> times;
                double feat_ms = 0, match_ms = 0;
                for (size_t i = 0; i < manifest.entries.size(); ++i) {
                    Rng crop_rng(seed ^ (0x51ab5eedull + i));
                    ImagePair pair = load_pair(manifest.entries[i], manifest.base_dir, eval_tpl,
                                               eval_tpl, crop_rng, /*static_crops=*/true);
                    MatchResult r = eval_raw ? match_raw(pair)
                                             : model->infer(pair, eval_shallow_only);
                    times.push_back(r.elapsed_ms);
                    feat_ms += r.feature_ms;
                    match_ms += r.match_ms;
                    if (pair.has_gt)
                        preds.push_back({{r.row, r.col}, {pair.gt_row, pair.gt_col}});
                }
                if (preds.empty()) throw ArgumentError("eval: no ground-truth pairs in manifest");
                report = compute_metrics(preds, mode);
                const double n = static_cast<double>(times.size());
                report.mean_ms_per_pair =
                    std::accumulate(times.begin(), times.end(), 0.0) / n;
                std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
                report.median_ms_per_pair = times[times.size() / 2];
                report.mean_ms_features = feat_ms / n;
                report.mean_ms_matching = match_ms / n;
            }
            const std::string json = report.to_json();
            std::cout << json;
            if (!eval_out.empty()) {
                std::ofstream os(eval_out);
                if (!os) throw IoError("cannot open for write: " + eval_out);
                os << json;
            }
            return 0;
        }

        if (*selftest) return run_selftest(true);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
