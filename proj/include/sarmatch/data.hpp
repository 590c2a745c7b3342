#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sarmatch/image.hpp"
#include "sarmatch/rng.hpp"

namespace sarmatch {

// One optical reference + one SAR template. gt_row/gt_col locate the SAR
// patch's top-left corner in the optical frame. `labeled` controls whether
// the trainer may use the offset; synthetic crops keep it around regardless
// for evaluation.
struct ImagePair {
    Image optical;
    Image sar;
    bool labeled = false;
    bool has_gt = false;
    int gt_row = 0, gt_col = 0;
};

struct ManifestEntry {
    std::string optical_path;
    std::string sar_path;
    bool labeled = false;
    int row = 0, col = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string base_dir;  // directory of the manifest file, for relative paths

    std::vector<int> labeled_indices() const;
    std::vector<int> unlabeled_indices() const;
};

// CSV with header optical,sar,row,col; row/col may be empty (unlabeled).
// Validates referenced files exist; duplicate paths produce a warning on
// stderr. Parse errors report the line number.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// Crop a template from the SAR side of an aligned pair; offset uniform over
// the valid grid. Both images must share dimensions and fit the template.
ImagePair crop_template(const Image& optical, const Image& sar_aligned, int tpl_h, int tpl_w,
                        Rng& rng);
// Same, with a fixed offset (static crops / labeled entries).
ImagePair crop_template_at(const Image& optical, const Image& sar_aligned, int tpl_h, int tpl_w,
                           int row, int col);

enum class ModalityGap { None, Mild, Harsh };
ModalityGap gap_from_string(const std::string& s);
std::string to_string(ModalityGap g);

// Aligned synthetic pair: smoothed random field + polygons/edges on the
// optical side; monotone intensity remap + multiplicative speckle + 3x3 blur
// on the SAR side. Pure function of (seed, size, gap).
std::pair<Image, Image> synth_pair(uint64_t seed, int size, ModalityGap gap);

// Emits opt_XXXXX.pgm / sar_XXXXX.pgm plus manifest.csv into dir. The first
// ceil(n * labeled_fraction) entries carry a drawn row,col (labeled); the
// rest leave them blank.
struct SynthDatasetConfig {
    int n_pairs = 100;
    int size = 64;
    int tpl_size = 48;
    ModalityGap gap = ModalityGap::Mild;
    uint64_t seed = 1;
    double labeled_fraction = 0.0625;
};
std::string generate_synth_dataset(const std::string& dir, const SynthDatasetConfig& cfg);

// Loads an entry. Aligned entries (equal dims) are cropped: at the stored
// offset when labeled or static_crops, otherwise from `crop_rng`.
ImagePair load_pair(const ManifestEntry& entry, const std::string& base_dir, int tpl_h, int tpl_w,
                    Rng& crop_rng, bool static_crops);

struct BatchSpec {
    bool labeled = false;
    std::vector<int> entry_indices;
};

// Deterministic interleave of 1 labeled batch followed by
// `unlabeled_per_labeled` unlabeled batches. The epoch covers the unlabeled
// pool once; the labeled pool recycles. With ratio 0 or no unlabeled data the
// schedule is fully supervised over the labeled pool.
class BatchIterator {
public:
    BatchIterator(const DatasetManifest& manifest, int batch_size, int unlabeled_per_labeled,
                  uint64_t seed);

    std::vector<BatchSpec> epoch_schedule(int epoch) const;
    int batch_size() const { return batch_size_; }

private:
    std::vector<int> labeled_pool_;
    std::vector<int> unlabeled_pool_;
    int batch_size_;
    int ratio_;
    uint64_t seed_;
};

}  // namespace sarmatch
