#pragma once

#include <string>
#include <utility>
#include <vector>

namespace sarmatch {

struct Offset {
    int row = 0, col = 0;
};

struct PredGt {
    Offset pred, gt;
};

enum class MetricMode {
    MeanDistance,  // mean Euclidean error, the tables' reading of RMSE
    Rms            // sqrt(mean squared distance)
};
MetricMode metric_mode_from_string(const std::string& s);

struct EvalReport {
    int n_pairs = 0;
    double rmse_all = 0, cmr1 = 0, cmr5 = 0, rmse5 = 0, fmr5 = 0;
    double mean_ms_per_pair = 0, median_ms_per_pair = 0;
    double mean_ms_features = 0, mean_ms_matching = 0;

    // fixed key order and float formatting so identical inputs serialize
    // byte-identically
    std::string to_json() const;
};

EvalReport compute_metrics(const std::vector<PredGt>& pairs,
                           MetricMode mode = MetricMode::MeanDistance);

}  // namespace sarmatch
