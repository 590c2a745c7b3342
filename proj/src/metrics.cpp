#include "sarmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sarmatch/errors.hpp"

namespace sarmatch {

MetricMode metric_mode_from_string(const std::string& s) {
    if (s == "mean" || s == "mean-distance") return MetricMode::MeanDistance;
    if (s == "rms") return MetricMode::Rms;
    throw ArgumentError("unknown metric mode '" + s + "' (expected mean|rms)");
}

EvalReport compute_metrics(const std::vector<PredGt>& pairs, MetricMode mode) {
    if (pairs.empty()) throw ArgumentError("compute_metrics: empty prediction list");
    EvalReport r;
    r.n_pairs = static_cast<int>(pairs.size());

    double sum_all = 0, sum_within = 0;
    int n1 = 0, n5 = 0;
    for (const auto& p : pairs) {
        const double dy = p.pred.row - p.gt.row;
        const double dx = p.pred.col - p.gt.col;
        const double d = std::sqrt(dy * dy + dx * dx);
        const double contrib = (mode == MetricMode::Rms) ? d * d : d;
        sum_all += contrib;
        if (d <= 1.0) ++n1;
        if (d <= 5.0) {
            ++n5;
            sum_within += contrib;
        }
    }
    const double n = static_cast<double>(pairs.size());
    r.rmse_all = (mode == MetricMode::Rms) ? std::sqrt(sum_all / n) : sum_all / n;
    r.cmr1 = n1 / n;
    r.cmr5 = n5 / n;
    r.rmse5 = n5 ? ((mode == MetricMode::Rms) ? std::sqrt(sum_within / n5) : sum_within / n5) : 0.0;
    r.fmr5 = 1.0 - r.cmr5;
    return r;
}

std::string EvalReport::to_json() const {
    char buf[768];
    std::snprintf(buf, sizeof(buf),
                  "{\n"
                  "  \"version\": 1,\n"
                  "  \"n_pairs\": %d,\n"
                  "  \"rmse_all\": %.6f,\n"
                  "  \"cmr_at_1\": %.6f,\n"
                  "  \"cmr_at_5\": %.6f,\n"
                  "  \"rmse_at_5\": %.6f,\n"
                  "  \"fmr_at_5\": %.6f,\n"
                  "  \"mean_ms_per_pair\": %.6f,\n"
                  "  \"median_ms_per_pair\": %.6f,\n"
                  "  \"mean_ms_features\": %.6f,\n"
                  "  \"mean_ms_matching\": %.6f\n"
                  "}\n",
                  n_pairs, rmse_all, cmr1, cmr5, rmse5, fmr5, mean_ms_per_pair,
                  median_ms_per_pair, mean_ms_features, mean_ms_matching);
    return buf;
}

}  // namespace sarmatch
