#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apo/tensor.hpp"

namespace apo {

struct ScoredPixels {
    std::vector<double> scores;
    std::vector<int> labels;  // 0 or 1

    void append(const Tensor& score_map, const Tensor& mask);
    void validate() const;
};

// Mann-Whitney statistic; tied positive/negative pairs count 1/2.
double auroc(const ScoredPixels& sp);
// Step sum of precision over recall increments at descending unique thresholds.
double average_precision(const ScoredPixels& sp);
// Maximum F1 over thresholds at unique score values.
double f1_max(const ScoredPixels& sp);

// Mean over condition groups of the mean pairwise RMS pixel distance.
double diversity_proxy(const std::vector<std::vector<Tensor>>& groups);
double group_diversity(const std::vector<Tensor>& images);

struct MetricsRow {
    std::string category;
    std::string defect;
    double auroc = 0.0;
    double ap = 0.0;
    double f1_max = 0.0;
    double diversity_proxy = 0.0;  // NaN when no generated samples were supplied
    std::size_t n_eval = 0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace apo
