#include "apo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "apo/errors.hpp"

namespace apo {

void ScoredPixels::append(const Tensor& score_map, const Tensor& mask) {
    if (score_map.size() != mask.size()) throw std::invalid_argument("score map and mask sizes differ");
    for (std::size_t i = 0; i < mask.size(); ++i) {
        scores.push_back(score_map[i]);
        labels.push_back(mask[i] > 0.5 ? 1 : 0);
    }
}

void ScoredPixels::validate() const {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    std::size_t pos = 0;
    for (const int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
        pos += static_cast<std::size_t>(l);
    }
    for (const double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
    if (pos == 0 || pos == labels.size()) throw std::invalid_argument("undefined AUROC: single-class labels");
}

namespace {

// Indices sorted by descending score.
std::vector<std::size_t> descending_order(const ScoredPixels& sp) {
    std::vector<std::size_t> idx(sp.scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sp.scores[a] > sp.scores[b]; });
    return idx;
}

// Cumulative (tp, fp) after including each unique threshold, descending.
struct Operating {
    double tp;
    double fp;
};

std::vector<Operating> operating_points(const ScoredPixels& sp) {
    const auto idx = descending_order(sp);
    std::vector<Operating> pts;
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (sp.labels[idx[i]] ? tp : fp) += 1.0;
        if (i + 1 == idx.size() || sp.scores[idx[i + 1]] != sp.scores[idx[i]]) pts.push_back({tp, fp});
    }
    return pts;
}

}  // namespace

double auroc(const ScoredPixels& sp) {
    sp.validate();
    const std::size_t n = sp.scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sp.scores[a] < sp.scores[b]; });
    // Average ranks over tie groups.
    double rank_sum_pos = 0.0, n_pos = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && sp.scores[idx[j]] == sp.scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (sp.labels[idx[k]]) {
                rank_sum_pos += avg_rank;
                n_pos += 1.0;
            }
        }
        i = j;
    }
    const double n_neg = static_cast<double>(n) - n_pos;
    return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double average_precision(const ScoredPixels& sp) {
    sp.validate();
    const double n_pos = static_cast<double>(std::count(sp.labels.begin(), sp.labels.end(), 1));
    double ap = 0.0, prev_recall = 0.0;
    for (const auto& p : operating_points(sp)) {
        const double recall = p.tp / n_pos;
        ap += (recall - prev_recall) * p.tp / (p.tp + p.fp);
        prev_recall = recall;
    }
    return ap;
}

double f1_max(const ScoredPixels& sp) {
    sp.validate();
    const double n_pos = static_cast<double>(std::count(sp.labels.begin(), sp.labels.end(), 1));
    double best = 0.0;
    for (const auto& p : operating_points(sp)) {
        if (p.tp == 0.0) continue;
        const double precision = p.tp / (p.tp + p.fp), recall = p.tp / n_pos;
        best = std::max(best, 2.0 * precision * recall / (precision + recall));
    }
    return best;
}

double group_diversity(const std::vector<Tensor>& images) {
    if (images.size() < 2) throw std::invalid_argument("diversity_proxy: group needs at least 2 images");
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (std::size_t j = i + 1; j < images.size(); ++j) {
            require_same_shape(images[i], images[j], "diversity_proxy");
            acc += std::sqrt(squared_distance(images[i], images[j]) / static_cast<double>(images[i].size()));
            ++pairs;
        }
    }
    return acc / static_cast<double>(pairs);
}

double diversity_proxy(const std::vector<std::vector<Tensor>>& groups) {
    if (groups.empty()) throw std::invalid_argument("diversity_proxy: no groups");
    double acc = 0.0;
    for (const auto& g : groups) acc += group_diversity(g);
    return acc / static_cast<double>(groups.size());
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "category,defect,auroc,ap,f1_max,diversity_proxy,n_eval\n" << std::setprecision(17);
    for (const auto& r : rows) {
        os << r.category << ',' << r.defect << ',' << r.auroc << ',' << r.ap << ',' << r.f1_max << ',';
        if (std::isfinite(r.diversity_proxy)) os << r.diversity_proxy;
        os << ',' << r.n_eval << '\n';
    }
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifactError("missing metrics: " + path.string());
    std::string line;
    std::getline(is, line);
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 7) throw std::runtime_error("malformed metrics row: " + line);
        MetricsRow r;
        r.category = f[0];
        r.defect = f[1];
        r.auroc = std::stod(f[2]);
        r.ap = std::stod(f[3]);
        r.f1_max = std::stod(f[4]);
        r.diversity_proxy = f[5].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[5]);
        r.n_eval = std::stoul(f[6]);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace apo
