#include "her2ws/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "her2ws/selection.hpp"

namespace her2ws {

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (const auto& row : counts)
        for (int64_t x : row) t += x;
    return t;
}

int64_t ConfusionMatrix::row_sum(int r) const {
    int64_t t = 0;
    for (int64_t x : counts[r]) t += x;
    return t;
}

int64_t ConfusionMatrix::col_sum(int c) const {
    int64_t t = 0;
    for (const auto& row : counts) t += row[c];
    return t;
}

int64_t ConfusionMatrix::diagonal() const {
    int64_t t = 0;
    for (int c = 0; c < kNumClasses; ++c) t += counts[c][c];
    return t;
}

ConfusionMatrix confusion(std::span<const int> reference, std::span<const int> predicted) {
    if (reference.size() != predicted.size()) {
        throw ValidationError("evaluation", "reference/predicted length mismatch");
    }
    ConfusionMatrix cm;
    for (size_t i = 0; i < reference.size(); ++i) {
        require_class(reference[i], "reference label");
        require_class(predicted[i], "predicted label");
        ++cm.counts[reference[i]][predicted[i]];
    }
    return cm;
}

double macro_f1(const ConfusionMatrix& cm, AbsentClassPolicy policy) {
    if (cm.total() == 0) throw ValidationError("evaluation", "empty confusion matrix");
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        const int64_t support = cm.row_sum(c);
        const int64_t predictions = cm.col_sum(c);
        if (support == 0 && predictions == 0) {
            if (policy == AbsentClassPolicy::kStrict) ++classes;
            continue;
        }
        const double tp = static_cast<double>(cm.counts[c][c]);
        const double precision = predictions > 0 ? tp / predictions : 0.0;
        const double recall = support > 0 ? tp / support : 0.0;
        const double f1 =
            (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        sum += f1;
        ++classes;
    }
    return classes > 0 ? sum / classes : 0.0;
}

PixelMetrics pixel_metrics(int64_t tp, int64_t fp, int64_t fn) {
    if (tp < 0 || fp < 0 || fn < 0) throw ValidationError("evaluation", "negative counts");
    PixelMetrics m;
    m.degenerate = tp == 0;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.dice = (2 * tp + fp + fn) > 0 ? 2.0 * tp / (2 * tp + fp + fn) : 0.0;
    return m;
}

namespace {

constexpr int kGridPoints = 101;

double silverman_bandwidth(const std::vector<double>& samples) {
    const double floor = 0.01;
    const size_t n = samples.size();
    if (n < 2) return floor;
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : samples) var += (x - mean) * (x - mean);
    var /= n - 1;
    const double sd = std::sqrt(var);

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    const auto quantile = [&](double q) {
        const double pos = q * (n - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - lo;
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    const double iqr = quantile(0.75) - quantile(0.25);

    double scale = sd;
    if (iqr > 0.0) scale = std::min(scale, iqr / 1.34);
    const double h = 0.9 * scale * std::pow(static_cast<double>(n), -0.2);
    return std::max(h, floor);
}

}  // namespace

std::vector<KdeCell> fraction_kde(std::span<const Slide> slides,
                                  std::span<const std::vector<int>> predictions,
                                  std::optional<double> bandwidth) {
    if (slides.size() != predictions.size()) {
        throw ValidationError("evaluation", "per-slide predictions misaligned with cohort");
    }
    if (bandwidth && !(*bandwidth > 0.0)) {
        throw ValidationError("evaluation", "bandwidth must be > 0");
    }

    // Per-slide fraction vectors, grouped by the slide's reference score.
    std::array<std::vector<Vec4>, kNumClasses> grouped;
    for (size_t i = 0; i < slides.size(); ++i) {
        const ClassFractionVector v = compute_fractions(slides[i], predictions[i]);
        grouped[slides[i].label].push_back(v.v);
    }

    std::vector<double> grid(kGridPoints);
    for (int g = 0; g < kGridPoints; ++g) grid[g] = g / 100.0;

    std::vector<KdeCell> cells;
    cells.reserve(kNumClasses * kNumClasses);
    for (int s = 0; s < kNumClasses; ++s) {
        for (int c = 0; c < kNumClasses; ++c) {
            KdeCell cell;
            cell.slide_class = s;
            cell.patch_class = c;
            std::vector<double> samples;
            samples.reserve(grouped[s].size());
            for (const Vec4& v : grouped[s]) samples.push_back(v[c]);
            cell.samples = static_cast<int>(samples.size());
            if (!samples.empty()) {
                const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples);
                cell.bandwidth = h;
                cell.grid = grid;
                cell.density.assign(kGridPoints, 0.0);
                const double norm = 1.0 / (samples.size() * h * std::sqrt(2.0 * M_PI));
                for (int g = 0; g < kGridPoints; ++g) {
                    double d = 0.0;
                    for (double x : samples) {
                        const double z = (grid[g] - x) / h;
                        d += std::exp(-0.5 * z * z);
                    }
                    cell.density[g] = d * norm;
                }
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

std::vector<RaterPair> rater_agreement(std::span<const RaterLabels> raters) {
    if (raters.size() < 2) {
        throw ValidationError("evaluation", "need at least two rater label sets");
    }
    std::vector<std::map<std::string, int>> maps(raters.size());
    for (size_t r = 0; r < raters.size(); ++r) {
        for (const auto& [id, label] : raters[r].labels) {
            require_class(label, "rater label");
            maps[r][id] = label;
        }
    }
    std::vector<RaterPair> out;
    for (size_t a = 0; a < raters.size(); ++a) {
        for (size_t b = a + 1; b < raters.size(); ++b) {
            RaterPair pair;
            pair.rater_a = raters[a].rater;
            pair.rater_b = raters[b].rater;
            for (const auto& [id, label] : maps[a]) {
                const auto it = maps[b].find(id);
                if (it == maps[b].end()) continue;
                ++pair.matrix.counts[label][it->second];
                ++pair.shared;
            }
            if (pair.shared == 0) {
                throw ValidationError("evaluation", "raters '" + pair.rater_a + "' and '" +
                                                        pair.rater_b + "' share no slide ids");
            }
            pair.agreement = static_cast<double>(pair.matrix.diagonal()) / pair.shared;
            out.push_back(std::move(pair));
        }
    }
    return out;
}

}  // namespace her2ws
