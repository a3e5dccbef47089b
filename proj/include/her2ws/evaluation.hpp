#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "her2ws/synth.hpp"
#include "her2ws/types.hpp"

namespace her2ws {

/// 4x4 confusion counts; rows are the reference labels, columns the
/// predictions.
struct ConfusionMatrix {
    std::array<std::array<int64_t, kNumClasses>, kNumClasses> counts{};

    int64_t total() const;
    int64_t row_sum(int r) const;
    int64_t col_sum(int c) const;
    int64_t diagonal() const;
};

ConfusionMatrix confusion(std::span<const int> reference, std::span<const int> predicted);

/// How classes with zero reference and zero predictions enter the macro
/// average: excluded (default) or scored 0.
enum class AbsentClassPolicy { kPresentOnly, kStrict };

double macro_f1(const ConfusionMatrix& cm, AbsentClassPolicy policy = AbsentClassPolicy::kPresentOnly);

struct PixelMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double dice = 0.0;
    bool degenerate = false;  // no true positives
};

PixelMetrics pixel_metrics(int64_t tp, int64_t fp, int64_t fn);

/// Gaussian KDE of per-slide class fractions for one (slide score, patch
/// class) cell, evaluated on the fixed grid [0,1] step 0.01. Plain
/// truncation at the boundaries (no reflection).
struct KdeCell {
    int slide_class = 0;
    int patch_class = 0;
    int samples = 0;
    double bandwidth = 0.0;
    std::vector<double> grid;
    std::vector<double> density;
};

/// All 16 cells, grouping slides by their reference label. With no explicit
/// bandwidth, Silverman's rule per cell (floor 0.01). Cells without slides
/// come back with empty series.
std::vector<KdeCell> fraction_kde(std::span<const Slide> slides,
                                  std::span<const std::vector<int>> predictions,
                                  std::optional<double> bandwidth = std::nullopt);

struct RaterPair {
    std::string rater_a;
    std::string rater_b;
    ConfusionMatrix matrix;
    double agreement = 0.0;
    int shared = 0;
};

/// Pairwise confusion and exact-agreement rates over the shared slide ids of
/// every rater pair.
std::vector<RaterPair> rater_agreement(std::span<const RaterLabels> raters);

}  // namespace her2ws
