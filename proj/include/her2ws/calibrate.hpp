#pragma once

#include <span>
#include <string>
#include <vector>

#include "her2ws/model.hpp"
#include "her2ws/parallel.hpp"
#include "her2ws/types.hpp"

namespace her2ws {

/// Frozen patch logits stacked over the cohort, with per-row normalized
/// tumor weights and per-slide labels. Rows are grouped by slide.
struct LogitsMatrix {
    std::vector<Vec4> logits;                      // N x 4
    std::vector<double> weights;                   // per row
    std::vector<int> row_slide;                    // row -> slide ordinal
    std::vector<std::string> patch_ids;            // per row
    std::vector<std::string> slide_ids;            // per slide
    std::vector<int> slide_labels;                 // per slide
    std::vector<std::pair<int, int>> slide_spans;  // per slide [begin, end)

    size_t rows() const { return logits.size(); }
    size_t slides() const { return slide_ids.size(); }
    void validate() const;
};

/// Frozen logits for every admitted patch of the cohort.
LogitsMatrix collect_logits(const ClassifierParams& params, std::span<const Slide> slides,
                            const ExecPolicy& policy = {});

/// Per-class logit scales; identity (1,1,1,1) leaves the model unchanged.
struct CalibrationVector {
    Vec4 alpha{1.0, 1.0, 1.0, 1.0};
};

struct CalibratedPredictions {
    std::vector<int> classes;                      // per row
    std::vector<ClassFractionVector> fractions;    // per slide
};

/// Scale each row's logits columnwise by alpha, take the argmax, and rebuild
/// the per-slide fraction vectors.
CalibratedPredictions apply_calibration(const LogitsMatrix& matrix, const Vec4& alpha,
                                        const ExecPolicy& policy = {});

/// Hinge distance between the calibrated fraction vectors and the guideline
/// thresholds, summed over slides:
///   J = sum_i (L[Y,Y] - V_iY)^+ + sum_{c>Y} (V_ic - U[Y,c])^+.
double calibration_objective(const LogitsMatrix& matrix, const Vec4& alpha,
                             const ConstraintMatrices& constraints = {},
                             const ExecPolicy& policy = {});

struct CalibrateOptions {
    enum class Mode { kSimplex, kSmoothed };
    Mode mode = Mode::kSimplex;
    // Hard-argmax fractions make the objective piecewise constant, so the
    // default search is a simplex with coordinate-perturbed restarts and a
    // step large enough to probe prediction flips.
    double step = 0.5;
    int restarts = 8;
    int max_evaluations = 500;  // per simplex run
    double simplex_tolerance = 1e-4;
    // Smoothed mode: gradient descent on temperature-tau soft fractions; the
    // hard objective is re-evaluated at every iterate.
    double temperature = 1.0;
    int smoothed_iterations = 200;
    // Restrict to alpha > 0 via exponential reparameterization.
    bool positive_alpha = false;
};

struct CalibrateTracePoint {
    int evaluation = 0;
    Vec4 alpha{};
    double objective = 0.0;
};

struct CalibrateResult {
    Vec4 alpha{1.0, 1.0, 1.0, 1.0};
    double objective_before = 0.0;
    double objective_after = 0.0;
    int evaluations = 0;
    bool fell_back = false;
    std::vector<CalibrateTracePoint> trace;
};

/// Minimizes the hinge objective over alpha starting from identity, keeping
/// the best iterate ever seen, so J(alpha*) <= J(1,1,1,1) on every input.
/// Optimizer failure falls back to the identity calibration.
CalibrateResult optimize_alpha(const LogitsMatrix& matrix,
                               const ConstraintMatrices& constraints = {},
                               const CalibrateOptions& options = {},
                               const ExecPolicy& policy = {});

}  // namespace her2ws
