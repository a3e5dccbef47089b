#include "her2ws/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "her2ws/trainer.hpp"

namespace her2ws {

void LogitsMatrix::validate() const {
    const size_t n = logits.size();
    if (weights.size() != n || row_slide.size() != n || patch_ids.size() != n) {
        throw ValidationError("calibrate", "logits matrix row arrays misaligned");
    }
    const size_t s = slide_ids.size();
    if (slide_labels.size() != s || slide_spans.size() != s) {
        throw ValidationError("calibrate", "logits matrix slide arrays misaligned");
    }
    for (size_t i = 0; i < s; ++i) {
        require_class(slide_labels[i], "slide label");
        const auto [begin, end] = slide_spans[i];
        if (begin < 0 || end <= begin || end > static_cast<int>(n)) {
            throw ValidationError("calibrate", "bad slide span for '" + slide_ids[i] + "'");
        }
        double sum = 0.0;
        for (int r = begin; r < end; ++r) {
            if (row_slide[r] != static_cast<int>(i)) {
                throw ValidationError("calibrate", "rows of slide '" + slide_ids[i] +
                                                       "' are not contiguous");
            }
            sum += weights[r];
        }
        if (std::abs(sum - 1.0) > kFractionSumTolerance) {
            throw ValidationError("calibrate", "weights of slide '" + slide_ids[i] +
                                                   "' sum to " + std::to_string(sum));
        }
    }
}

LogitsMatrix collect_logits(const ClassifierParams& params, std::span<const Slide> slides,
                            const ExecPolicy& policy) {
    const InferenceResult inference = inference_pass(params, slides, policy);
    LogitsMatrix m;
    for (size_t i = 0; i < slides.size(); ++i) {
        const Slide& slide = slides[i];
        const int begin = static_cast<int>(m.logits.size());
        for (size_t k = 0; k < slide.patches.size(); ++k) {
            m.logits.push_back(inference.logits[i][k]);
            m.weights.push_back(slide.normalized_weights[k]);
            m.row_slide.push_back(static_cast<int>(i));
            m.patch_ids.push_back(slide.patches[k].id);
        }
        m.slide_ids.push_back(slide.id);
        m.slide_labels.push_back(slide.label);
        m.slide_spans.emplace_back(begin, static_cast<int>(m.logits.size()));
    }
    return m;
}

namespace {

Vec4 scale_logits(const Vec4& logits, const Vec4& alpha) {
    return Vec4{alpha[0] * logits[0], alpha[1] * logits[1], alpha[2] * logits[2],
                alpha[3] * logits[3]};
}

Vec4 slide_fractions(const LogitsMatrix& m, const Vec4& alpha, int slide) {
    Vec4 v{};
    const auto [begin, end] = m.slide_spans[slide];
    for (int r = begin; r < end; ++r) {
        v[argmax_lowest(scale_logits(m.logits[r], alpha))] += m.weights[r];
    }
    return v;
}

double hinge_term(const Vec4& fractions, int label, const ConstraintMatrices& constraints) {
    double j = std::max(0.0, constraints.lower[label][label] - fractions[label]);
    for (int c = label + 1; c < kNumClasses; ++c) {
        j += std::max(0.0, fractions[c] - constraints.upper[label][c]);
    }
    return j;
}

}  // namespace

CalibratedPredictions apply_calibration(const LogitsMatrix& matrix, const Vec4& alpha,
                                        const ExecPolicy& policy) {
    CalibratedPredictions out;
    out.classes.resize(matrix.rows());
    out.fractions.resize(matrix.slides());
    parallel_for(static_cast<std::ptrdiff_t>(matrix.slides()), policy, [&](std::ptrdiff_t i) {
        Vec4 v{};
        const auto [begin, end] = matrix.slide_spans[i];
        for (int r = begin; r < end; ++r) {
            const int cls = argmax_lowest(scale_logits(matrix.logits[r], alpha));
            out.classes[r] = cls;
            v[cls] += matrix.weights[r];
        }
        out.fractions[i] = ClassFractionVector::from(v);
    });
    return out;
}

double calibration_objective(const LogitsMatrix& matrix, const Vec4& alpha,
                             const ConstraintMatrices& constraints, const ExecPolicy& policy) {
    std::vector<double> terms(matrix.slides());
    parallel_for(static_cast<std::ptrdiff_t>(matrix.slides()), policy, [&](std::ptrdiff_t i) {
        terms[i] = hinge_term(slide_fractions(matrix, alpha, static_cast<int>(i)),
                              matrix.slide_labels[i], constraints);
    });
    double j = 0.0;
    for (double t : terms) j += t;
    return j;
}

namespace {

// Objective wrapper counting evaluations and tracking the best iterate.
struct Tracker {
    std::function<double(const Vec4&)> objective;
    int evaluations = 0;
    Vec4 best_alpha{1.0, 1.0, 1.0, 1.0};
    double best_value = std::numeric_limits<double>::infinity();
    std::vector<CalibrateTracePoint>* trace = nullptr;

    double eval(const Vec4& alpha) {
        const double value = objective(alpha);
        ++evaluations;
        if (std::isfinite(value) && value < best_value) {
            best_value = value;
            best_alpha = alpha;
            if (trace) trace->push_back({evaluations, alpha, value});
        }
        return value;
    }
};

double simplex_diameter(const std::array<Vec4, 5>& x) {
    double d = 0.0;
    for (int v = 1; v < 5; ++v) {
        for (int c = 0; c < kNumClasses; ++c) d = std::max(d, std::abs(x[v][c] - x[0][c]));
    }
    return d;
}

// One Nelder-Mead run; the tracker keeps the global best across runs.
void nelder_mead(Tracker& tracker, const Vec4& start, double step, int max_evaluations,
                 double tolerance) {
    constexpr int kVertices = kNumClasses + 1;
    std::array<Vec4, kVertices> x;
    std::array<double, kVertices> f;
    x[0] = start;
    f[0] = tracker.eval(x[0]);
    for (int v = 1; v < kVertices; ++v) {
        x[v] = start;
        x[v][v - 1] += step;
        f[v] = tracker.eval(x[v]);
    }

    int evals = kVertices;
    while (evals < max_evaluations) {
        std::array<int, kVertices> order{0, 1, 2, 3, 4};
        std::sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
        std::array<Vec4, kVertices> xs;
        std::array<double, kVertices> fs;
        for (int v = 0; v < kVertices; ++v) {
            xs[v] = x[order[v]];
            fs[v] = f[order[v]];
        }
        x = xs;
        f = fs;
        if (simplex_diameter(x) < tolerance) break;

        Vec4 centroid{};
        for (int v = 0; v < kVertices - 1; ++v) {
            for (int c = 0; c < kNumClasses; ++c) centroid[c] += x[v][c];
        }
        for (double& c : centroid) c /= kVertices - 1;

        const Vec4& worst = x[kVertices - 1];
        Vec4 reflected;
        for (int c = 0; c < kNumClasses; ++c) reflected[c] = centroid[c] + (centroid[c] - worst[c]);
        const double fr = tracker.eval(reflected);
        ++evals;

        if (fr < f[0]) {
            Vec4 expanded;
            for (int c = 0; c < kNumClasses; ++c) {
                expanded[c] = centroid[c] + 2.0 * (reflected[c] - centroid[c]);
            }
            const double fe = tracker.eval(expanded);
            ++evals;
            if (fe < fr) {
                x[kVertices - 1] = expanded;
                f[kVertices - 1] = fe;
            } else {
                x[kVertices - 1] = reflected;
                f[kVertices - 1] = fr;
            }
        } else if (fr < f[kVertices - 2]) {
            x[kVertices - 1] = reflected;
            f[kVertices - 1] = fr;
        } else {
            const bool outside = fr < f[kVertices - 1];
            Vec4 contracted;
            for (int c = 0; c < kNumClasses; ++c) {
                contracted[c] = outside ? centroid[c] + 0.5 * (reflected[c] - centroid[c])
                                        : centroid[c] - 0.5 * (centroid[c] - worst[c]);
            }
            const double fc = tracker.eval(contracted);
            ++evals;
            if (fc < (outside ? fr : f[kVertices - 1])) {
                x[kVertices - 1] = contracted;
                f[kVertices - 1] = fc;
            } else {
                for (int v = 1; v < kVertices; ++v) {
                    for (int c = 0; c < kNumClasses; ++c) {
                        x[v][c] = x[0][c] + 0.5 * (x[v][c] - x[0][c]);
                    }
                    f[v] = tracker.eval(x[v]);
                    ++evals;
                }
            }
        }
    }
}

struct SmoothedObjective {
    const LogitsMatrix& matrix;
    const ConstraintMatrices& constraints;
    double temperature;

    // Soft fractions V_ic = sum_k w_k softmax(alpha * z_k / tau)_c and the
    // hinge objective's gradient through them.
    double eval(const Vec4& alpha, Vec4* grad) const {
        if (grad) grad->fill(0.0);
        double j = 0.0;
        for (size_t i = 0; i < matrix.slides(); ++i) {
            const auto [begin, end] = matrix.slide_spans[i];
            Vec4 v{};
            std::vector<Vec4> soft(end - begin);
            for (int r = begin; r < end; ++r) {
                Vec4 scaled = scale_logits(matrix.logits[r], alpha);
                for (double& z : scaled) z /= temperature;
                soft[r - begin] = softmax(scaled);
                for (int c = 0; c < kNumClasses; ++c) v[c] += matrix.weights[r] * soft[r - begin][c];
            }
            const int label = matrix.slide_labels[i];
            Vec4 dj_dv{};
            const double lower_gap = constraints.lower[label][label] - v[label];
            if (lower_gap > 0.0) {
                j += lower_gap;
                dj_dv[label] -= 1.0;
            }
            for (int c = label + 1; c < kNumClasses; ++c) {
                const double upper_gap = v[c] - constraints.upper[label][c];
                if (upper_gap > 0.0) {
                    j += upper_gap;
                    dj_dv[c] += 1.0;
                }
            }
            if (!grad) continue;
            for (int r = begin; r < end; ++r) {
                const Vec4& s = soft[r - begin];
                for (int m = 0; m < kNumClasses; ++m) {
                    double ds = 0.0;
                    for (int c = 0; c < kNumClasses; ++c) {
                        if (dj_dv[c] == 0.0) continue;
                        const double delta = (c == m) ? 1.0 : 0.0;
                        ds += dj_dv[c] * s[c] * (delta - s[m]);
                    }
                    (*grad)[m] += matrix.weights[r] * ds * matrix.logits[r][m] / temperature;
                }
            }
        }
        return j;
    }
};

}  // namespace

CalibrateResult optimize_alpha(const LogitsMatrix& matrix, const ConstraintMatrices& constraints,
                               const CalibrateOptions& options, const ExecPolicy& policy) {
    matrix.validate();
    const Vec4 identity{1.0, 1.0, 1.0, 1.0};

    CalibrateResult result;
    Tracker tracker;
    tracker.trace = &result.trace;
    if (options.positive_alpha) {
        // Search over beta with alpha = exp(beta); beta = 0 is the identity.
        tracker.objective = [&](const Vec4& beta) {
            Vec4 alpha;
            for (int c = 0; c < kNumClasses; ++c) alpha[c] = std::exp(beta[c]);
            return calibration_objective(matrix, alpha, constraints, policy);
        };
    } else {
        tracker.objective = [&](const Vec4& alpha) {
            return calibration_objective(matrix, alpha, constraints, policy);
        };
    }
    const Vec4 origin = options.positive_alpha ? Vec4{0.0, 0.0, 0.0, 0.0} : identity;

    result.objective_before = tracker.eval(origin);
    if (result.objective_before > 0.0) {
        try {
            if (options.mode == CalibrateOptions::Mode::kSimplex) {
                nelder_mead(tracker, origin, options.step, options.max_evaluations,
                            options.simplex_tolerance);
                for (int r = 0; r < options.restarts && tracker.best_value > 0.0; ++r) {
                    Vec4 start = origin;
                    start[r % kNumClasses] += (r < kNumClasses ? options.step : -options.step);
                    nelder_mead(tracker, start, options.step, options.max_evaluations,
                                options.simplex_tolerance);
                }
            } else {
                const SmoothedObjective smoothed{matrix, constraints, options.temperature};
                Vec4 point = origin;
                double step_size = 0.1;
                Vec4 grad;
                double value = smoothed.eval(point, &grad);
                for (int it = 0; it < options.smoothed_iterations; ++it) {
                    Vec4 next;
                    for (int c = 0; c < kNumClasses; ++c) next[c] = point[c] - step_size * grad[c];
                    Vec4 next_grad;
                    const double next_value = smoothed.eval(next, &next_grad);
                    if (!std::isfinite(next_value)) break;
                    if (next_value < value) {
                        point = next;
                        value = next_value;
                        grad = next_grad;
                        step_size *= 1.2;
                        tracker.eval(point);  // re-evaluate the hard objective
                    } else {
                        step_size *= 0.5;
                        if (step_size < 1e-8) break;
                    }
                }
            }
        } catch (const std::exception&) {
            result.fell_back = true;
        }
    }

    if (!std::isfinite(tracker.best_value) || tracker.best_value > result.objective_before) {
        result.fell_back = true;
    }
    if (options.positive_alpha) {
        // The tracker searched in log space; report plain scales.
        for (int c = 0; c < kNumClasses; ++c) {
            tracker.best_alpha[c] = std::exp(tracker.best_alpha[c]);
        }
        for (CalibrateTracePoint& point : result.trace) {
            for (int c = 0; c < kNumClasses; ++c) point.alpha[c] = std::exp(point.alpha[c]);
        }
    }
    if (result.fell_back) {
        result.alpha = identity;
        result.objective_after = result.objective_before;
    } else {
        result.alpha = tracker.best_alpha;
        result.objective_after = tracker.best_value;
    }
    result.evaluations = tracker.evaluations;
    return result;
}

}  // namespace her2ws
