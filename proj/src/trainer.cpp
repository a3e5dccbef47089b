#include "her2ws/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "her2ws/evaluation.hpp"
#include "her2ws/guidelines.hpp"
#include "her2ws/rng.hpp"

namespace her2ws {

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("train", "epochs must be >= 1");
    if (patience < 0) throw ValidationError("train", "patience must be >= 0");
    if (!(learning_rate > 0.0)) throw ValidationError("train", "learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train", "momentum must be in [0,1)");
    if (min_tumor_fraction < 0.0 || min_tumor_fraction >= 1.0) {
        throw ValidationError("train", "min_tumor_fraction must be in [0,1)");
    }
    if (passes_per_epoch < 1) throw ValidationError("train", "passes_per_epoch must be >= 1");
}

std::vector<Slide> filter_patches(std::span<const Slide> slides, double min_tumor_fraction) {
    if (min_tumor_fraction < 0.0 || min_tumor_fraction >= 1.0) {
        throw ValidationError("train", "min_tumor_fraction must be in [0,1)");
    }
    std::vector<Slide> out;
    out.reserve(slides.size());
    for (const Slide& slide : slides) {
        Slide kept;
        kept.id = slide.id;
        kept.label = slide.label;
        for (const Patch& p : slide.patches) {
            if (p.tumor_fraction > min_tumor_fraction) kept.patches.push_back(p);
        }
        if (kept.patches.empty()) {
            throw ValidationError("train", "slide '" + slide.id +
                                               "' has no patches above the tumor-fraction "
                                               "threshold " +
                                               std::to_string(min_tumor_fraction));
        }
        finalize_weights(kept);
        out.push_back(std::move(kept));
    }
    return out;
}

InferenceResult inference_pass(const ClassifierParams& params, std::span<const Slide> slides,
                               const ExecPolicy& policy) {
    InferenceResult out;
    out.predicted.resize(slides.size());
    out.probs.resize(slides.size());
    out.logits.resize(slides.size());
    parallel_for(static_cast<std::ptrdiff_t>(slides.size()), policy, [&](std::ptrdiff_t i) {
        const Slide& slide = slides[i];
        const size_t n = slide.patches.size();
        out.predicted[i].resize(n);
        out.probs[i].resize(n);
        out.logits[i].resize(n);
        for (size_t k = 0; k < n; ++k) {
            const Forward f = forward(params, slide.patches[k].features);
            out.predicted[i][k] = f.predicted;
            out.probs[i][k] = f.probs;
            out.logits[i][k] = f.logits;
        }
    });
    return out;
}

std::vector<int> predicted_slide_scores(const ClassifierParams& params,
                                        std::span<const Slide> slides,
                                        const ConstraintMatrices& constraints,
                                        const ExecPolicy& policy) {
    const InferenceResult inference = inference_pass(params, slides, policy);
    std::vector<int> scores(slides.size());
    parallel_for(static_cast<std::ptrdiff_t>(slides.size()), policy, [&](std::ptrdiff_t i) {
        const ClassFractionVector v = compute_fractions(slides[i], inference.predicted[i]);
        scores[i] = score_fractions(v, constraints).principal;
    });
    return scores;
}

double slide_macro_f1(const ClassifierParams& params, std::span<const Slide> slides,
                      const ConstraintMatrices& constraints, const ExecPolicy& policy) {
    const std::vector<int> scores = predicted_slide_scores(params, slides, constraints, policy);
    std::vector<int> labels(slides.size());
    for (size_t i = 0; i < slides.size(); ++i) labels[i] = slides[i].label;
    return macro_f1(confusion(labels, scores));
}

namespace {

// One (slide, patch) training item plus the loss to apply.
struct TrainItem {
    int slide = 0;
    int patch = 0;
    bool is_upper = false;
    ClassSet admissible;
    int target = 0;
};

struct GradAcc {
    std::vector<double> weights;
    Vec4 bias{};
    double partial_loss_sum = 0.0;
    double ce_loss_sum = 0.0;
    int64_t partial_count = 0;
    int64_t ce_count = 0;

    void init(int dim) { weights.assign(static_cast<size_t>(kNumClasses) * dim, 0.0); }

    void add(const LossGrad& lg, std::span<const double> features, bool is_upper) {
        const int dim = static_cast<int>(features.size());
        for (int c = 0; c < kNumClasses; ++c) {
            const double g = lg.grad_logits[c];
            double* row = weights.data() + static_cast<size_t>(c) * dim;
            for (int j = 0; j < dim; ++j) row[j] += g * features[j];
            bias[c] += g;
        }
        if (is_upper) {
            partial_loss_sum += lg.loss;
            ++partial_count;
        } else {
            ce_loss_sum += lg.loss;
            ++ce_count;
        }
    }

    void merge(const GradAcc& other) {
        if (other.weights.empty()) return;
        if (weights.empty()) weights.assign(other.weights.size(), 0.0);
        for (size_t i = 0; i < weights.size(); ++i) weights[i] += other.weights[i];
        for (int c = 0; c < kNumClasses; ++c) bias[c] += other.bias[c];
        partial_loss_sum += other.partial_loss_sum;
        ce_loss_sum += other.ce_loss_sum;
        partial_count += other.partial_count;
        ce_count += other.ce_count;
    }
};

// Mean-reduced gradients over `items`; the blocked reduction keeps the
// floating-point order fixed for any thread count.
GradAcc accumulate(const ClassifierParams& params, std::span<const Slide> slides,
                   std::span<const TrainItem> items, const ExecPolicy& policy) {
    GradAcc total = blocked_reduce<GradAcc>(
        static_cast<std::ptrdiff_t>(items.size()), policy,
        [&](std::ptrdiff_t begin, std::ptrdiff_t end, GradAcc& acc) {
            acc.init(params.dim);
            for (std::ptrdiff_t k = begin; k < end; ++k) {
                const TrainItem& item = items[k];
                const Patch& patch = slides[item.slide].patches[item.patch];
                const Forward f = forward(params, patch.features);
                const LossGrad lg = item.is_upper ? partial_loss(f.logits, item.admissible)
                                                  : ce_loss(f.logits, item.target);
                acc.add(lg, patch.features, item.is_upper);
            }
        },
        [](GradAcc& total_acc, const GradAcc& part) { total_acc.merge(part); });
    if (total.weights.empty()) total.init(params.dim);
    return total;
}

void apply_mean_step(ClassifierParams& params, GradAcc&& acc, int64_t count) {
    if (count == 0) return;
    Gradients grads;
    grads.weights = std::move(acc.weights);
    const double inv = 1.0 / static_cast<double>(count);
    for (double& g : grads.weights) g *= inv;
    for (int c = 0; c < kNumClasses; ++c) grads.bias[c] = acc.bias[c] * inv;
    sgd_step(params, grads);
}

double patch_accuracy_vs_label(const ClassifierParams& params, std::span<const Slide> slides,
                               const ExecPolicy& policy) {
    std::vector<int64_t> correct(slides.size(), 0);
    int64_t total = 0;
    for (const Slide& s : slides) total += static_cast<int64_t>(s.patches.size());
    parallel_for(static_cast<std::ptrdiff_t>(slides.size()), policy, [&](std::ptrdiff_t i) {
        int64_t hits = 0;
        for (const Patch& p : slides[i].patches) {
            if (forward(params, p.features).predicted == slides[i].label) ++hits;
        }
        correct[i] = hits;
    });
    int64_t hits = 0;
    for (int64_t h : correct) hits += h;
    return total > 0 ? static_cast<double>(hits) / total : 0.0;
}

}  // namespace

PretrainResult pretrain(std::span<const Slide> train, std::span<const Slide> val,
                        const TrainConfig& config, const ExecPolicy& policy) {
    if (train.empty()) throw ValidationError("train", "empty training set");
    const int dim = static_cast<int>(train.front().patches.front().features.size());

    PretrainResult result;
    result.params = ClassifierParams::zeros(dim, config.learning_rate, config.momentum);
    if (config.epochs <= 0) return result;

    std::vector<TrainItem> items;
    for (size_t i = 0; i < train.size(); ++i) {
        for (size_t k = 0; k < train[i].patches.size(); ++k) {
            TrainItem item;
            item.slide = static_cast<int>(i);
            item.patch = static_cast<int>(k);
            item.target = train[i].label;
            items.push_back(item);
        }
    }

    const std::span<const Slide> metric_set = val.empty() ? train : val;
    ClassifierParams best = result.params;
    double best_accuracy = -1.0;
    int best_epoch = 0;
    int since_best = 0;

    const size_t batch = config.batch_size <= 0 ? items.size()
                                                : static_cast<size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::mt19937_64 engine = rng::make_engine(config.seed, rng::kTagShuffle, epoch);
        std::shuffle(items.begin(), items.end(), engine);

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (size_t start = 0; start < items.size(); start += batch) {
            const size_t end = std::min(items.size(), start + batch);
            const std::span<const TrainItem> slice(items.data() + start, end - start);
            GradAcc acc = accumulate(result.params, train, slice, policy);
            loss_sum += acc.ce_loss_sum;
            loss_count += acc.ce_count;
            apply_mean_step(result.params, std::move(acc), static_cast<int64_t>(slice.size()));
        }

        const double accuracy = patch_accuracy_vs_label(result.params, metric_set, policy);
        result.history.push_back(
            {epoch, loss_count > 0 ? loss_sum / loss_count : 0.0, accuracy});
        result.epochs_run = epoch;
        if (!std::isfinite(result.history.back().mean_loss)) {
            throw ValidationError("train", "pretraining diverged: non-finite loss at epoch " +
                                               std::to_string(epoch));
        }
        if (accuracy > best_accuracy) {
            best_accuracy = accuracy;
            best = result.params;
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience && config.patience > 0) {
            break;
        }
    }
    result.params = std::move(best);
    result.best_epoch = best_epoch;
    result.best_val_accuracy = best_accuracy;
    return result;
}

WeakEpochReport weak_epoch(std::span<const Slide> slides, ClassifierParams& params,
                           const ConstraintMatrices& constraints, const TrainConfig& config,
                           const ExecPolicy& policy) {
    WeakEpochReport report;
    const InferenceResult inference = inference_pass(params, slides, policy);
    const std::vector<SelectionSet> sets =
        build_epoch_set(slides, inference.predicted, inference.probs, constraints, policy);

    std::vector<TrainItem> items;
    report.slides.resize(slides.size());
    for (size_t i = 0; i < slides.size(); ++i) {
        SlideEpochReport& sr = report.slides[i];
        sr.slide = slides[i].id;
        sr.fractions = compute_fractions(slides[i], inference.predicted[i]).v;
        const SlideViolations violations =
            broken_constraints(ClassFractionVector::from(sr.fractions), slides[i].label, constraints);
        sr.upper = violations.upper;
        sr.lower = violations.lower;
        if (!violations.consistent()) ++report.violated_slides;

        const SelectionSet& set = sets[i];
        for (const UpperSelection& u : set.upper) {
            for (int patch : u.patch_indices) {
                items.push_back({static_cast<int>(i), patch, true, u.admissible, 0});
            }
            sr.upper_selected += static_cast<int>(u.patch_indices.size());
        }
        if (set.lower) {
            for (int patch : set.lower->patch_indices) {
                items.push_back({static_cast<int>(i), patch, false, ClassSet{}, set.lower->target});
            }
            sr.lower_selected = static_cast<int>(set.lower->patch_indices.size());
        }
        report.selected_upper += sr.upper_selected;
        report.selected_lower += sr.lower_selected;
    }

    for (int pass = 0; pass < config.passes_per_epoch && !items.empty(); ++pass) {
        GradAcc acc = accumulate(params, slides, items, policy);
        if (pass == 0) {
            report.mean_partial_loss =
                acc.partial_count > 0 ? acc.partial_loss_sum / acc.partial_count : 0.0;
            report.mean_ce_loss = acc.ce_count > 0 ? acc.ce_loss_sum / acc.ce_count : 0.0;
            if (!std::isfinite(report.mean_partial_loss) || !std::isfinite(report.mean_ce_loss)) {
                throw ValidationError("train", "weak epoch diverged: non-finite loss");
            }
        }
        apply_mean_step(params, std::move(acc), static_cast<int64_t>(items.size()));
    }
    return report;
}

WeakTrainResult train_weak(std::span<const Slide> train, std::span<const Slide> val,
                           ClassifierParams initial, const TrainConfig& config,
                           const ConstraintMatrices& constraints, const ExecPolicy& policy) {
    if (train.empty()) throw ValidationError("train", "empty training set");
    const std::span<const Slide> metric_set = val.empty() ? train : val;

    WeakTrainResult result;
    result.params = std::move(initial);
    ClassifierParams best = result.params;
    double best_f1 = slide_macro_f1(best, metric_set, constraints, policy);
    int best_epoch = 0;
    int best_violated = std::numeric_limits<int>::max();

    int consistent_streak = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        WeakEpochReport report = weak_epoch(train, result.params, constraints, config, policy);
        report.epoch = epoch;
        report.val_macro_f1 = slide_macro_f1(result.params, metric_set, constraints, policy);
        result.epochs_run = epoch;
        // Ties on validation F1 go to the epoch with the fewest violated
        // training slides (the later one among equals), so constraint
        // progress is not thrown away once the validation split saturates.
        if (report.val_macro_f1 > best_f1 ||
            (report.val_macro_f1 == best_f1 && report.violated_slides <= best_violated)) {
            best_f1 = report.val_macro_f1;
            best = result.params;
            best_epoch = epoch;
            best_violated = report.violated_slides;
        }
        const bool consistent = report.violated_slides == 0;
        result.reports.push_back(std::move(report));
        consistent_streak = consistent ? consistent_streak + 1 : 0;
        if (consistent_streak >= std::max(config.patience, 1)) break;
    }
    result.params = std::move(best);
    result.best_epoch = best_epoch;
    result.best_val_f1 = best_f1;
    return result;
}

}  // namespace her2ws
