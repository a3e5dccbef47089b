#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "her2ws/model.hpp"
#include "her2ws/parallel.hpp"
#include "her2ws/selection.hpp"
#include "her2ws/types.hpp"

namespace her2ws {

struct TrainConfig {
    int epochs = 100;
    int patience = 20;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    uint64_t seed = 0;
    double min_tumor_fraction = 0.1;
    // Pretraining runs seeded mini-batch SGD; <= 0 means full batch.
    int batch_size = 64;
    // Weak stage: optimizer passes over each epoch's selected set. Losses are
    // mean-reduced over the selected set.
    int passes_per_epoch = 1;

    void validate() const;
};

/// Drop patches at or below the tumor-fraction threshold and renormalize the
/// weights over the survivors. A slide losing all patches is an error.
std::vector<Slide> filter_patches(std::span<const Slide> slides, double min_tumor_fraction);

/// Full inference pass: per-slide logits, probabilities and predicted
/// classes. Slides are independent, so the parallel path writes disjoint
/// slots and matches the serial one bit for bit.
struct InferenceResult {
    std::vector<std::vector<int>> predicted;
    std::vector<std::vector<Vec4>> probs;
    std::vector<std::vector<Vec4>> logits;
};

InferenceResult inference_pass(const ClassifierParams& params, std::span<const Slide> slides,
                               const ExecPolicy& policy = {});

/// Slide-level scores from a Table-1 evaluation of the predicted fractions.
std::vector<int> predicted_slide_scores(const ClassifierParams& params,
                                        std::span<const Slide> slides,
                                        const ConstraintMatrices& constraints = {},
                                        const ExecPolicy& policy = {});

double slide_macro_f1(const ClassifierParams& params, std::span<const Slide> slides,
                      const ConstraintMatrices& constraints = {}, const ExecPolicy& policy = {});

struct PretrainEpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_accuracy = 0.0;
};

struct PretrainResult {
    ClassifierParams params;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::vector<PretrainEpochStats> history;
};

/// Baseline supervised pretraining: every patch takes its slide's label.
/// Early-stops when validation patch accuracy fails to improve for
/// `patience` epochs (patience 0 disables); returns the best-validation
/// parameters. With an empty validation set the metric falls back to the
/// training slides.
PretrainResult pretrain(std::span<const Slide> train, std::span<const Slide> val,
                        const TrainConfig& config, const ExecPolicy& policy = {});

struct SlideEpochReport {
    std::string slide;
    Vec4 fractions{};
    std::vector<UpperViolation> upper;
    std::optional<LowerViolation> lower;
    int upper_selected = 0;
    int lower_selected = 0;
};

struct WeakEpochReport {
    int epoch = 0;
    std::vector<SlideEpochReport> slides;
    int violated_slides = 0;
    int64_t selected_upper = 0;
    int64_t selected_lower = 0;
    double mean_partial_loss = 0.0;
    double mean_ce_loss = 0.0;
    double val_macro_f1 = 0.0;  // filled by train_weak
};

/// One weakly supervised epoch: inference over all patches, constraint check
/// per slide, CDF-based selection, then `passes_per_epoch` aggregated
/// Nesterov-SGD updates (partial loss on upper selections, CE toward the
/// slide label on lower selections). Consistent cohorts leave the parameters
/// untouched.
WeakEpochReport weak_epoch(std::span<const Slide> slides, ClassifierParams& params,
                           const ConstraintMatrices& constraints, const TrainConfig& config,
                           const ExecPolicy& policy = {});

struct WeakTrainResult {
    ClassifierParams params;
    std::vector<WeakEpochReport> reports;
    int epochs_run = 0;
    int best_epoch = 0;  // 0 = the initial parameters
    double best_val_f1 = 0.0;
};

/// Runs weak epochs until the budget is exhausted or the cohort stays
/// violation-free for `patience` consecutive epochs (at least one). Returns
/// the parameters with the best validation slide macro F1, the initial ones
/// included.
WeakTrainResult train_weak(std::span<const Slide> train, std::span<const Slide> val,
                           ClassifierParams initial, const TrainConfig& config,
                           const ConstraintMatrices& constraints = {},
                           const ExecPolicy& policy = {});

}  // namespace her2ws
