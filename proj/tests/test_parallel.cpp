#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// The OpenMP kernels must match the serial reference path bit for bit:
// disjoint output slots plus ordered block reductions make the result
// independent of the thread count.

#include <random>

#include "her2ws/calibrate.hpp"
#include "her2ws/parallel.hpp"
#include "her2ws/synth.hpp"
#include "her2ws/trainer.hpp"

using namespace her2ws;

namespace {

const ExecPolicy kSerial{1};
const ExecPolicy kParallel{0};  // all hardware threads

GeneratedCohort cohort_fixture(uint64_t seed) {
    CohortSpec spec;
    spec.slides_per_class = {12, 12, 12, 12};
    spec.patches_per_slide = {20, 40};
    spec.seed = seed;
    return generate_cohort(spec, kSerial);
}

bool slides_identical(const std::vector<Slide>& a, const std::vector<Slide>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].id != b[i].id || a[i].label != b[i].label) return false;
        if (a[i].normalized_weights != b[i].normalized_weights) return false;
        if (a[i].patches.size() != b[i].patches.size()) return false;
        for (size_t k = 0; k < a[i].patches.size(); ++k) {
            if (a[i].patches[k].features != b[i].patches[k].features) return false;
            if (a[i].patches[k].tumor_fraction != b[i].patches[k].tumor_fraction) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("blocked_reduce folds blocks in index order regardless of threads") {
    // Values spanning many magnitudes make the addition order observable.
    std::mt19937_64 engine(1);
    std::uniform_real_distribution<double> mag(-20.0, 20.0);
    std::vector<double> values(10000);
    for (double& v : values) v = std::ldexp(1.0 + 0.5 * mag(engine), static_cast<int>(mag(engine)));

    const auto run = [&](const ExecPolicy& policy) {
        return blocked_reduce<double>(
            static_cast<std::ptrdiff_t>(values.size()), policy,
            [&](std::ptrdiff_t begin, std::ptrdiff_t end, double& acc) {
                for (std::ptrdiff_t i = begin; i < end; ++i) acc += values[i];
            },
            [](double& total, const double& part) { total += part; });
    };
    CHECK(run(kSerial) == run(kParallel));
}

TEST_CASE("generate_cohort is identical under serial and parallel execution") {
    CohortSpec spec;
    spec.slides_per_class = {10, 10, 10, 10};
    spec.patches_per_slide = {10, 25};
    spec.seed = 2024;
    const GeneratedCohort serial = generate_cohort(spec, kSerial);
    const GeneratedCohort parallel = generate_cohort(spec, kParallel);
    CHECK(slides_identical(serial.slides, parallel.slides));
}

TEST_CASE("inference_pass is identical under serial and parallel execution") {
    const GeneratedCohort cohort = cohort_fixture(7);
    const auto pre = pretrain(cohort.slides, {}, TrainConfig{.epochs = 5, .seed = 7}, kSerial);
    const InferenceResult a = inference_pass(pre.params, cohort.slides, kSerial);
    const InferenceResult b = inference_pass(pre.params, cohort.slides, kParallel);
    CHECK(a.predicted == b.predicted);
    CHECK(a.probs == b.probs);
    CHECK(a.logits == b.logits);
}

TEST_CASE("pretrain produces bit-identical parameters for any thread count") {
    const GeneratedCohort cohort = cohort_fixture(8);
    const auto parts = split_cohort(cohort.slides, {0.8, 0.1, 0.1}, 8);
    const TrainConfig config{.epochs = 8, .patience = 8, .seed = 8};
    const PretrainResult serial = pretrain(parts[0], parts[1], config, kSerial);
    const PretrainResult parallel = pretrain(parts[0], parts[1], config, kParallel);
    CHECK(serial.params == parallel.params);
}

TEST_CASE("weak_epoch gradient reduction is thread-count independent") {
    const GeneratedCohort cohort = cohort_fixture(9);
    const auto parts = split_cohort(cohort.slides, {0.8, 0.1, 0.1}, 9);
    const TrainConfig config{.epochs = 6, .patience = 6, .seed = 9};
    const PretrainResult pre = pretrain(parts[0], parts[1], config, kSerial);

    ClassifierParams serial_params = pre.params;
    ClassifierParams parallel_params = pre.params;
    for (int epoch = 0; epoch < 4; ++epoch) {
        const WeakEpochReport a = weak_epoch(parts[0], serial_params, {}, config, kSerial);
        const WeakEpochReport b = weak_epoch(parts[0], parallel_params, {}, config, kParallel);
        CHECK(a.mean_partial_loss == b.mean_partial_loss);
        CHECK(a.mean_ce_loss == b.mean_ce_loss);
    }
    CHECK(serial_params == parallel_params);
}

TEST_CASE("calibration objective and application are thread-count independent") {
    const GeneratedCohort cohort = cohort_fixture(10);
    const auto pre = pretrain(cohort.slides, {}, TrainConfig{.epochs = 4, .seed = 10}, kSerial);
    const LogitsMatrix serial_m = collect_logits(pre.params, cohort.slides, kSerial);
    const LogitsMatrix parallel_m = collect_logits(pre.params, cohort.slides, kParallel);
    CHECK(serial_m.logits == parallel_m.logits);

    const Vec4 alpha{0.9, 1.2, 0.8, 1.1};
    CHECK(calibration_objective(serial_m, alpha, {}, kSerial) ==
          calibration_objective(serial_m, alpha, {}, kParallel));
    const CalibratedPredictions a = apply_calibration(serial_m, alpha, kSerial);
    const CalibratedPredictions b = apply_calibration(serial_m, alpha, kParallel);
    CHECK(a.classes == b.classes);
}
