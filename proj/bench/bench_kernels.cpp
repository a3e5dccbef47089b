// Benchmark comparing the serial reference path against the OpenMP kernels
// on the pipeline's hot loops. Each kernel's outputs are checked for exact
// equality between the two paths before timing is reported.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>

#include "her2ws/calibrate.hpp"
#include "her2ws/synth.hpp"
#include "her2ws/trainer.hpp"

using namespace her2ws;

namespace {

const ExecPolicy kSerial{1};
const ExecPolicy kParallel{0};

double time_ms(const std::function<void()>& fn, int repeats) {
    fn();  // warmup
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) fn();
    const double total =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    return total / repeats;
}

void report(const std::string& name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name.c_str(), serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

void check(bool ok, const std::string& kernel) {
    if (!ok) {
        std::fprintf(stderr, "FATAL: %s outputs differ between serial and parallel paths\n",
                     kernel.c_str());
        std::exit(1);
    }
}

}  // namespace

int main(int argc, char** argv) {
    const int slides_per_class = argc > 1 ? std::atoi(argv[1]) : 250;
    const int repeats = argc > 2 ? std::atoi(argv[2]) : 5;

    CohortSpec spec;
    spec.slides_per_class = {slides_per_class, slides_per_class, slides_per_class,
                             slides_per_class};
    spec.patches_per_slide = {40, 80};
    spec.seed = 1234;

    std::printf("cohort: %d slides, ", 4 * slides_per_class);
    const GeneratedCohort serial_cohort = generate_cohort(spec, kSerial);
    size_t patches = 0;
    for (const Slide& s : serial_cohort.slides) patches += s.patches.size();
    std::printf("%zu patches, %d repeats\n\n", patches, repeats);
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    // Cohort generation.
    {
        const double serial_ms = time_ms([&] { generate_cohort(spec, kSerial); }, repeats);
        const double parallel_ms = time_ms([&] { generate_cohort(spec, kParallel); }, repeats);
        const GeneratedCohort parallel_cohort = generate_cohort(spec, kParallel);
        bool same = parallel_cohort.slides.size() == serial_cohort.slides.size();
        for (size_t i = 0; same && i < serial_cohort.slides.size(); ++i) {
            same = serial_cohort.slides[i].patches.size() ==
                       parallel_cohort.slides[i].patches.size() &&
                   serial_cohort.slides[i].patches[0].features ==
                       parallel_cohort.slides[i].patches[0].features;
        }
        check(same, "generate_cohort");
        report("generate_cohort", serial_ms, parallel_ms);
    }

    const std::vector<Slide>& slides = serial_cohort.slides;
    TrainConfig config;
    config.seed = 1234;
    config.epochs = 3;
    const PretrainResult pre = pretrain(slides, {}, config, kParallel);

    // Inference pass.
    {
        const InferenceResult a = inference_pass(pre.params, slides, kSerial);
        const InferenceResult b = inference_pass(pre.params, slides, kParallel);
        check(a.logits == b.logits && a.predicted == b.predicted, "inference_pass");
        const double serial_ms =
            time_ms([&] { inference_pass(pre.params, slides, kSerial); }, repeats);
        const double parallel_ms =
            time_ms([&] { inference_pass(pre.params, slides, kParallel); }, repeats);
        report("inference_pass", serial_ms, parallel_ms);
    }

    // One weak epoch (inference + selection + gradient reduction).
    {
        ClassifierParams sa = pre.params;
        ClassifierParams sb = pre.params;
        weak_epoch(slides, sa, {}, config, kSerial);
        weak_epoch(slides, sb, {}, config, kParallel);
        check(sa == sb, "weak_epoch");
        const double serial_ms = time_ms(
            [&] {
                ClassifierParams p = pre.params;
                weak_epoch(slides, p, {}, config, kSerial);
            },
            repeats);
        const double parallel_ms = time_ms(
            [&] {
                ClassifierParams p = pre.params;
                weak_epoch(slides, p, {}, config, kParallel);
            },
            repeats);
        report("weak_epoch", serial_ms, parallel_ms);
    }

    // Calibration objective over the stacked logits.
    {
        const LogitsMatrix m = collect_logits(pre.params, slides, kParallel);
        const Vec4 alpha{0.9, 1.1, 1.05, 0.95};
        check(calibration_objective(m, alpha, {}, kSerial) ==
                  calibration_objective(m, alpha, {}, kParallel),
              "calibration_objective");
        const double serial_ms =
            time_ms([&] { calibration_objective(m, alpha, {}, kSerial); }, repeats);
        const double parallel_ms =
            time_ms([&] { calibration_objective(m, alpha, {}, kParallel); }, repeats);
        report("calibration_objective", serial_ms, parallel_ms);
    }

    std::printf("\nall kernels bit-identical across paths\n");
    return 0;
}
