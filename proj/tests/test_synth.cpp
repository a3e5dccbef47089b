#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "her2ws/guidelines.hpp"
#include "her2ws/synth.hpp"

using namespace her2ws;

namespace {

CohortSpec small_spec(uint64_t seed = 11) {
    CohortSpec spec;
    spec.slides_per_class = {10, 10, 10, 10};
    spec.patches_per_slide = {15, 30};
    spec.seed = seed;
    return spec;
}

// Realized tumor-weighted composition over the ground-truth patch classes.
ClassFractionVector true_composition(const Slide& slide) {
    Vec4 v{};
    for (size_t i = 0; i < slide.patches.size(); ++i) {
        v[slide.patches[i].true_class.value()] += slide.normalized_weights[i];
    }
    return ClassFractionVector::from(v);
}

}  // namespace

TEST_CASE("every generated slide's true composition scores to its declared class") {
    const GeneratedCohort cohort = generate_cohort(small_spec());
    REQUIRE(cohort.slides.size() == 40);
    std::map<int, int> per_class;
    for (const Slide& slide : cohort.slides) {
        const GuidelineVerdict verdict = score_fractions(true_composition(slide));
        CHECK(verdict.principal == slide.label);
        CHECK_FALSE(verdict.heterogeneous);
        ++per_class[slide.label];
        validate_slide(slide, 8);
    }
    for (int c = 0; c < kNumClasses; ++c) CHECK(per_class[c] == 10);
}

TEST_CASE("identical seeds give identical cohorts, different seeds differ") {
    const GeneratedCohort a = generate_cohort(small_spec(5));
    const GeneratedCohort b = generate_cohort(small_spec(5));
    REQUIRE(a.slides.size() == b.slides.size());
    bool identical = true;
    for (size_t i = 0; i < a.slides.size(); ++i) {
        if (a.slides[i].label != b.slides[i].label ||
            a.slides[i].patches.size() != b.slides[i].patches.size()) {
            identical = false;
            break;
        }
        for (size_t k = 0; k < a.slides[i].patches.size(); ++k) {
            if (a.slides[i].patches[k].features != b.slides[i].patches[k].features ||
                a.slides[i].patches[k].tumor_fraction != b.slides[i].patches[k].tumor_fraction) {
                identical = false;
            }
        }
    }
    CHECK(identical);

    const GeneratedCohort c = generate_cohort(small_spec(6));
    CHECK(a.slides[0].patches[0].features != c.slides[0].patches[0].features);
}

TEST_CASE("heterogeneous rate 1 injects sub-threshold class-2 mass into class-0 slides") {
    CohortSpec spec = small_spec(17);
    spec.slides_per_class = {12, 0, 0, 0};
    spec.heterogeneous_rate = 1.0;
    spec.composition_profiles[0] = {30.0, 2.0, 1.0, 1e-6};  // class-2 mass, class 3 negligible
    const GeneratedCohort cohort = generate_cohort(spec);
    for (const Slide& slide : cohort.slides) {
        const GuidelineVerdict verdict = score_fractions(true_composition(slide));
        CHECK(verdict.principal == 0);
        CHECK(verdict.heterogeneous);
        CHECK(verdict.recommended == 1);
        const ClassFractionVector v = true_composition(slide);
        CHECK(v[2] > 0.0);
        CHECK(v[2] < 0.1);
    }
}

TEST_CASE("incompatible composition profile exhausts rejection sampling") {
    CohortSpec spec = small_spec(3);
    spec.slides_per_class = {1, 0, 0, 0};
    // Mean mass on class 1 is far above the class-0 ceiling.
    spec.composition_profiles[0] = {0.5, 50.0, 0.5, 0.5};
    CHECK_THROWS_AS(generate_cohort(spec), ValidationError);
}

TEST_CASE("higher-class fractions stay below the 10% band across a large cohort") {
    CohortSpec spec = small_spec(23);
    spec.slides_per_class = {100, 100, 100, 100};
    const GeneratedCohort cohort = generate_cohort(spec, {0});
    int ok = 0;
    for (const Slide& slide : cohort.slides) {
        const ClassFractionVector v = true_composition(slide);
        bool below = true;
        for (int c = slide.label + 1; c < kNumClasses; ++c) below &= v[c] < 0.1;
        ok += below;
    }
    CHECK(static_cast<double>(ok) / cohort.slides.size() >= 0.99);
}

TEST_CASE("4-sigma mean separation keeps a supervised oracle above 99% patch accuracy") {
    CohortSpec spec = small_spec(29);
    spec.slides_per_class = {25, 25, 25, 25};
    const GeneratedCohort cohort = generate_cohort(spec);
    const auto means = spec.resolved_means();

    // Nearest-mean classifier fitted on the true labels (equal isotropic
    // classes make it the Bayes rule).
    int64_t hits = 0;
    int64_t total = 0;
    for (const Slide& slide : cohort.slides) {
        for (const Patch& p : slide.patches) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < kNumClasses; ++c) {
                double d = 0.0;
                for (int j = 0; j < spec.feature_dim; ++j) {
                    const double diff = p.features[j] - means[c][j];
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            hits += best == p.true_class.value();
            ++total;
        }
    }
    CHECK(static_cast<double>(hits) / total >= 0.99);
}

TEST_CASE("rater noise emits label files and corrupts the working labels") {
    CohortSpec spec = small_spec(31);
    spec.rater_noise = std::array<Vec4, 4>{Vec4{0.7, 0.3, 0, 0}, Vec4{0.15, 0.7, 0.15, 0},
                                           Vec4{0, 0.15, 0.7, 0.15}, Vec4{0, 0, 0.3, 0.7}};
    spec.rater_count = 3;
    const GeneratedCohort cohort = generate_cohort(spec);
    REQUIRE(cohort.rater_labels.size() == 3);
    CHECK(cohort.rater_labels[0].rater == "rater0");

    // Rater 0 carries the declared classes; the slide labels equal rater 1.
    for (size_t i = 0; i < cohort.slides.size(); ++i) {
        const GuidelineVerdict verdict = score_fractions(true_composition(cohort.slides[i]));
        CHECK(cohort.rater_labels[0].labels[i].second == verdict.principal);
        CHECK(cohort.slides[i].label == cohort.rater_labels[1].labels[i].second);
    }
}

TEST_CASE("split_cohort stratifies 10 slides per class as 8/1/1") {
    const GeneratedCohort cohort = generate_cohort(small_spec(37));
    const auto parts = split_cohort(cohort.slides, {0.8, 0.1, 0.1}, 99);
    std::array<std::map<int, int>, 3> counts;
    for (int p = 0; p < 3; ++p) {
        for (const Slide& s : parts[p]) ++counts[p][s.label];
    }
    for (int c = 0; c < kNumClasses; ++c) {
        CHECK(counts[0][c] == 8);
        CHECK(counts[1][c] == 1);
        CHECK(counts[2][c] == 1);
    }

    const auto all_train = split_cohort(cohort.slides, {1.0, 0.0, 0.0}, 99);
    CHECK(all_train[0].size() == cohort.slides.size());
    CHECK(all_train[1].empty());
    CHECK(all_train[2].empty());

    const auto again = split_cohort(cohort.slides, {0.8, 0.1, 0.1}, 99);
    for (int p = 0; p < 3; ++p) {
        REQUIRE(again[p].size() == parts[p].size());
        for (size_t i = 0; i < parts[p].size(); ++i) CHECK(again[p][i].id == parts[p][i].id);
    }
}

TEST_CASE("split_cohort rejects classes smaller than the nonzero parts") {
    CohortSpec spec = small_spec(41);
    spec.slides_per_class = {2, 4, 4, 4};
    const GeneratedCohort cohort = generate_cohort(spec);
    CHECK_THROWS_AS(split_cohort(cohort.slides, {0.8, 0.1, 0.1}, 1), ValidationError);
    CHECK_NOTHROW(split_cohort(cohort.slides, {0.5, 0.5, 0.0}, 1));
}

TEST_CASE("spec validation rejects bad parameters") {
    CohortSpec spec = small_spec();
    spec.composition_profiles[1][2] = 0.0;
    CHECK_THROWS_AS(generate_cohort(spec), ValidationError);

    CohortSpec bad_range = small_spec();
    bad_range.tumor_fraction_range = {0.0, 1.0};
    CHECK_THROWS_AS(generate_cohort(bad_range), ValidationError);

    CohortSpec bad_noise = small_spec();
    bad_noise.rater_noise = std::array<Vec4, 4>{Vec4{0.5, 0.3, 0, 0}, Vec4{0, 1, 0, 0},
                                                Vec4{0, 0, 1, 0}, Vec4{0, 0, 0, 1}};
    CHECK_THROWS_AS(generate_cohort(bad_noise), ValidationError);
}
