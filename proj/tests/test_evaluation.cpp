#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "her2ws/evaluation.hpp"
#include "her2ws/synth.hpp"

using namespace her2ws;

TEST_CASE("confusion tallies pairs; rows are reference") {
    const std::vector<int> same{0, 1, 2, 3, 3};
    const ConfusionMatrix diag = confusion(same, same);
    CHECK(diag.diagonal() == 5);
    CHECK(diag.total() == 5);

    const ConfusionMatrix cm = confusion(std::vector<int>{0, 1}, std::vector<int>{1, 1});
    CHECK(cm.counts[0][1] == 1);
    CHECK(cm.counts[1][1] == 1);

    const ConfusionMatrix empty = confusion(std::vector<int>{}, std::vector<int>{});
    CHECK(empty.total() == 0);

    CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{}), ValidationError);
    CHECK_THROWS_AS(confusion(std::vector<int>{4}, std::vector<int>{0}), ValidationError);

    // Row sums equal per-class reference counts.
    const std::vector<int> ref{0, 0, 0, 2, 2, 1};
    const std::vector<int> pred{0, 1, 2, 2, 3, 1};
    const ConfusionMatrix counts = confusion(ref, pred);
    CHECK(counts.row_sum(0) == 3);
    CHECK(counts.row_sum(1) == 1);
    CHECK(counts.row_sum(2) == 2);
    CHECK(counts.row_sum(3) == 0);
}

TEST_CASE("macro_f1 worked examples and policies") {
    const std::vector<int> perfect{0, 1, 2, 3};
    CHECK(macro_f1(confusion(perfect, perfect)) == doctest::Approx(1.0));

    // Present-only: classes 2 and 3 are absent from both sides.
    const ConfusionMatrix partial =
        confusion(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 1, 1});
    CHECK(macro_f1(partial) == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0).epsilon(1e-12));
    // Strict mode scores the absent classes 0.
    CHECK(macro_f1(partial, AbsentClassPolicy::kStrict) ==
          doctest::Approx((2.0 / 3.0 + 0.8) / 4.0).epsilon(1e-12));

    // One-class predictions over a balanced reference: F1 = (0.4, 0, 0, 0).
    std::vector<int> ref, pred;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 5; ++i) {
            ref.push_back(c);
            pred.push_back(0);
        }
    }
    CHECK(macro_f1(confusion(ref, pred)) == doctest::Approx(0.1).epsilon(1e-12));

    CHECK_THROWS_AS(macro_f1(ConfusionMatrix{}), ValidationError);
}

TEST_CASE("macro_f1 is invariant under sample order") {
    std::mt19937_64 engine(61);
    std::vector<int> ref, pred;
    std::uniform_int_distribution<int> cls(0, 3);
    for (int i = 0; i < 200; ++i) {
        ref.push_back(cls(engine));
        pred.push_back(cls(engine));
    }
    const double before = macro_f1(confusion(ref, pred));
    std::vector<int> order(ref.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), engine);
    std::vector<int> ref2, pred2;
    for (int i : order) {
        ref2.push_back(ref[i]);
        pred2.push_back(pred[i]);
    }
    CHECK(macro_f1(confusion(ref2, pred2)) == before);
}

TEST_CASE("pixel_metrics formulas and degenerate flag") {
    const PixelMetrics perfect = pixel_metrics(50, 0, 0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.dice == 1.0);
    CHECK_FALSE(perfect.degenerate);

    const PixelMetrics half = pixel_metrics(50, 50, 50);
    CHECK(half.precision == doctest::Approx(0.5));
    CHECK(half.recall == doctest::Approx(0.5));
    CHECK(half.dice == doctest::Approx(0.5));

    const PixelMetrics none = pixel_metrics(0, 10, 10);
    CHECK(none.precision == 0.0);
    CHECK(none.recall == 0.0);
    CHECK(none.dice == 0.0);
    CHECK(none.degenerate);
}

TEST_CASE("both dice expressions agree on random count triples") {
    std::mt19937_64 engine(73);
    std::uniform_int_distribution<int64_t> count(0, 1000);
    for (int trial = 0; trial < 1000; ++trial) {
        const int64_t tp = count(engine);
        const int64_t fp = count(engine);
        const int64_t fn = count(engine);
        const PixelMetrics m = pixel_metrics(tp, fp, fn);
        if (m.precision > 0.0 && m.recall > 0.0) {
            const double harmonic = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
            CHECK(std::abs(harmonic - m.dice) <= 1e-12);
        }
    }
}

TEST_CASE("fraction_kde: single-kernel mode peaks at the sample") {
    Slide slide;
    slide.id = "s";
    slide.label = 1;
    for (int i = 0; i < 2; ++i) {
        Patch p;
        p.id = "p" + std::to_string(i);
        p.tumor_fraction = 0.5;
        p.features = {0.0};
        slide.patches.push_back(std::move(p));
    }
    finalize_weights(slide);
    const std::vector<Slide> slides{slide};
    const std::vector<std::vector<int>> preds{{0, 1}};  // V_0 = V_1 = 0.5

    const auto cells = fraction_kde(slides, preds, 0.05);
    for (const KdeCell& cell : cells) {
        if (cell.slide_class != 1) {
            CHECK(cell.samples == 0);
            CHECK(cell.density.empty());
            continue;
        }
        REQUIRE(cell.samples == 1);
        const auto peak = std::max_element(cell.density.begin(), cell.density.end());
        const int at = static_cast<int>(peak - cell.density.begin());
        if (cell.patch_class <= 1) {
            CHECK(at == 50);  // grid point 0.5
            // Trapezoid integral stays within 2% of 1.
            double integral = 0.0;
            for (size_t g = 1; g < cell.density.size(); ++g) {
                integral += 0.5 * (cell.density[g - 1] + cell.density[g]) * 0.01;
            }
            CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
        } else {
            CHECK(at == 0);  // all mass at fraction 0
        }
    }
}

TEST_CASE("fraction_kde concentrates above-diagonal mass below 10% on generated cohorts") {
    CohortSpec spec;
    spec.slides_per_class = {40, 40, 40, 40};
    spec.patches_per_slide = {15, 30};
    spec.seed = 4711;
    const GeneratedCohort cohort = generate_cohort(spec);

    // Use the ground-truth classes as predictions.
    std::vector<std::vector<int>> preds(cohort.slides.size());
    for (size_t i = 0; i < cohort.slides.size(); ++i) {
        for (const Patch& p : cohort.slides[i].patches) preds[i].push_back(*p.true_class);
    }
    const auto cells = fraction_kde(cohort.slides, preds, std::nullopt);
    for (const KdeCell& cell : cells) {
        if (cell.patch_class <= cell.slide_class || cell.samples == 0) continue;
        double below = 0.0;
        double total = 0.0;
        for (size_t g = 0; g < cell.density.size(); ++g) {
            total += cell.density[g];
            if (cell.grid[g] < 0.1) below += cell.density[g];
        }
        CHECK(below / total >= 0.98);
    }
}

TEST_CASE("fraction_kde validates bandwidth") {
    const std::vector<Slide> slides;
    const std::vector<std::vector<int>> preds;
    CHECK_THROWS_AS(fraction_kde(slides, preds, 0.0), ValidationError);
}

TEST_CASE("rater_agreement pairs, rates, and errors") {
    RaterLabels a{"a", {{"s1", 0}, {"s2", 1}, {"s3", 2}}};
    RaterLabels b{"b", {{"s1", 0}, {"s2", 2}, {"s3", 2}}};
    RaterLabels c{"c", {{"s1", 0}, {"s2", 1}, {"s3", 3}}};

    const auto identical = rater_agreement(std::vector<RaterLabels>{a, a});
    REQUIRE(identical.size() == 1);
    CHECK(identical[0].agreement == doctest::Approx(1.0));

    const auto three = rater_agreement(std::vector<RaterLabels>{a, b, c});
    CHECK(three.size() == 3);
    CHECK(three[0].agreement == doctest::Approx(2.0 / 3.0));

    RaterLabels disjoint{"d", {{"zz", 0}}};
    CHECK_THROWS_AS(rater_agreement(std::vector<RaterLabels>{a, disjoint}), ValidationError);
    CHECK_THROWS_AS(rater_agreement(std::vector<RaterLabels>{a}), ValidationError);
}
