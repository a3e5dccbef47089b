#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "her2ws/guidelines.hpp"
#include "her2ws/selection.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace her2ws;
using fixtures::make_slide;
using fixtures::probs_for;

TEST_CASE("compute_fractions") {
    const Slide s = make_slide("s", 0, {0.3, 0.7});
    const std::vector<int> all_zero{0, 0};
    const ClassFractionVector v0 = compute_fractions(s, all_zero);
    CHECK(v0[0] == doctest::Approx(1.0));

    const std::vector<int> preds{1, 2};
    const ClassFractionVector v = compute_fractions(s, preds);
    CHECK(v[0] == 0.0);
    CHECK(v[1] == doctest::Approx(0.3));
    CHECK(v[2] == doctest::Approx(0.7));
    CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(compute_fractions(s, std::vector<int>{0}), ValidationError);
}

TEST_CASE("select_upper takes the minimal low-probability prefix") {
    // Binary-exact weights (16 x 0.0625) so the cumulative boundary "mass
    // equal to excess counts as reached" is exercised without rounding.
    Slide s = make_slide("s", 1, std::vector<double>(16, 0.0625));
    std::vector<int> preds(16, 0);
    preds[4] = preds[9] = preds[14] = 2;
    std::vector<double> conf(16, 0.9);
    conf[4] = 0.5;   // lowest p_2 -> selected first
    conf[9] = 0.7;
    conf[14] = 0.8;
    const auto probs = probs_for(preds, conf);

    SUBCASE("excess below one patch weight selects only the least confident") {
        const UpperSelection sel = select_upper(s, preds, probs, UpperViolation{2, 0.05});
        CHECK(sel.patch_indices == std::vector<int>{4});
        CHECK(sel.cutoff == 0);
        CHECK_FALSE(sel.admissible.contains(2));
        CHECK(sel.admissible.size() == 3);
    }
    SUBCASE("excess equal to two patch weights selects exactly two") {
        const UpperSelection sel = select_upper(s, preds, probs, UpperViolation{2, 0.125});
        CHECK(sel.patch_indices == std::vector<int>{4, 9});
    }
    SUBCASE("excess equal to the full class mass selects every predicted patch") {
        const UpperSelection sel = select_upper(s, preds, probs, UpperViolation{2, 0.1875});
        CHECK(sel.patch_indices == std::vector<int>{4, 9, 14});
    }
}

TEST_CASE("select_lower takes the minimal high-probability suffix from the neighbors") {
    Slide s = make_slide("s", 0, std::vector<double>(20, 0.05));
    std::vector<int> preds(20, 0);
    preds[3] = preds[8] = 1;   // neighbor class of label 0 is {1} only
    preds[12] = 2;             // class 2 is not a neighbor of 0
    std::vector<double> conf(20, 0.9);
    const auto probs = probs_for(preds, conf);

    SUBCASE("deficit covered by the two neighbor patches") {
        const LowerSelection sel = select_lower(s, preds, probs, LowerViolation{0.08}, 0);
        std::vector<int> sorted = sel.patch_indices;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::vector<int>{3, 8});
        CHECK(sel.target == 0);
    }
    SUBCASE("zero deficit selects nothing") {
        const LowerSelection sel = select_lower(s, preds, probs, LowerViolation{0.0}, 0);
        CHECK(sel.patch_indices.empty());
    }
    SUBCASE("insufficient neighbor pool returns the whole pool") {
        const LowerSelection sel = select_lower(s, preds, probs, LowerViolation{0.5}, 0);
        CHECK(sel.patch_indices.size() == 2);
    }
}

TEST_CASE("probability ties are broken by patch id") {
    Slide s = make_slide("s", 1, {0.25, 0.25, 0.25, 0.25});
    const std::vector<int> preds{2, 2, 2, 2};
    const auto probs = probs_for(preds, {0.8, 0.8, 0.8, 0.8});
    const UpperSelection sel = select_upper(s, preds, probs, UpperViolation{2, 0.3});
    CHECK(sel.patch_indices == std::vector<int>{0, 1});  // ids p0 < p1 < ...
}

TEST_CASE("select_for_slide on the worked example selects only S^u_2") {
    Slide s = make_slide("s", 1, {0.50, 0.36, 0.07, 0.07});
    const std::vector<int> preds{0, 1, 2, 2};
    const auto probs = probs_for(preds, {0.9, 0.9, 0.6, 0.8});
    const ClassFractionVector v = compute_fractions(s, preds);
    CHECK(v[2] == doctest::Approx(0.14));

    const SelectionSet set = select_for_slide(s, preds, probs, {});
    REQUIRE(set.upper.size() == 1);
    CHECK(set.upper[0].cls == 2);
    CHECK_FALSE(set.lower.has_value());
    double mass = 0.0;
    for (int i : set.upper[0].patch_indices) mass += s.normalized_weights[i];
    CHECK(mass >= 0.04);
}

TEST_CASE("zero mass on the label class forces a lower selection from the neighbors") {
    Slide s = make_slide("s", 2, {0.4, 0.3, 0.3});
    const std::vector<int> preds{1, 1, 3};
    const auto probs = probs_for(preds, {0.9, 0.8, 0.7});
    const SelectionSet set = select_for_slide(s, preds, probs, {});
    REQUIRE(set.lower.has_value());
    CHECK_FALSE(set.lower->patch_indices.empty());
    for (int i : set.lower->patch_indices) {
        CHECK((preds[i] == 1 || preds[i] == 3));
    }
    CHECK(set.lower->target == 2);
}

TEST_CASE("lower selection wins overlaps and the union holds no duplicates") {
    // Label 1 with huge class-2 mass: upper violation on 2 and lower deficit
    // on 1 compete for the same class-2 patches.
    Slide s = make_slide("s", 1, {0.05, 0.35, 0.30, 0.30});
    const std::vector<int> preds{0, 2, 2, 2};
    const auto probs = probs_for(preds, {0.9, 0.5, 0.6, 0.7});
    const SelectionSet set = select_for_slide(s, preds, probs, {});

    REQUIRE(set.lower.has_value());
    std::set<int> seen;
    for (int i : set.lower->patch_indices) CHECK(seen.insert(i).second);
    for (const UpperSelection& u : set.upper) {
        for (int i : u.patch_indices) CHECK(seen.insert(i).second);
    }
}

TEST_CASE("build_epoch_set: consistent cohort yields an empty set") {
    std::vector<Slide> slides{make_slide("a", 0, {0.8, 0.2}), make_slide("b", 3, {1.0})};
    std::vector<std::vector<int>> preds{{0, 0}, {3}};
    std::vector<std::vector<Vec4>> probs{probs_for(preds[0], {0.9, 0.9}),
                                         probs_for(preds[1], {0.9})};
    const auto sets = build_epoch_set(slides, preds, probs, {});
    for (const SelectionSet& s : sets) CHECK(s.empty());
}

TEST_CASE("selection matches the brute-force minimal-mass oracle on random slides") {
    std::mt19937_64 engine(90210);
    std::uniform_int_distribution<int> patch_count(1, 20);
    std::uniform_int_distribution<int> cls(0, 3);
    std::uniform_real_distribution<double> unit(0.01, 1.0);

    for (int trial = 0; trial < 500; ++trial) {
        const int n = patch_count(engine);
        std::vector<double> tumor(n);
        std::vector<int> preds(n);
        std::vector<double> conf(n);
        for (int i = 0; i < n; ++i) {
            tumor[i] = unit(engine);
            preds[i] = cls(engine);
            conf[i] = 0.3 + 0.7 * unit(engine);
        }
        const int label = cls(engine);
        Slide s = make_slide("s", label, tumor);
        const auto probs = probs_for(preds, conf);

        const ClassFractionVector v = compute_fractions(s, preds);
        const SlideViolations violations = broken_constraints(v, label);

        for (const UpperViolation& violation : violations.upper) {
            const UpperSelection sel = select_upper(s, preds, probs, violation);

            std::vector<int> order;
            for (int i = 0; i < n; ++i) {
                if (preds[i] == violation.cls) order.push_back(i);
            }
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (probs[a][violation.cls] != probs[b][violation.cls]) {
                    return probs[a][violation.cls] < probs[b][violation.cls];
                }
                return s.patches[a].id < s.patches[b].id;
            });
            const std::vector<int> expected =
                oracles::minimal_prefix(order, s.normalized_weights, violation.excess);
            CHECK(sel.patch_indices == expected);

            // Tightness: reached mass covers the excess, dropping the last
            // selected patch would not.
            double mass = 0.0;
            for (int i : sel.patch_indices) mass += s.normalized_weights[i];
            CHECK(mass >= violation.excess);
            if (!sel.patch_indices.empty()) {
                CHECK(mass - s.normalized_weights[sel.patch_indices.back()] < violation.excess);
            }
        }
        if (violations.lower) {
            const LowerSelection sel = select_lower(s, preds, probs, *violations.lower, label);
            std::vector<int> order;
            for (int i = 0; i < n; ++i) {
                if (preds[i] == label - 1 || preds[i] == label + 1) order.push_back(i);
            }
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (probs[a][label] != probs[b][label]) return probs[a][label] < probs[b][label];
                return s.patches[a].id < s.patches[b].id;
            });
            const std::vector<int> expected =
                oracles::minimal_suffix(order, s.normalized_weights, violations.lower->deficit);
            CHECK(sel.patch_indices == expected);
        }
    }
}
