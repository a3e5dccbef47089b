#include "her2ws/selection.hpp"

#include <algorithm>

#include "her2ws/guidelines.hpp"

namespace her2ws {

namespace {

void check_alignment(const Slide& slide, std::span<const int> predictions) {
    if (predictions.size() != slide.patches.size()) {
        throw ValidationError("selection", "slide '" + slide.id + "': " +
                                               std::to_string(predictions.size()) +
                                               " predictions for " +
                                               std::to_string(slide.patches.size()) + " patches");
    }
}

// Candidate patch indices sorted ascending by probability of `cls`, ties
// broken by patch id so runs are reproducible.
std::vector<int> sorted_by_prob(const Slide& slide, std::span<const Vec4> probs,
                                const std::vector<int>& candidates, int cls) {
    std::vector<int> order = candidates;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[a][cls] != probs[b][cls]) return probs[a][cls] < probs[b][cls];
        return slide.patches[a].id < slide.patches[b].id;
    });
    return order;
}

}  // namespace

ClassFractionVector compute_fractions(const Slide& slide, std::span<const int> predictions) {
    check_alignment(slide, predictions);
    Vec4 v{};
    for (size_t i = 0; i < predictions.size(); ++i) {
        require_class(predictions[i], "prediction");
        v[predictions[i]] += slide.normalized_weights[i];
    }
    return ClassFractionVector::from(v);
}

UpperSelection select_upper(const Slide& slide, std::span<const int> predictions,
                            std::span<const Vec4> probs, const UpperViolation& violation) {
    check_alignment(slide, predictions);
    UpperSelection out;
    out.cls = violation.cls;
    out.admissible = ClassSet::all_except(violation.cls);

    std::vector<int> candidates;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == violation.cls) candidates.push_back(static_cast<int>(i));
    }
    const std::vector<int> order = sorted_by_prob(slide, probs, candidates, violation.cls);

    double cumulative = 0.0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (cumulative >= violation.excess) break;
        cumulative += slide.normalized_weights[order[k]];
        out.patch_indices.push_back(order[k]);
        out.cutoff = static_cast<int>(k);
    }
    return out;
}

LowerSelection select_lower(const Slide& slide, std::span<const int> predictions,
                            std::span<const Vec4> probs, const LowerViolation& violation,
                            int label) {
    check_alignment(slide, predictions);
    require_class(label, "label");
    LowerSelection out;
    out.target = label;

    std::vector<int> candidates;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i];
        if (p == label - 1 || p == label + 1) candidates.push_back(static_cast<int>(i));
    }
    const std::vector<int> order = sorted_by_prob(slide, probs, candidates, label);

    // Minimal suffix (highest p_Y first) whose mass covers the deficit; the
    // whole pool if it cannot.
    double cumulative = 0.0;
    int first = static_cast<int>(order.size());
    for (int k = static_cast<int>(order.size()) - 1; k >= 0; --k) {
        if (cumulative >= violation.deficit) break;
        cumulative += slide.normalized_weights[order[k]];
        first = k;
    }
    for (int k = first; k < static_cast<int>(order.size()); ++k) {
        out.patch_indices.push_back(order[k]);
    }
    out.cutoff = out.patch_indices.empty() ? -1 : first;
    return out;
}

SelectionSet select_for_slide(const Slide& slide, std::span<const int> predictions,
                              std::span<const Vec4> probs,
                              const ConstraintMatrices& constraints) {
    const ClassFractionVector fractions = compute_fractions(slide, predictions);
    const SlideViolations violations = broken_constraints(fractions, slide.label, constraints);

    SelectionSet set;
    if (violations.lower) {
        LowerSelection lower = select_lower(slide, predictions, probs, *violations.lower, slide.label);
        if (!lower.patch_indices.empty()) set.lower = std::move(lower);
    }
    for (const UpperViolation& v : violations.upper) {
        UpperSelection upper = select_upper(slide, predictions, probs, v);
        if (set.lower) {
            // A hard CE target outranks a partial label: drop overlaps.
            const auto& taken = set.lower->patch_indices;
            std::erase_if(upper.patch_indices, [&](int i) {
                return std::find(taken.begin(), taken.end(), i) != taken.end();
            });
        }
        if (!upper.patch_indices.empty()) set.upper.push_back(std::move(upper));
    }
    return set;
}

std::vector<SelectionSet> build_epoch_set(std::span<const Slide> slides,
                                          std::span<const std::vector<int>> predictions,
                                          std::span<const std::vector<Vec4>> probs,
                                          const ConstraintMatrices& constraints,
                                          const ExecPolicy& policy) {
    if (predictions.size() != slides.size() || probs.size() != slides.size()) {
        throw ValidationError("selection", "per-slide predictions/probs misaligned with cohort");
    }
    std::vector<SelectionSet> sets(slides.size());
    parallel_for(static_cast<std::ptrdiff_t>(slides.size()), policy, [&](std::ptrdiff_t i) {
        sets[i] = select_for_slide(slides[i], predictions[i], probs[i], constraints);
    });
    return sets;
}

}  // namespace her2ws
