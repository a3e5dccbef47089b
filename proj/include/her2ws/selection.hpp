#pragma once

#include <optional>
#include <span>
#include <vector>

#include "her2ws/parallel.hpp"
#include "her2ws/types.hpp"

namespace her2ws {

/// Patches selected for one violated upper constraint: the minimal prefix of
/// the c-predicted patches (sorted ascending by p_c) whose cumulative
/// normalized weight covers the excess. They train with the partial-label
/// loss over admissible = all classes but c.
struct UpperSelection {
    int cls = 0;
    ClassSet admissible;
    std::vector<int> patch_indices;
    int cutoff = -1;  // index of the last selected patch in the sorted order
};

/// Patches selected for a broken lower constraint: the minimal suffix of the
/// neighbor-predicted patches (sorted ascending by p_Y) covering the deficit.
/// They train with plain cross-entropy toward the slide label.
struct LowerSelection {
    int target = 0;
    std::vector<int> patch_indices;
    int cutoff = -1;  // first selected index in the sorted order
};

struct SelectionSet {
    std::vector<UpperSelection> upper;
    std::optional<LowerSelection> lower;

    size_t total() const {
        size_t n = lower ? lower->patch_indices.size() : 0;
        for (const auto& u : upper) n += u.patch_indices.size();
        return n;
    }
    bool empty() const { return total() == 0; }
};

/// V_c = sum of normalized weights over patches predicted as class c.
ClassFractionVector compute_fractions(const Slide& slide, std::span<const int> predictions);

UpperSelection select_upper(const Slide& slide, std::span<const int> predictions,
                            std::span<const Vec4> probs, const UpperViolation& violation);

/// Neighbor pool is {Y-1, Y+1} clipped to the valid classes. If the pool
/// carries less weight than the deficit the whole pool is returned.
LowerSelection select_lower(const Slide& slide, std::span<const int> predictions,
                            std::span<const Vec4> probs, const LowerViolation& violation,
                            int label);

/// Violations -> selections for one slide, with lower-selection priority on
/// overlap (a patch picked for the hard CE target is dropped from any upper
/// list).
SelectionSet select_for_slide(const Slide& slide, std::span<const int> predictions,
                              std::span<const Vec4> probs, const ConstraintMatrices& constraints);

/// Per-slide selection over the cohort; slides are independent and the
/// result vector is assembled in slide order.
std::vector<SelectionSet> build_epoch_set(std::span<const Slide> slides,
                                          std::span<const std::vector<int>> predictions,
                                          std::span<const std::vector<Vec4>> probs,
                                          const ConstraintMatrices& constraints,
                                          const ExecPolicy& policy = {});

}  // namespace her2ws
