#include "her2ws/guidelines.hpp"

namespace her2ws {

ConstraintMatrices default_constraints() { return ConstraintMatrices{}; }

GuidelineVerdict score_fractions(const ClassFractionVector& fractions,
                                 const ConstraintMatrices& constraints) {
    GuidelineVerdict verdict;
    verdict.fractions = ClassFractionVector::from(fractions.v);

    int principal = 0;
    for (int c = kNumClasses - 1; c >= 1; --c) {
        if (verdict.fractions[c] >= constraints.lower[c][c]) {
            principal = c;
            break;
        }
    }
    verdict.principal = principal;

    // Rare heterogeneous pattern: a nonzero sub-threshold fraction two or
    // more classes above the principal score upgrades the recommendation.
    int h_max = -1;
    for (int h = principal + 2; h < kNumClasses; ++h) {
        const double f = verdict.fractions[h];
        if (f > 0.0 && f < constraints.upper[principal][h]) h_max = h;
    }
    verdict.heterogeneous = h_max >= 0;
    verdict.recommended = verdict.heterogeneous ? h_max - 1 : principal;
    return verdict;
}

SlideViolations broken_constraints(const ClassFractionVector& fractions, int label,
                                   const ConstraintMatrices& constraints) {
    require_class(label, "label");
    const ClassFractionVector v = ClassFractionVector::from(fractions.v);

    SlideViolations out;
    for (int c = label + 1; c < kNumClasses; ++c) {
        const double bound = constraints.upper[label][c];
        if (v[c] >= bound) {
            out.upper.push_back(UpperViolation{c, v[c] - bound});
        }
    }
    const double floor = constraints.lower[label][label];
    if (v[label] < floor) {
        out.lower = LowerViolation{floor - v[label]};
    }
    return out;
}

}  // namespace her2ws
