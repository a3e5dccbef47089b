#pragma once

#include "her2ws/types.hpp"

namespace her2ws {

/// The published threshold matrices: L diagonal (0.7, 0.1, 0.1, 0.1),
/// U = 0.1 strictly above the diagonal.
ConstraintMatrices default_constraints();

/// Slide-level verdict for a class-fraction vector.
///
/// principal is the highest class c in {3,2,1} with V_c >= L[c][c], else 0.
/// The heterogeneous flag fires when some class h >= principal+2 holds a
/// nonzero fraction below U[principal][h]; the recommendation is then
/// upgraded to h_max - 1. Boundary semantics: V_c exactly at a lower
/// threshold satisfies it (>=), exactly at an upper threshold violates it.
GuidelineVerdict score_fractions(const ClassFractionVector& fractions,
                                 const ConstraintMatrices& constraints = {});

/// Constraint violations of V against slide label Y: one UpperViolation per
/// class c > Y with V_c >= U[Y][c], plus a LowerViolation when V_Y < L[Y][Y].
/// An empty result means the prediction is guideline-consistent with Y.
SlideViolations broken_constraints(const ClassFractionVector& fractions, int label,
                                   const ConstraintMatrices& constraints = {});

}  // namespace her2ws
