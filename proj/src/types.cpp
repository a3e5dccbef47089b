#include "her2ws/types.hpp"

#include <cmath>

namespace her2ws {

ClassFractionVector ClassFractionVector::from(Vec4 raw) {
    for (double& x : raw) {
        if (x < 0.0 && x >= -kNegativeClampTolerance) x = 0.0;
        if (x > 1.0 && x <= 1.0 + kNegativeClampTolerance) x = 1.0;
    }
    for (int c = 0; c < kNumClasses; ++c) {
        if (!(raw[c] >= 0.0 && raw[c] <= 1.0)) {
            throw ValidationError("fractions", "fraction component " + std::to_string(c) +
                                                   " out of [0,1]: " + std::to_string(raw[c]));
        }
    }
    const double s = raw[0] + raw[1] + raw[2] + raw[3];
    if (std::abs(s - 1.0) > kFractionSumTolerance) {
        throw ValidationError("fractions", "fractions sum to " + std::to_string(s) + ", expected 1");
    }
    return ClassFractionVector{raw};
}

void finalize_weights(Slide& slide) {
    if (slide.patches.empty()) {
        throw ValidationError("slide", "slide '" + slide.id + "' has no patches");
    }
    double total = 0.0;
    for (const Patch& p : slide.patches) total += p.tumor_fraction;
    if (!(total > 0.0)) {
        throw ValidationError("slide", "slide '" + slide.id + "' has zero total tumor surface");
    }
    slide.normalized_weights.resize(slide.patches.size());
    for (size_t i = 0; i < slide.patches.size(); ++i) {
        slide.normalized_weights[i] = slide.patches[i].tumor_fraction / total;
    }
}

void validate_slide(const Slide& slide, int expected_dim) {
    if (slide.patches.empty()) {
        throw ValidationError("slide", "slide '" + slide.id + "' has no patches");
    }
    require_class(slide.label, "slide label");
    if (slide.normalized_weights.size() != slide.patches.size()) {
        throw ValidationError("slide", "slide '" + slide.id + "' weights/patches length mismatch");
    }
    double s = 0.0;
    for (double w : slide.normalized_weights) s += w;
    if (std::abs(s - 1.0) > kFractionSumTolerance) {
        throw ValidationError("slide", "slide '" + slide.id + "' weights sum to " + std::to_string(s));
    }
    const size_t dim = expected_dim >= 0 ? static_cast<size_t>(expected_dim)
                                         : slide.patches.front().features.size();
    for (const Patch& p : slide.patches) {
        if (p.features.size() != dim) {
            throw ValidationError("slide", "patch '" + p.id + "' feature dimension " +
                                               std::to_string(p.features.size()) + " != " +
                                               std::to_string(dim));
        }
        if (!(p.tumor_fraction >= 0.0 && p.tumor_fraction <= 1.0)) {
            throw ValidationError("slide", "patch '" + p.id + "' tumor fraction out of [0,1]");
        }
        if (p.true_class.has_value()) require_class(*p.true_class, "patch true class");
    }
}

void require_class(int c, const char* what) {
    if (c < 0 || c >= kNumClasses) {
        throw ValidationError("class", std::string(what) + " out of range: " + std::to_string(c));
    }
}

}  // namespace her2ws
