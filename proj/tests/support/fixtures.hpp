#pragma once

// Shared fixture builders for the unit suites.

#include <string>
#include <vector>

#include "her2ws/calibrate.hpp"
#include "her2ws/model.hpp"
#include "her2ws/types.hpp"

namespace fixtures {

// Slide whose normalized weights equal the given tumor fractions (they are
// normalized over the slide either way). Features default to zeros of dim 4.
inline her2ws::Slide make_slide(const std::string& id, int label,
                                const std::vector<double>& tumor_fractions, int dim = 4) {
    her2ws::Slide slide;
    slide.id = id;
    slide.label = label;
    for (size_t i = 0; i < tumor_fractions.size(); ++i) {
        her2ws::Patch p;
        p.id = id + "/p" + std::to_string(i);
        p.tumor_fraction = tumor_fractions[i];
        p.features.assign(dim, 0.0);
        slide.patches.push_back(std::move(p));
    }
    her2ws::finalize_weights(slide);
    return slide;
}

// Per-patch probability vectors that put `prob` on `cls` and spread the rest.
inline std::vector<her2ws::Vec4> probs_for(const std::vector<int>& predictions,
                                           const std::vector<double>& confidence) {
    std::vector<her2ws::Vec4> out(predictions.size());
    for (size_t i = 0; i < predictions.size(); ++i) {
        const double rest = (1.0 - confidence[i]) / 3.0;
        out[i] = {rest, rest, rest, rest};
        out[i][predictions[i]] = confidence[i];
    }
    return out;
}

// Identity-style classifier on dim >= 4: logit_c = scale * feature_c.
inline her2ws::ClassifierParams prototype_classifier(int dim, double scale = 4.0) {
    her2ws::ClassifierParams p = her2ws::ClassifierParams::zeros(dim);
    for (int c = 0; c < her2ws::kNumClasses; ++c) p.weight(c, c) = scale;
    return p;
}

// LogitsMatrix over a single pseudo-cohort: one entry per patch as
// (slide ordinal, logits, weight); slides carry the given labels.
struct MatrixBuilder {
    her2ws::LogitsMatrix m;
    int current_slide = -1;

    void slide(const std::string& id, int label) {
        m.slide_ids.push_back(id);
        m.slide_labels.push_back(label);
        const int begin = static_cast<int>(m.logits.size());
        m.slide_spans.emplace_back(begin, begin);
        ++current_slide;
    }
    void row(const her2ws::Vec4& logits, double weight) {
        m.logits.push_back(logits);
        m.weights.push_back(weight);
        m.row_slide.push_back(current_slide);
        m.patch_ids.push_back(m.slide_ids.back() + "/p" + std::to_string(m.logits.size()));
        m.slide_spans.back().second = static_cast<int>(m.logits.size());
    }
    her2ws::LogitsMatrix build() {
        m.validate();
        return m;
    }
};

}  // namespace fixtures
