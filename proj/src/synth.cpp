#include "her2ws/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "her2ws/guidelines.hpp"
#include "her2ws/rng.hpp"

namespace her2ws {

namespace {

constexpr int kMaxRejectionDraws = 10000;

std::string slide_name(int ordinal) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "slide-%04d", ordinal);
    return buf;
}

// Dirichlet draw restricted to a class subset; excluded classes get exactly 0.
Vec4 draw_composition(std::mt19937_64& engine, const Vec4& alpha, int max_class) {
    Vec4 comp{};
    double total = 0.0;
    for (int c = 0; c <= max_class; ++c) {
        std::gamma_distribution<double> gamma(alpha[c], 1.0);
        comp[c] = gamma(engine);
        total += comp[c];
    }
    for (int c = 0; c <= max_class; ++c) comp[c] /= total;
    return comp;
}

int pick_weighted(std::mt19937_64& engine, std::span<const double> weights) {
    std::discrete_distribution<int> dist(weights.begin(), weights.end());
    return dist(engine);
}

struct SlideDraw {
    Slide slide;
    int declared = 0;
};

SlideDraw generate_slide(const CohortSpec& spec,
                         const std::array<std::vector<double>, kNumClasses>& means, int ordinal,
                         int declared) {
    std::mt19937_64 engine = rng::make_engine(spec.seed, rng::kTagSlide, ordinal);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Heterogeneity needs a class two or more above the principal score, so
    // only classes 0 and 1 can carry the indicator.
    const bool heterogeneous = declared <= 1 && unit(engine) < spec.heterogeneous_rate;
    const int support_max = std::min(declared + 1, kNumClasses - 1);

    std::uniform_int_distribution<int> patch_count(spec.patches_per_slide.first,
                                                   spec.patches_per_slide.second);
    std::uniform_real_distribution<double> tumor(spec.tumor_fraction_range.first,
                                                 spec.tumor_fraction_range.second);
    std::normal_distribution<double> noise(0.0, spec.feature_sigma);

    for (int draw = 0; draw < kMaxRejectionDraws; ++draw) {
        Vec4 comp = draw_composition(engine, spec.composition_profiles[declared], support_max);
        if (heterogeneous) {
            // Inject a nonzero sub-threshold fraction of a class >= declared+2.
            std::array<double, kNumClasses> hw{};
            for (int h = declared + 2; h < kNumClasses; ++h) {
                hw[h] = spec.composition_profiles[declared][h];
            }
            const int h = pick_weighted(engine, hw);
            std::uniform_real_distribution<double> sub(0.005, 0.095);
            const double u = sub(engine);
            for (double& x : comp) x *= 1.0 - u;
            comp[h] = u;
        }
        const GuidelineVerdict at_draw = score_fractions(ClassFractionVector::from(comp));
        if (at_draw.principal != declared || at_draw.heterogeneous != heterogeneous) continue;

        const int n = patch_count(engine);
        std::vector<double> fractions(n);
        std::vector<int> classes(n);
        std::discrete_distribution<int> by_composition(comp.begin(), comp.end());
        Vec4 mass{};
        double mass_total = 0.0;
        for (int i = 0; i < n; ++i) {
            fractions[i] = tumor(engine);
            classes[i] = by_composition(engine);
            mass[classes[i]] += fractions[i];
            mass_total += fractions[i];
        }
        Vec4 realized{};
        for (int c = 0; c < kNumClasses; ++c) realized[c] = mass[c] / mass_total;
        const GuidelineVerdict verdict = score_fractions(ClassFractionVector::from(realized));
        if (verdict.principal != declared || verdict.heterogeneous != heterogeneous) continue;

        SlideDraw out;
        out.declared = declared;
        out.slide.id = slide_name(ordinal);
        out.slide.label = declared;
        out.slide.patches.resize(n);
        for (int i = 0; i < n; ++i) {
            Patch& p = out.slide.patches[i];
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%03d", i);
            p.id = out.slide.id + "/" + buf;
            p.tumor_fraction = fractions[i];
            p.true_class = classes[i];
            p.features.resize(spec.feature_dim);
            const std::vector<double>& mean = means[classes[i]];
            for (int j = 0; j < spec.feature_dim; ++j) p.features[j] = mean[j] + noise(engine);
        }
        finalize_weights(out.slide);
        return out;
    }
    throw ValidationError("synth", "slide " + slide_name(ordinal) + " (class " +
                                       std::to_string(declared) +
                                       "): rejection sampling exceeded " +
                                       std::to_string(kMaxRejectionDraws) +
                                       " draws; composition profile is incompatible with the "
                                       "declared class");
}

}  // namespace

void CohortSpec::validate() const {
    for (int c = 0; c < kNumClasses; ++c) {
        if (slides_per_class[c] < 0) throw ValidationError("synth", "negative slide count");
        for (double a : composition_profiles[c]) {
            if (!(a > 0.0)) throw ValidationError("synth", "Dirichlet parameters must be > 0");
        }
    }
    if (patches_per_slide.first < 1 || patches_per_slide.second < patches_per_slide.first) {
        throw ValidationError("synth", "invalid patches_per_slide range");
    }
    if (feature_dim < 1) throw ValidationError("synth", "feature_dim must be >= 1");
    if (!(feature_sigma > 0.0)) throw ValidationError("synth", "feature_sigma must be > 0");
    if (!(tumor_fraction_range.first > 0.0 && tumor_fraction_range.second <= 1.0 &&
          tumor_fraction_range.first <= tumor_fraction_range.second)) {
        throw ValidationError("synth", "tumor_fraction_range must be within (0,1]");
    }
    if (heterogeneous_rate < 0.0 || heterogeneous_rate > 1.0) {
        throw ValidationError("synth", "heterogeneous_rate must be in [0,1]");
    }
    if (class_means) {
        for (const auto& m : *class_means) {
            if (static_cast<int>(m.size()) != feature_dim) {
                throw ValidationError("synth", "class mean dimension != feature_dim");
            }
        }
    }
    if (rater_noise) {
        if (rater_count < 2) throw ValidationError("synth", "rater_count must be >= 2");
        for (const Vec4& row : *rater_noise) {
            double s = 0.0;
            for (double x : row) {
                if (x < 0.0) throw ValidationError("synth", "rater noise entries must be >= 0");
                s += x;
            }
            if (std::abs(s - 1.0) > 1e-9) {
                throw ValidationError("synth", "rater noise rows must sum to 1");
            }
        }
    }
}

std::array<std::vector<double>, kNumClasses> CohortSpec::resolved_means() const {
    if (class_means) return *class_means;
    std::array<std::vector<double>, kNumClasses> means;
    for (int c = 0; c < kNumClasses; ++c) {
        means[c].assign(feature_dim, 0.0);
        means[c][c % feature_dim] = mean_separation * feature_sigma;
    }
    return means;
}

GeneratedCohort generate_cohort(const CohortSpec& spec, const ExecPolicy& policy) {
    spec.validate();
    const auto means = spec.resolved_means();

    std::vector<int> declared;
    for (int c = 0; c < kNumClasses; ++c) {
        declared.insert(declared.end(), spec.slides_per_class[c], c);
    }

    GeneratedCohort out;
    out.slides.resize(declared.size());
    std::vector<std::string> errors(declared.size());
    parallel_for(static_cast<std::ptrdiff_t>(declared.size()), policy, [&](std::ptrdiff_t i) {
        try {
            out.slides[i] = generate_slide(spec, means, static_cast<int>(i), declared[i]).slide;
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    for (const std::string& e : errors) {
        if (!e.empty()) throw ValidationError("synth", e);
    }

    if (spec.rater_noise) {
        out.rater_labels.resize(spec.rater_count);
        for (int r = 0; r < spec.rater_count; ++r) {
            out.rater_labels[r].rater = "rater" + std::to_string(r);
            out.rater_labels[r].labels.resize(declared.size());
        }
        for (size_t i = 0; i < declared.size(); ++i) {
            const std::string& id = out.slides[i].id;
            out.rater_labels[0].labels[i] = {id, declared[i]};
            for (int r = 1; r < spec.rater_count; ++r) {
                std::mt19937_64 engine = rng::make_engine(spec.seed, rng::kTagRater + r, i);
                const Vec4& row = (*spec.rater_noise)[declared[i]];
                const int label = pick_weighted(engine, row);
                out.rater_labels[r].labels[i] = {id, label};
            }
            // The working label carries one corruption draw (rater 1's view).
            out.slides[i].label = out.rater_labels[1].labels[i].second;
        }
    }
    return out;
}

std::array<std::vector<Slide>, 3> split_cohort(std::span<const Slide> slides,
                                               std::array<double, 3> ratios, uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("split", "split ratios must sum to 1");
    }
    int parts = 0;
    for (double r : ratios) {
        if (r < 0.0) throw ValidationError("split", "split ratios must be >= 0");
        if (r > 0.0) ++parts;
    }

    std::array<std::vector<int>, kNumClasses> by_class;
    for (size_t i = 0; i < slides.size(); ++i) {
        require_class(slides[i].label, "slide label");
        by_class[slides[i].label].push_back(static_cast<int>(i));
    }

    std::array<std::vector<int>, 3> picked;
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<int>& members = by_class[c];
        if (members.empty()) continue;
        if (static_cast<int>(members.size()) < parts) {
            throw ValidationError("split", "class " + std::to_string(c) + " has " +
                                               std::to_string(members.size()) +
                                               " slides for " + std::to_string(parts) +
                                               " split parts");
        }
        std::mt19937_64 engine = rng::make_engine(seed, rng::kTagSplit, c);
        std::shuffle(members.begin(), members.end(), engine);

        // Largest-remainder apportionment; every nonzero part gets >= 1 slide.
        const int n = static_cast<int>(members.size());
        std::array<int, 3> count{};
        std::array<double, 3> remainder{};
        int assigned = 0;
        for (int p = 0; p < 3; ++p) {
            const double exact = ratios[p] * n;
            count[p] = static_cast<int>(exact);
            remainder[p] = exact - count[p];
            assigned += count[p];
        }
        while (assigned < n) {
            int best = 0;
            for (int p = 1; p < 3; ++p) {
                if (remainder[p] > remainder[best]) best = p;
            }
            ++count[best];
            remainder[best] = -1.0;
            ++assigned;
        }
        for (int p = 0; p < 3; ++p) {
            if (ratios[p] > 0.0 && count[p] == 0) {
                int donor = 0;
                for (int q = 1; q < 3; ++q) {
                    if (count[q] > count[donor]) donor = q;
                }
                --count[donor];
                ++count[p];
            }
        }
        int offset = 0;
        for (int p = 0; p < 3; ++p) {
            for (int k = 0; k < count[p]; ++k) picked[p].push_back(members[offset++]);
        }
    }

    std::array<std::vector<Slide>, 3> out;
    for (int p = 0; p < 3; ++p) {
        std::sort(picked[p].begin(), picked[p].end());
        out[p].reserve(picked[p].size());
        for (int idx : picked[p]) out[p].push_back(slides[idx]);
    }
    return out;
}

}  // namespace her2ws
