#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "her2ws/parallel.hpp"
#include "her2ws/types.hpp"

namespace her2ws {

/// Specification of a synthetic cohort with ground-truth patch classes.
///
/// Per-slide compositions are drawn from the class's Dirichlet profile and
/// rejection-sampled until the realized (tumor-weighted) composition scores
/// to the declared class and matches the drawn heterogeneity indicator.
/// Features are isotropic Gaussians around per-class means; by default the
/// means sit at mean_separation * sigma along 4 orthogonal axes.
struct CohortSpec {
    std::array<int, kNumClasses> slides_per_class{50, 50, 50, 50};
    std::pair<int, int> patches_per_slide{30, 60};
    int feature_dim = 8;
    double feature_sigma = 1.0;
    double mean_separation = 4.0;
    std::optional<std::array<std::vector<double>, kNumClasses>> class_means;
    std::array<Vec4, kNumClasses> composition_profiles{
        Vec4{30.0, 2.0, 1.0, 0.3},
        Vec4{10.0, 10.0, 0.5, 0.2},
        Vec4{6.0, 6.0, 8.0, 0.2},
        Vec4{2.0, 2.0, 4.0, 12.0},
    };
    std::pair<double, double> tumor_fraction_range{0.15, 1.0};
    double heterogeneous_rate = 0.0;
    std::optional<std::array<Vec4, kNumClasses>> rater_noise;  // row-stochastic
    int rater_count = 2;
    uint64_t seed = 0;

    void validate() const;
    std::array<std::vector<double>, kNumClasses> resolved_means() const;
};

struct RaterLabels {
    std::string rater;
    std::vector<std::pair<std::string, int>> labels;  // slide id -> score
};

/// Slides plus, when rater noise is configured, one label file per simulated
/// rater. Rater 0 reports the declared classes; each further rater is an
/// independent corruption by the noise matrix. The slides' working labels
/// are rater 1's draws when noise is active, the declared classes otherwise.
struct GeneratedCohort {
    std::vector<Slide> slides;
    std::vector<RaterLabels> rater_labels;
};

GeneratedCohort generate_cohort(const CohortSpec& spec, const ExecPolicy& policy = {});

/// Stratified slide-level split, deterministic for a fixed seed. Each class
/// must have at least as many slides as there are nonzero ratio parts.
std::array<std::vector<Slide>, 3> split_cohort(std::span<const Slide> slides,
                                               std::array<double, 3> ratios, uint64_t seed);

}  // namespace her2ws
