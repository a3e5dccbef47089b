#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace her2ws {

inline constexpr int kNumClasses = 4;

using Vec4 = std::array<double, 4>;

/// Error with a pipeline stage attached; the CLI maps these to structured
/// {stage, message} objects. ValidationError -> exit 1, IoError -> exit 2.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& message)
        : std::runtime_error(message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Small set over the 4 HER2 classes, used for partial-label admissible sets.
struct ClassSet {
    uint8_t bits = 0;

    static ClassSet all() { return ClassSet{0b1111}; }
    static ClassSet all_except(int c) { return ClassSet{static_cast<uint8_t>(0b1111 & ~(1u << c))}; }
    static ClassSet single(int c) { return ClassSet{static_cast<uint8_t>(1u << c)}; }

    bool contains(int c) const { return (bits >> c) & 1u; }
    void add(int c) { bits |= static_cast<uint8_t>(1u << c); }
    int size() const {
        int n = 0;
        for (int c = 0; c < kNumClasses; ++c) n += contains(c);
        return n;
    }
    bool empty() const { return bits == 0; }
    bool operator==(const ClassSet&) const = default;
};

/// Per-slide tumor-surface fractions over the 4 HER2 classes.
/// Components lie in [0,1] and sum to 1 within 1e-9; tiny floating-point
/// negatives (>= -1e-9) are clamped to 0 on construction.
struct ClassFractionVector {
    Vec4 v{};

    static ClassFractionVector from(Vec4 raw);

    double operator[](int c) const { return v[c]; }
    double sum() const { return v[0] + v[1] + v[2] + v[3]; }
};

inline constexpr double kFractionSumTolerance = 1e-9;
inline constexpr double kNegativeClampTolerance = 1e-9;

/// Lower/upper guideline threshold matrices. Default construction yields the
/// published values: L diagonal (0.7, 0.1, 0.1, 0.1), U = 0.1 strictly above
/// the diagonal, zeros elsewhere.
struct ConstraintMatrices {
    std::array<Vec4, kNumClasses> lower{};
    std::array<Vec4, kNumClasses> upper{};

    ConstraintMatrices() {
        lower[0][0] = 0.7;
        for (int c = 1; c < kNumClasses; ++c) lower[c][c] = 0.1;
        for (int r = 0; r < kNumClasses; ++r)
            for (int c = r + 1; c < kNumClasses; ++c) upper[r][c] = 0.1;
    }
};

struct GuidelineVerdict {
    int principal = 0;
    bool heterogeneous = false;
    int recommended = 0;
    ClassFractionVector fractions;
};

struct UpperViolation {
    int cls = 0;       // over-represented class c (> slide label)
    double excess = 0; // V_c - U[Y][c]
};

struct LowerViolation {
    double deficit = 0; // L[Y][Y] - V_Y
};

struct SlideViolations {
    std::vector<UpperViolation> upper;
    std::optional<LowerViolation> lower;

    bool consistent() const { return upper.empty() && !lower.has_value(); }
};

/// Abstract patch: a feature vector plus its share of tumor pixels.
/// true_class is synthetic ground truth, consumed by evaluation only.
struct Patch {
    std::string id;
    std::vector<double> features;
    double tumor_fraction = 0.0;
    std::optional<int> true_class;
};

/// A labeled bag of patches. normalized_weights are the per-patch tumor
/// fractions rescaled to sum to 1 over the slide.
struct Slide {
    std::string id;
    int label = 0;
    std::vector<Patch> patches;
    std::vector<double> normalized_weights;
};

/// Recompute normalized_weights from the patches' tumor fractions.
/// Fails if the slide has no patches or zero total tumor surface.
void finalize_weights(Slide& slide);

/// Check the Slide invariants (>= 1 patch, weights sum to 1 within 1e-9,
/// label and tumor fractions in range, consistent feature dimension).
void validate_slide(const Slide& slide, int expected_dim = -1);

void require_class(int c, const char* what);

}  // namespace her2ws
