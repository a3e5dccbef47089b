#pragma once

#include <span>
#include <vector>

#include "her2ws/types.hpp"

namespace her2ws {

/// Linear-softmax patch classifier with SGD/Nesterov state. Weights are a
/// 4 x dim matrix stored row-major; momentum buffers mirror the shapes.
struct ClassifierParams {
    int dim = 0;
    std::vector<double> weights;
    Vec4 bias{};
    std::vector<double> weight_momentum;
    Vec4 bias_momentum{};
    double learning_rate = 1e-3;
    double momentum = 0.9;

    static ClassifierParams zeros(int dim, double learning_rate = 1e-3, double momentum = 0.9);

    double weight(int cls, int j) const { return weights[static_cast<size_t>(cls) * dim + j]; }
    double& weight(int cls, int j) { return weights[static_cast<size_t>(cls) * dim + j]; }

    bool operator==(const ClassifierParams&) const = default;
};

/// Reduced gradients for one optimizer step (same shapes as the parameters).
struct Gradients {
    std::vector<double> weights;
    Vec4 bias{};
};

struct Forward {
    Vec4 logits{};
    Vec4 probs{};
    int predicted = 0;
};

struct LossGrad {
    double loss = 0.0;
    Vec4 grad_logits{};
};

Vec4 softmax(const Vec4& logits);
Vec4 log_softmax(const Vec4& logits);

/// argmax with lowest-index tie-break.
int argmax_lowest(const Vec4& values);

/// logits = W x + b, probs = softmax(logits), predicted = argmax.
/// The class is taken from the logits; softmax is monotone so this equals
/// the probs argmax under the same tie-break.
Forward forward(const ClassifierParams& params, std::span<const double> features);

/// Pseudo-label: mass of the inadmissible classes is redistributed equally
/// over the admissible set G; components outside G are zeroed.
Vec4 pseudo_label(const Vec4& probs, ClassSet admissible);

/// Partial-label cross-entropy against the (detached) pseudo-label.
/// grad_logits is exactly -t for every class in G (t = sum of inadmissible
/// probability mass / |G|) and +p_k for classes outside G.
LossGrad partial_loss(const Vec4& logits, ClassSet admissible);

/// Cross-entropy against a one-hot target; grad_logits = p - onehot.
LossGrad ce_loss(const Vec4& logits, int target);

/// In-place Nesterov-momentum update: m = mu m + g, theta -= lr (g + mu m).
/// Rejects non-finite gradients.
void sgd_step(ClassifierParams& params, const Gradients& grads);

}  // namespace her2ws
