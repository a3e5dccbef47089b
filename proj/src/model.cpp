#include "her2ws/model.hpp"

#include <algorithm>
#include <cmath>

namespace her2ws {

ClassifierParams ClassifierParams::zeros(int dim, double learning_rate, double momentum) {
    ClassifierParams p;
    p.dim = dim;
    p.weights.assign(static_cast<size_t>(kNumClasses) * dim, 0.0);
    p.weight_momentum.assign(static_cast<size_t>(kNumClasses) * dim, 0.0);
    p.learning_rate = learning_rate;
    p.momentum = momentum;
    return p;
}

Vec4 softmax(const Vec4& logits) {
    const double m = std::max({logits[0], logits[1], logits[2], logits[3]});
    Vec4 e{};
    double s = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        e[c] = std::exp(logits[c] - m);
        s += e[c];
    }
    for (double& x : e) x /= s;
    return e;
}

Vec4 log_softmax(const Vec4& logits) {
    const double m = std::max({logits[0], logits[1], logits[2], logits[3]});
    double s = 0.0;
    for (int c = 0; c < kNumClasses; ++c) s += std::exp(logits[c] - m);
    const double lse = m + std::log(s);
    Vec4 out{};
    for (int c = 0; c < kNumClasses; ++c) out[c] = logits[c] - lse;
    return out;
}

int argmax_lowest(const Vec4& values) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c) {
        if (values[c] > values[best]) best = c;
    }
    return best;
}

Forward forward(const ClassifierParams& params, std::span<const double> features) {
    if (static_cast<int>(features.size()) != params.dim) {
        throw ValidationError("model", "feature dimension " + std::to_string(features.size()) +
                                           " != configured " + std::to_string(params.dim));
    }
    Forward out;
    for (int c = 0; c < kNumClasses; ++c) {
        double z = params.bias[c];
        const double* row = params.weights.data() + static_cast<size_t>(c) * params.dim;
        for (int j = 0; j < params.dim; ++j) z += row[j] * features[j];
        out.logits[c] = z;
    }
    out.probs = softmax(out.logits);
    out.predicted = argmax_lowest(out.logits);
    return out;
}

namespace {

// Mass of the inadmissible classes split equally over G.
double redistribution(const Vec4& probs, ClassSet admissible) {
    double outside = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        if (!admissible.contains(c)) outside += probs[c];
    }
    return outside / admissible.size();
}

}  // namespace

Vec4 pseudo_label(const Vec4& probs, ClassSet admissible) {
    if (admissible.empty()) {
        throw ValidationError("model", "admissible class set is empty");
    }
    const double t = redistribution(probs, admissible);
    Vec4 out{};
    for (int c = 0; c < kNumClasses; ++c) {
        out[c] = admissible.contains(c) ? probs[c] + t : 0.0;
    }
    return out;
}

LossGrad partial_loss(const Vec4& logits, ClassSet admissible) {
    if (admissible.empty()) {
        throw ValidationError("model", "admissible class set is empty");
    }
    const Vec4 probs = softmax(logits);
    const Vec4 logp = log_softmax(logits);
    const double t = redistribution(probs, admissible);

    LossGrad out;
    for (int c = 0; c < kNumClasses; ++c) {
        if (admissible.contains(c)) {
            out.loss -= (probs[c] + t) * logp[c];
            out.grad_logits[c] = -t;  // identical across G: gradient neutrality
        } else {
            out.grad_logits[c] = probs[c];
        }
    }
    return out;
}

LossGrad ce_loss(const Vec4& logits, int target) {
    require_class(target, "ce target");
    const Vec4 probs = softmax(logits);
    const Vec4 logp = log_softmax(logits);
    LossGrad out;
    out.loss = -logp[target];
    out.grad_logits = probs;
    out.grad_logits[target] -= 1.0;
    return out;
}

void sgd_step(ClassifierParams& params, const Gradients& grads) {
    if (grads.weights.size() != params.weights.size()) {
        throw ValidationError("model", "gradient shape mismatch");
    }
    for (double g : grads.weights) {
        if (!std::isfinite(g)) throw ValidationError("model", "non-finite weight gradient");
    }
    for (double g : grads.bias) {
        if (!std::isfinite(g)) throw ValidationError("model", "non-finite bias gradient");
    }
    const double mu = params.momentum;
    const double lr = params.learning_rate;
    for (size_t i = 0; i < params.weights.size(); ++i) {
        double& m = params.weight_momentum[i];
        m = mu * m + grads.weights[i];
        params.weights[i] -= lr * (grads.weights[i] + mu * m);
    }
    for (int c = 0; c < kNumClasses; ++c) {
        double& m = params.bias_momentum[c];
        m = mu * m + grads.bias[c];
        params.bias[c] -= lr * (grads.bias[c] + mu * m);
    }
}

}  // namespace her2ws
