#pragma once

#include <cmath>

#include "ncbf/diffcore.hpp"

namespace ncbf {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive-moment descent over an MlpParams-shaped parameter block.
class Adam {
public:
    Adam() = default;
    Adam(const MlpParams& shape, AdamConfig cfg)
        : cfg_(cfg), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

    void step(MlpParams& params, const MlpParams& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const double lr = cfg_.learning_rate * std::sqrt(c2) / c1;
        auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            p.array() -= lr * m.array() / (v.array().sqrt() + cfg_.epsilon * std::sqrt(c2));
        };
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            update(params.weights[l], grad.weights[l], m_.weights[l], v_.weights[l]);
            update(params.biases[l], grad.biases[l], m_.biases[l], v_.biases[l]);
        }
    }

    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    MlpParams m_, v_;
    long t_ = 0;
};

}  // namespace ncbf
