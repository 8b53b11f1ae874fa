#pragma once

// Reverse-mode differentiation for the fixed two-hidden-layer MLP used by
// every learned model. Batches are column-major: one sample per column.
//
// Besides the usual value/parameter/input gradients, a forward tangent can be
// recorded alongside the values. Reversing through the tangent gives
// d<grad_x f(x), v>/d(params), which the barrier loss needs for its
// Lie-derivative term.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ncbf/error.hpp"
#include "ncbf/rng.hpp"

namespace ncbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { Tanh, Identity };

inline constexpr std::size_t kLayerCount = 3;

struct MlpParams {
    std::array<MatrixXd, kLayerCount> weights;
    std::array<VectorXd, kLayerCount> biases;
    Activation hidden = Activation::Tanh;

    Index input_dim() const { return weights[0].cols(); }
    Index width() const { return weights[0].rows(); }
    Index output_dim() const { return weights[2].rows(); }

    static MlpParams zeros(Index input_dim, Index width, Index output_dim,
                           Activation hidden = Activation::Tanh) {
        MlpParams p;
        p.hidden = hidden;
        p.weights[0] = MatrixXd::Zero(width, input_dim);
        p.weights[1] = MatrixXd::Zero(width, width);
        p.weights[2] = MatrixXd::Zero(output_dim, width);
        p.biases[0] = VectorXd::Zero(width);
        p.biases[1] = VectorXd::Zero(width);
        p.biases[2] = VectorXd::Zero(output_dim);
        return p;
    }

    /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    /// Consumes the generator layer by layer, weights row-major then biases.
    static MlpParams uniform_init(Index input_dim, Index width, Index output_dim, Rng& rng) {
        MlpParams p = zeros(input_dim, width, output_dim);
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.weights[l].cols()));
            for (Index r = 0; r < p.weights[l].rows(); ++r)
                for (Index c = 0; c < p.weights[l].cols(); ++c)
                    p.weights[l](r, c) = rng.uniform(-bound, bound);
            for (Index r = 0; r < p.biases[l].size(); ++r) p.biases[l](r) = rng.uniform(-bound, bound);
        }
        return p;
    }

    MlpParams zeros_like() const { return zeros(input_dim(), width(), output_dim(), hidden); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < kLayerCount; ++l)
            n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
        return n;
    }

    /// Checks the layer chain and finiteness; throws ConfigError.
    void validate() const {
        if (input_dim() < 1 || width() < 1 || output_dim() < 1)
            throw ConfigError("mlp: empty layer");
        if (weights[1].rows() != width() || weights[1].cols() != width() ||
            weights[2].cols() != width())
            throw ConfigError("mlp: hidden widths must match");
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            if (biases[l].size() != weights[l].rows())
                throw ConfigError("mlp: bias " + std::to_string(l) + " does not match its layer");
            if (!weights[l].allFinite() || !biases[l].allFinite())
                throw ConfigError("mlp: non-finite parameter in layer " + std::to_string(l));
        }
    }

    // Flat view, layer order W0 b0 W1 b1 W2 b2, weights row-major.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            for (Index r = 0; r < weights[l].rows(); ++r)
                for (Index c = 0; c < weights[l].cols(); ++c) out.push_back(weights[l](r, c));
            for (Index r = 0; r < biases[l].size(); ++r) out.push_back(biases[l](r));
        }
        return out;
    }

    void assign_flat(const std::vector<double>& flat) {
        if (flat.size() != parameter_count()) throw ConfigError("mlp: flat parameter size mismatch");
        std::size_t k = 0;
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            for (Index r = 0; r < weights[l].rows(); ++r)
                for (Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = flat[k++];
            for (Index r = 0; r < biases[l].size(); ++r) biases[l](r) = flat[k++];
        }
    }

    MlpParams& operator+=(const MlpParams& o) {
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            weights[l] += o.weights[l];
            biases[l] += o.biases[l];
        }
        return *this;
    }

    MlpParams& operator*=(double s) {
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            weights[l] *= s;
            biases[l] *= s;
        }
        return *this;
    }

    bool all_finite() const {
        for (std::size_t l = 0; l < kLayerCount; ++l)
            if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
        return true;
    }

    friend bool operator==(const MlpParams& a, const MlpParams& b) {
        if (a.hidden != b.hidden) return false;
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            if (a.weights[l].rows() != b.weights[l].rows() || a.weights[l].cols() != b.weights[l].cols() ||
                a.biases[l].size() != b.biases[l].size())
                return false;
            if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
        }
        return true;
    }
};

namespace detail {

inline MatrixXd activate(const MatrixXd& z, Activation a) {
    return a == Activation::Tanh ? MatrixXd(z.array().tanh()) : z;
}

// act'(z), expressed through h = act(z)
inline MatrixXd activation_slope(const MatrixXd& h, Activation a) {
    if (a == Activation::Identity) return MatrixXd::Ones(h.rows(), h.cols());
    return (1.0 - h.array().square()).matrix();
}

// act''(z) = -2 h (1 - h^2) for tanh
inline MatrixXd activation_curvature(const MatrixXd& h, Activation a) {
    if (a == Activation::Identity) return MatrixXd::Zero(h.rows(), h.cols());
    return (-2.0 * h.array() * (1.0 - h.array().square())).matrix();
}

inline MatrixXd affine(const MatrixXd& w, const VectorXd& b, const MatrixXd& x) {
    MatrixXd z = w * x;
    z.colwise() += b;
    return z;
}

}  // namespace detail

/// Cached intermediates of one batched forward pass. When a tangent was
/// recorded, the d* members hold the forward-mode derivative along
/// `direction`, so `doutput` column j is J(x_j) * v_j.
struct Tape {
    MatrixXd input, z1, h1, z2, h2, output;
    MatrixXd direction, dz1, dh1, dz2, dh2, doutput;

    Index batch_size() const { return input.cols(); }
    bool has_tangent() const { return direction.size() > 0; }
};

inline void check_input(const MlpParams& p, const MatrixXd& inputs) {
    if (inputs.rows() != p.input_dim())
        throw ConfigError("mlp: input dimension " + std::to_string(inputs.rows()) + " does not match " +
                          std::to_string(p.input_dim()));
}

inline Tape record(const MlpParams& p, const MatrixXd& inputs) {
    check_input(p, inputs);
    Tape t;
    t.input = inputs;
    t.z1 = detail::affine(p.weights[0], p.biases[0], inputs);
    t.h1 = detail::activate(t.z1, p.hidden);
    t.z2 = detail::affine(p.weights[1], p.biases[1], t.h1);
    t.h2 = detail::activate(t.z2, p.hidden);
    t.output = detail::affine(p.weights[2], p.biases[2], t.h2);
    return t;
}

/// Forward pass plus the tangent along `directions` (same shape as inputs).
inline Tape record_with_tangent(const MlpParams& p, const MatrixXd& inputs, const MatrixXd& directions) {
    if (directions.rows() != inputs.rows() || directions.cols() != inputs.cols())
        throw ConfigError("mlp: tangent directions must match the input batch shape");
    Tape t = record(p, inputs);
    t.direction = directions;
    t.dz1 = p.weights[0] * directions;
    t.dh1 = detail::activation_slope(t.h1, p.hidden).cwiseProduct(t.dz1);
    t.dz2 = p.weights[1] * t.dh1;
    t.dh2 = detail::activation_slope(t.h2, p.hidden).cwiseProduct(t.dz2);
    t.doutput = p.weights[2] * t.dh2;
    return t;
}

inline MatrixXd mlp_forward(const MlpParams& p, const MatrixXd& inputs) {
    check_input(p, inputs);
    MatrixXd h = detail::activate(detail::affine(p.weights[0], p.biases[0], inputs), p.hidden);
    h = detail::activate(detail::affine(p.weights[1], p.biases[1], h), p.hidden);
    return detail::affine(p.weights[2], p.biases[2], h);
}

inline VectorXd mlp_forward(const MlpParams& p, const VectorXd& input) {
    return mlp_forward(p, MatrixXd(input)).col(0);
}

/// Result of one reverse sweep. `params` is summed over the batch.
struct Adjoints {
    MlpParams params;
    MatrixXd input;      // d/d(input), per column
    MatrixXd direction;  // d/d(direction), per column; empty without tangent
};

/// Reverse sweep for the scalar objective
///   sum_j <value_seed_j, output_j> + <tangent_seed_j, doutput_j>.
/// `tangent_seed` may be empty when no tangent objective is wanted.
inline Adjoints reverse(const MlpParams& p, const Tape& t, const MatrixXd& value_seed,
                        const MatrixXd& tangent_seed = MatrixXd()) {
    const Index n = t.batch_size();
    if (value_seed.rows() != p.output_dim() || value_seed.cols() != n)
        throw ContractError("mlp reverse: value seed shape mismatch");
    const bool tangent = tangent_seed.size() > 0;
    if (tangent && (!t.has_tangent() || tangent_seed.rows() != p.output_dim() || tangent_seed.cols() != n))
        throw ContractError("mlp reverse: tangent seed requires a matching tangent tape");

    Adjoints adj;
    adj.params = p.zeros_like();
    MlpParams& g = adj.params;

    const MatrixXd s2 = detail::activation_slope(t.h2, p.hidden);
    const MatrixXd s1 = detail::activation_slope(t.h1, p.hidden);

    // output layer
    g.weights[2].noalias() = value_seed * t.h2.transpose();
    g.biases[2] = value_seed.rowwise().sum();
    MatrixXd h2_bar = p.weights[2].transpose() * value_seed;
    MatrixXd dh2_bar;
    if (tangent) {
        g.weights[2].noalias() += tangent_seed * t.dh2.transpose();
        dh2_bar = p.weights[2].transpose() * tangent_seed;
    }

    // second hidden layer
    MatrixXd z2_bar = s2.cwiseProduct(h2_bar);
    MatrixXd dz2_bar;
    if (tangent) {
        dz2_bar = s2.cwiseProduct(dh2_bar);
        z2_bar += detail::activation_curvature(t.h2, p.hidden).cwiseProduct(t.dz2).cwiseProduct(dh2_bar);
    }
    g.weights[1].noalias() = z2_bar * t.h1.transpose();
    g.biases[1] = z2_bar.rowwise().sum();
    MatrixXd h1_bar = p.weights[1].transpose() * z2_bar;
    MatrixXd dh1_bar;
    if (tangent) {
        g.weights[1].noalias() += dz2_bar * t.dh1.transpose();
        dh1_bar = p.weights[1].transpose() * dz2_bar;
    }

    // first hidden layer
    MatrixXd z1_bar = s1.cwiseProduct(h1_bar);
    MatrixXd dz1_bar;
    if (tangent) {
        dz1_bar = s1.cwiseProduct(dh1_bar);
        z1_bar += detail::activation_curvature(t.h1, p.hidden).cwiseProduct(t.dz1).cwiseProduct(dh1_bar);
    }
    g.weights[0].noalias() = z1_bar * t.input.transpose();
    g.biases[0] = z1_bar.rowwise().sum();
    adj.input = p.weights[0].transpose() * z1_bar;
    if (tangent) {
        g.weights[0].noalias() += dz1_bar * t.direction.transpose();
        adj.direction = p.weights[0].transpose() * dz1_bar;
    }
    return adj;
}

/// d(seed . output)/d(params) at a single input.
inline MlpParams param_gradient(const MlpParams& p, const VectorXd& input, const VectorXd& seed) {
    const Tape t = record(p, MatrixXd(input));
    return reverse(p, t, MatrixXd(seed)).params;
}

inline void require_scalar(const MlpParams& p) {
    if (p.output_dim() != 1) throw ContractError("mlp: operation requires a scalar-output network");
}

/// Gradient of a scalar network wrt its input.
inline VectorXd input_gradient(const MlpParams& p, const VectorXd& input) {
    require_scalar(p);
    const Tape t = record(p, MatrixXd(input));
    return reverse(p, t, MatrixXd::Ones(1, 1)).input.col(0);
}

/// Batched input gradients of a scalar network, one column per sample.
inline MatrixXd input_gradients(const MlpParams& p, const MatrixXd& inputs) {
    require_scalar(p);
    const Tape t = record(p, inputs);
    return reverse(p, t, MatrixXd::Ones(1, inputs.cols())).input;
}

/// d<grad_x f(x), v>/d(params) for a scalar network f.
inline MlpParams mixed_second_gradient(const MlpParams& p, const VectorXd& input, const VectorXd& v) {
    require_scalar(p);
    if (v.size() != input.size()) throw ConfigError("mlp: direction must have the input dimension");
    const Tape t = record_with_tangent(p, MatrixXd(input), MatrixXd(v));
    return reverse(p, t, MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1)).params;
}

}  // namespace ncbf
