#include <gtest/gtest.h>

#include "ncbf/adam.hpp"
#include "ncbf/diffcore.hpp"
#include "oracles.hpp"

using namespace ncbf;
using ncbf::testing::fd_gradient;
using ncbf::testing::relative_error;

namespace {

MlpParams ones_1_1_1() {
    MlpParams p = MlpParams::zeros(1, 1, 1);
    for (auto& w : p.weights) w.setOnes();
    return p;
}

MlpParams random_net(Index in, Index width, Index out, std::uint64_t seed, Activation a = Activation::Tanh) {
    Rng rng(seed);
    MlpParams p = MlpParams::uniform_init(in, width, out, rng);
    p.hidden = a;
    // larger weights so the curvature terms matter
    p *= 1.7;
    return p;
}

VectorXd random_vector(Index n, std::uint64_t seed) {
    Rng rng(seed);
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
    return v;
}

std::vector<double> flat(const MlpParams& p) { return p.flatten(); }

}  // namespace

TEST(MlpForward, ZeroNetworkGivesZero) {
    const MlpParams p = MlpParams::zeros(5, 8, 1);
    EXPECT_EQ(mlp_forward(p, random_vector(5, 1))(0), 0.0);
}

TEST(MlpForward, UnitChainAtZero) { EXPECT_EQ(mlp_forward(ones_1_1_1(), VectorXd(VectorXd::Zero(1)))(0), 0.0); }

TEST(MlpForward, UnitChainAtOne) {
    // output layer is linear: w2 * tanh(tanh(1))
    const double expected = std::tanh(std::tanh(1.0));
    EXPECT_NEAR(mlp_forward(ones_1_1_1(), VectorXd(VectorXd::Ones(1)))(0), expected, 1e-15);
    EXPECT_NEAR(expected, 0.642015, 1e-6);
}

TEST(MlpForward, DimensionMismatchIsConfigError) {
    const MlpParams p = MlpParams::zeros(5, 8, 1);
    EXPECT_THROW(mlp_forward(p, VectorXd(VectorXd::Zero(4))), ConfigError);
}

TEST(MlpForward, BatchMatchesSingleColumns) {
    const MlpParams p = random_net(5, 8, 2, 3);
    MatrixXd x(5, 4);
    for (Index j = 0; j < 4; ++j) x.col(j) = random_vector(5, 10 + j);
    const MatrixXd y = mlp_forward(p, x);
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(y.col(j), mlp_forward(p, VectorXd(x.col(j))));
}

TEST(MlpForward, TapeReplayIsBitExact) {
    const MlpParams p = random_net(5, 8, 1, 4);
    const MatrixXd x = random_vector(5, 5);
    const Tape t = record(p, x);
    EXPECT_EQ(t.output, mlp_forward(p, x));
    EXPECT_EQ(record(p, x).output, t.output);
}

TEST(ParamGradient, ZeroInputZeroBiasesGivesZeroFirstLayer) {
    MlpParams p = random_net(5, 8, 1, 6);
    for (auto& b : p.biases) b.setZero();
    const MlpParams g = param_gradient(p, VectorXd::Zero(5), VectorXd::Ones(1));
    EXPECT_EQ(g.weights[0].norm(), 0.0);
}

TEST(ParamGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MlpParams p = random_net(5, 8, 2, seed);
        const VectorXd x = random_vector(5, 100 + seed);
        const VectorXd seedv = random_vector(2, 200 + seed);
        const auto fd = fd_gradient(p, [&](const MlpParams& q) { return seedv.dot(mlp_forward(q, x)); });
        EXPECT_LE(relative_error(flat(param_gradient(p, x, seedv)), fd), 1e-4) << "seed " << seed;
    }
}

TEST(ParamGradient, LinearHookMatchesOuterProducts) {
    const MlpParams p = random_net(3, 4, 1, 7, Activation::Identity);
    const VectorXd x = random_vector(3, 8);
    const MlpParams g = param_gradient(p, x, VectorXd::Ones(1));
    // y = W2 (W1 (W0 x + b0) + b1) + b2
    const VectorXd h1 = p.weights[0] * x + p.biases[0];
    const VectorXd h2 = p.weights[1] * h1 + p.biases[1];
    const VectorXd back2 = p.weights[2].transpose();
    const VectorXd back1 = p.weights[1].transpose() * back2;
    EXPECT_LE((g.weights[2] - h2.transpose()).norm(), 1e-14);
    EXPECT_LE((g.weights[1] - back2 * h1.transpose()).norm(), 1e-14);
    EXPECT_LE((g.weights[0] - back1 * x.transpose()).norm(), 1e-14);
    EXPECT_LE((g.biases[0] - back1).norm(), 1e-14);
    EXPECT_EQ(g.biases[2](0), 1.0);
}

TEST(InputGradient, ZeroWeightsGiveZero) {
    EXPECT_EQ(input_gradient(MlpParams::zeros(5, 8, 1), random_vector(5, 1)).norm(), 0.0);
}

TEST(InputGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MlpParams p = random_net(5, 8, 1, seed);
        const VectorXd x = random_vector(5, 300 + seed);
        const VectorXd fd = fd_gradient(x, [&](const VectorXd& z) { return mlp_forward(p, z)(0); });
        EXPECT_LE(relative_error(input_gradient(p, x), fd), 1e-4);
    }
}

TEST(InputGradient, LinearHookReturnsWeightVector) {
    // B(x) = w . x through identity layers with unit inner weights
    MlpParams p = MlpParams::zeros(3, 3, 1, Activation::Identity);
    p.weights[0].setIdentity();
    p.weights[1].setIdentity();
    p.weights[2] << 0.5, -2.0, 3.0;
    const VectorXd g = input_gradient(p, random_vector(3, 2));
    EXPECT_EQ(g, VectorXd(p.weights[2].transpose()));
}

TEST(InputGradient, NonScalarOutputIsContractError) {
    EXPECT_THROW(input_gradient(MlpParams::zeros(5, 8, 2), VectorXd::Zero(5)), ContractError);
    EXPECT_THROW(mixed_second_gradient(MlpParams::zeros(5, 8, 2), VectorXd::Zero(5), VectorXd::Zero(5)),
                 ContractError);
}

TEST(InputGradient, BatchedMatchesSingle) {
    const MlpParams p = random_net(5, 8, 1, 9);
    MatrixXd x(5, 3);
    for (Index j = 0; j < 3; ++j) x.col(j) = random_vector(5, 40 + j);
    const MatrixXd g = input_gradients(p, x);
    for (Index j = 0; j < 3; ++j) EXPECT_LE((g.col(j) - input_gradient(p, x.col(j))).norm(), 1e-15);
}

TEST(MixedSecond, ZeroDirectionGivesZero) {
    const MlpParams p = random_net(5, 8, 1, 10);
    const MlpParams g = mixed_second_gradient(p, random_vector(5, 11), VectorXd::Zero(5));
    for (double v : g.flatten()) EXPECT_EQ(v, 0.0);
}

TEST(MixedSecond, MatchesFiniteDifferencesOfInputGradient) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MlpParams p = random_net(5, 8, 1, 20 + seed);
        const VectorXd x = random_vector(5, 400 + seed);
        const VectorXd v = random_vector(5, 500 + seed);
        const auto fd = fd_gradient(p, [&](const MlpParams& q) { return input_gradient(q, x).dot(v); });
        EXPECT_LE(relative_error(flat(mixed_second_gradient(p, x, v)), fd), 1e-3) << "seed " << seed;
    }
}

TEST(MixedSecond, LinearHookGradientIsDirection) {
    MlpParams p = MlpParams::zeros(3, 3, 1, Activation::Identity);
    p.weights[0].setIdentity();
    p.weights[1].setIdentity();
    p.weights[2] << 0.5, -2.0, 3.0;
    const VectorXd v = random_vector(3, 3);
    const MlpParams g = mixed_second_gradient(p, random_vector(3, 4), v);
    // <grad B, v> = w2 W1 W0 v, so d/dw2 = (W1 W0 v)^T = v^T
    EXPECT_LE((VectorXd(g.weights[2].transpose()) - v).norm(), 1e-15);
}

TEST(Reverse, ValueAndTangentSeedsAreAdditive) {
    const MlpParams p = random_net(5, 8, 1, 12);
    const MatrixXd x = random_vector(5, 13);
    const MatrixXd v = random_vector(5, 14);
    const Tape t = record_with_tangent(p, x, v);
    const auto both = reverse(p, t, MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)).params.flatten();
    const auto a = reverse(p, t, MatrixXd::Ones(1, 1)).params.flatten();
    const auto b = reverse(p, t, MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1)).params.flatten();
    for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both[i], a[i] + b[i], 1e-14);
}

TEST(Reverse, DeterministicBitIdentical) {
    const MlpParams p = random_net(5, 8, 1, 15);
    const VectorXd x = random_vector(5, 16), v = random_vector(5, 17);
    EXPECT_EQ(mixed_second_gradient(p, x, v), mixed_second_gradient(p, x, v));
    EXPECT_EQ(param_gradient(p, x, VectorXd::Ones(1)), param_gradient(p, x, VectorXd::Ones(1)));
}

TEST(MlpParams, FlattenRoundTrip) {
    const MlpParams p = random_net(5, 8, 2, 18);
    MlpParams q = p.zeros_like();
    q.assign_flat(p.flatten());
    EXPECT_EQ(p, q);
    EXPECT_EQ(p.flatten().size(), p.parameter_count());
    EXPECT_THROW(q.assign_flat(std::vector<double>(3)), ConfigError);
}

TEST(MlpParams, InitWithinFanInBounds) {
    Rng rng(1);
    const MlpParams p = MlpParams::uniform_init(5, 128, 1, rng);
    EXPECT_LE(p.weights[0].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(5.0));
    EXPECT_LE(p.weights[1].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(128.0));
    EXPECT_NO_THROW(p.validate());
    Rng again(1);
    EXPECT_EQ(p, MlpParams::uniform_init(5, 128, 1, again));
}

TEST(MlpParams, ValidateRejectsNonFinite) {
    MlpParams p = MlpParams::zeros(5, 8, 1);
    p.weights[1](0, 0) = std::nan("");
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
    MlpParams p = MlpParams::zeros(1, 1, 1);
    MlpParams g = p.zeros_like();
    g.weights[0](0, 0) = 3.0;
    g.biases[2](0) = -0.01;
    Adam opt(p, {});
    opt.step(p, g);
    EXPECT_NEAR(p.weights[0](0, 0), -1e-3, 1e-9);
    EXPECT_NEAR(p.biases[2](0), 1e-3, 1e-9);
    EXPECT_EQ(p.weights[1](0, 0), 0.0);
}
