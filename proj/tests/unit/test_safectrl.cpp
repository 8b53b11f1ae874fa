#include <gtest/gtest.h>

#include <sstream>

#include "ncbf/safectrl.hpp"

using namespace ncbf;

namespace {

const DynamicsModel kDi = DynamicsModel::defaults(DynamicsKind::DoubleIntegrator);
const InputScaling kScaling = InputScaling::for_task(kDi, Bounds{});

CbfModel constant_cbf(double b) {
    CbfModel m{MlpParams::zeros(kStateDim, 4, 1), kScaling};
    m.params.biases[2](0) = b;
    return m;
}

/// B(x) = threshold - x on raw inputs: safe to the left of the threshold.
CbfModel left_of(double threshold) {
    CbfModel m{MlpParams::zeros(kStateDim, kStateDim, 1, Activation::Identity), InputScaling::identity()};
    m.params.weights[0].setIdentity();
    m.params.weights[1].setIdentity();
    m.params.weights[2](0, 0) = -1.0;
    m.params.biases[2](0) = threshold;
    return m;
}

RejectionModel constant_rejection(double r1, double r2) {
    RejectionModel r{MlpParams::zeros(kStateDim, 4, 2), kScaling, 0.1};
    r.params.biases[2] << r1, r2;
    return r;
}

/// Exhaustive reference: score every candidate, keep the first maximum.
std::optional<Control> brute_force(const State& x, const CbfModel& cbf, const RejectionModel* rej,
                                   const DynamicsModel& dyn, const ControlFilterConfig& cfg, double gx, double gy) {
    const MatrixXd cand = sample_candidates(dyn, cfg, nullptr);
    std::optional<Control> best;
    double best_score = -1e300;
    for (Index j = 0; j < cand.cols(); ++j) {
        const Control u = Control::from(cand.col(j));
        const State s = step(dyn, x, u);
        if (cbf_value(cbf, s) < 0.0) continue;
        if (rej && !is_in_distribution(rejection_scores(*rej, s), rej->c)) continue;
        const double score = goal_metric(s, gx, gy) + cfg.speed_weight * s.v / dyn.v_max;
        if (score > best_score) {
            best_score = score;
            best = u;
        }
    }
    return best;
}

World empty_world(double gx, double gy) {
    World w;
    w.goal_x = gx;
    w.goal_y = gy;
    return w;
}

}  // namespace

TEST(GoalMetric, Examples) {
    EXPECT_NEAR(goal_metric({0, 0, 0, 0, 0}, 5, 0), 1.0, 1e-15);
    EXPECT_NEAR(goal_metric({0, 0, std::numbers::pi, 0, 0}, 5, 0), -1.0, 1e-15);
    EXPECT_NEAR(goal_metric({0, 0, std::numbers::pi / 2, 0, 0}, 5, 0), 0.0, 1e-15);
    EXPECT_EQ(goal_metric({5, 0, 2.0, 0, 0}, 5, 0), 1.0);
}

TEST(Candidates, GridLayout) {
    ControlFilterConfig cfg;
    const MatrixXd u = sample_candidates(kDi, cfg, nullptr);
    ASSERT_EQ(u.cols(), 100);
    EXPECT_EQ(u.col(0), kDi.u_min);
    EXPECT_EQ(u.col(99), kDi.u_max);
    EXPECT_DOUBLE_EQ(u(1, 1) - u(1, 0), (kDi.u_max(1) - kDi.u_min(1)) / 9.0);

    cfg.sample_size = 7;
    const MatrixXd v = sample_candidates(kDi, cfg, nullptr);
    ASSERT_EQ(v.cols(), 7);
    EXPECT_EQ(v(0, 6), kDi.u_max(0));
    EXPECT_EQ(v(1, 6), kDi.u_min(1));

    cfg.sample_size = 1;
    EXPECT_EQ(sample_candidates(kDi, cfg, nullptr).col(0), ControlVector::Zero());
}

TEST(Candidates, RandomInsideBoxAndNeedsGenerator) {
    ControlFilterConfig cfg;
    cfg.scheme = SamplingScheme::UniformRandom;
    EXPECT_THROW(sample_candidates(kDi, cfg, nullptr), ContractError);
    Rng rng(1);
    const MatrixXd u = sample_candidates(kDi, cfg, &rng);
    for (Index j = 0; j < u.cols(); ++j)
        for (Index i = 0; i < 2; ++i) {
            EXPECT_GE(u(i, j), kDi.u_min(i));
            EXPECT_LE(u(i, j), kDi.u_max(i));
        }
}

TEST(SafeControl, NoSafeCandidateGivesNullopt) {
    const ControlFilterConfig cfg;
    EXPECT_FALSE(safe_control({5, 5, 0, 0, 0}, constant_cbf(-1.0), nullptr, kDi, cfg, 9, 9).has_value());
    const auto rej = constant_rejection(0.05, 0.95);
    EXPECT_FALSE(safe_control({5, 5, 0, 0, 0}, constant_cbf(1.0), &rej, kDi, cfg, 9, 9).has_value());
}

TEST(SafeControl, ZeroBarrierCountsAsSafe) {
    EXPECT_TRUE(safe_control({5, 5, 0, 0, 0}, constant_cbf(0.0), nullptr, kDi, {}, 9, 9).has_value());
}

TEST(SafeControl, AllSafeTurnsTowardGoal) {
    // goal straight ahead: the speed term picks full acceleration
    const auto u = safe_control({1, 5, 0, 0, 0}, constant_cbf(1.0), nullptr, kDi, {}, 9, 5);
    ASSERT_TRUE(u);
    EXPECT_DOUBLE_EQ(u->u1, kDi.u_max(0));
    // goal to the left: the largest positive yaw acceleration wins
    const auto left = safe_control({1, 5, 0, 0, 0}, constant_cbf(1.0), nullptr, kDi, {}, 1, 9);
    ASSERT_TRUE(left);
    EXPECT_DOUBLE_EQ(left->u2, kDi.u_max(1));
}

TEST(SafeControl, MatchesBruteForce) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const State x{rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(-3, 3), rng.uniform(0, 1), rng.uniform(-1, 1)};
        CbfModel cbf{MlpParams::uniform_init(kStateDim, 16, 1, rng), kScaling};
        RejectionModel rej{MlpParams::uniform_init(kStateDim, 16, 2, rng), kScaling, 0.1};
        rej.params.biases[2] << 0.5, 0.95;
        const double gx = rng.uniform(0, 10), gy = rng.uniform(0, 10);
        ControlFilterConfig cfg;
        cfg.sample_size = 49;
        const auto got = safe_control(x, cbf, &rej, kDi, cfg, gx, gy);
        const auto want = brute_force(x, cbf, &rej, kDi, cfg, gx, gy);
        ASSERT_EQ(got.has_value(), want.has_value()) << "trial " << trial;
        if (got) {
            EXPECT_EQ(got->vec(), want->vec()) << "trial " << trial;
            const State next = step(kDi, x, *got);
            EXPECT_GE(cbf_value(cbf, next), 0.0);
            EXPECT_TRUE(is_in_distribution(rejection_scores(rej, next), rej.c));
        }
    }
}

TEST(SafeControl, BoundaryOfLinearBarrier) {
    // full speed to the right; the fast straight candidates overshoot 5.08
    const State x{4.9, 5, 0, 1.0, 0};
    const auto u = safe_control(x, left_of(5.08), nullptr, kDi, {}, 9, 5);
    ASSERT_TRUE(u);
    EXPECT_LE(step(kDi, x, *u).x, 5.08);
    EXPECT_EQ(u->vec(), brute_force(x, left_of(5.08), nullptr, kDi, {}, 9, 5)->vec());
    EXPECT_FALSE(safe_control(x, left_of(4.95), nullptr, kDi, {}, 9, 5).has_value());
}

TEST(Scenario, InitAtGoalSucceedsWithoutSteps) {
    ModelBundle m{constant_cbf(1.0), std::nullopt, std::nullopt};
    const ScenarioRecord r = run_scenario(m, kDi, empty_world(5, 5), {5.1, 5, 0, 0, 0}, {}, 100);
    EXPECT_EQ(r.outcome, EvalOutcome::Success);
    EXPECT_EQ(r.steps, 0);
    EXPECT_EQ(r.path_length, 0.0);
    EXPECT_EQ(r.mean_velocity, 0.0);
}

TEST(Scenario, InitCollidingIsCollision) {
    World w = empty_world(9, 9);
    w.obstacles.push_back({3, 3, 0.5});
    ModelBundle m{constant_cbf(1.0), std::nullopt, std::nullopt};
    EXPECT_EQ(run_scenario(m, kDi, w, {3, 3, 0, 0, 0}, {}, 100).outcome, EvalOutcome::Collision);
}

TEST(Scenario, NoSafeControlStops) {
    ModelBundle m{constant_cbf(-1.0), std::nullopt, std::nullopt};
    const ScenarioRecord r = run_scenario(m, kDi, empty_world(9, 9), {1, 1, 0, 0, 0}, {}, 100);
    EXPECT_EQ(r.outcome, EvalOutcome::NoSafeControl);
    EXPECT_EQ(r.steps, 0);
}

TEST(Scenario, TrustingFilterReachesGoalInEmptyWorld) {
    ModelBundle m{constant_cbf(1.0), std::nullopt, std::nullopt};
    const ScenarioRecord r = run_scenario(m, kDi, empty_world(8, 5), {2, 5, 0, 0, 0}, {}, 200);
    EXPECT_EQ(r.outcome, EvalOutcome::Success);
    EXPECT_NEAR(r.completion_time, r.steps * kDi.dt, 1e-12);
    EXPECT_NEAR(r.mean_velocity, r.path_length / r.completion_time, 1e-12);
    EXPECT_GE(r.path_length, 6.0 - 0.3 - 1e-9);
    EXPECT_EQ(r.states.size(), static_cast<std::size_t>(r.steps) + 1);
}

TEST(Scenario, StepCapGivesTimeout) {
    ModelBundle m{constant_cbf(1.0), std::nullopt, std::nullopt};
    const ScenarioRecord r = run_scenario(m, kDi, empty_world(8, 5), {2, 5, 0, 0, 0}, {}, 3);
    EXPECT_EQ(r.outcome, EvalOutcome::Timeout);
    EXPECT_EQ(r.steps, 3);
}

TEST(Aggregate, RecomputesFromRecords) {
    auto rec = [](EvalOutcome o, double len, double t, double d) {
        ScenarioRecord r;
        r.outcome = o;
        r.path_length = len;
        r.completion_time = t;
        r.mean_velocity = len / t;
        r.min_distance = d;
        return r;
    };
    const EvaluationReport rep = aggregate({rec(EvalOutcome::Success, 4, 8, 0.5), rec(EvalOutcome::Collision, 100, 1, 0),
                                            rec(EvalOutcome::Success, 6, 4, 1.5), rec(EvalOutcome::Timeout, 1, 60, 2)});
    EXPECT_EQ(rep.successes, 2);
    EXPECT_DOUBLE_EQ(*rep.success_rate, 50.0);
    EXPECT_DOUBLE_EQ(rep.mean_path_length, 5.0);
    EXPECT_DOUBLE_EQ(rep.mean_completion_time, 6.0);
    EXPECT_DOUBLE_EQ(rep.mean_velocity, 1.0);
    EXPECT_DOUBLE_EQ(rep.mean_min_distance, 1.0);
}

TEST(Aggregate, EmptyIsUndefined) {
    const EvaluationReport rep = aggregate({});
    EXPECT_FALSE(rep.success_rate.has_value());
    EXPECT_EQ(format_rate(rep.success_rate), "undefined");
    EXPECT_EQ(format_rate(62.5), "62.5");
}

TEST(Evaluate, DeterministicAndThreadInvariant) {
    Rng wr(7);
    const World w = generate_world({}, wr);
    ModelBundle m{constant_cbf(1.0), std::nullopt, std::nullopt};
    EvaluationConfig cfg;
    cfg.count = 6;
    cfg.max_steps = 60;
    const auto a = evaluate(m, kDi, w, cfg, {}, 1);
    const auto b = evaluate(m, kDi, w, cfg, {}, 3);
    EXPECT_EQ(report_csv(a), report_csv(b));
    ASSERT_EQ(a.scenarios.size(), 6u);
    for (const auto& s : a.scenarios) {
        EXPECT_EQ(s.states.front().v, 0.0);
        EXPECT_FALSE(collision_check(w, s.states.front()));
    }
    cfg.seed += 1;
    EXPECT_NE(report_csv(evaluate(m, kDi, w, cfg, {}, 1)), report_csv(a));
}

TEST(Evaluate, ZeroScenarios) {
    ModelBundle m{constant_cbf(1.0), std::nullopt, std::nullopt};
    EvaluationConfig cfg;
    cfg.count = 0;
    const auto rep = evaluate(m, kDi, empty_world(5, 5), cfg, {});
    EXPECT_TRUE(rep.scenarios.empty());
    EXPECT_NE(report_csv(rep).find("success_rate=undefined"), std::string::npos);
}

TEST(Report, OneRowPerScenarioPlusAggregate) {
    ScenarioRecord r;
    r.outcome = EvalOutcome::NoSafeControl;
    const std::string csv = report_csv(aggregate({r, r, r}));
    std::istringstream in(csv);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 6u);
    EXPECT_EQ(lines[0], "# ncbf-eval-report v1");
    EXPECT_EQ(lines[2].substr(0, 18), "0,no_safe_control,");
    EXPECT_EQ(lines[5].rfind("# aggregate,count=3,successes=0,success_rate=0.0,", 0), 0u);
}

TEST(Landscape, GridOfCellCentres) {
    LandscapeConfig cfg;
    cfg.resolution = 4;
    const std::string grid = export_landscape_grid(left_of(5.0), nullptr, cfg);
    std::istringstream in(grid);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 2u + 16u);
    EXPECT_EQ(lines[1], "x,y,B,in_distribution");
    EXPECT_EQ(lines[2], "1.25,1.25,3.75,1");
    EXPECT_EQ(lines[17], "8.75,8.75,-3.75,1");
    const auto rej = constant_rejection(0.05, 0.95);
    EXPECT_EQ(export_landscape_grid(left_of(5.0), &rej, cfg).find(",1\n"), std::string::npos);
    cfg.resolution = 0;
    EXPECT_THROW(export_landscape_grid(left_of(5.0), nullptr, cfg), ConfigError);
}
