#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "scrl/analysis.hpp"
#include "scrl/errors.hpp"

namespace scrl::analysis {
namespace {

namespace fs = std::filesystem;

algo::TrainConfig small_config() {
  algo::TrainConfig c;
  c.batch_size = 16;
  c.repr_dim = 4;
  c.mlp_width = 32;
  c.mlp_depth = 1;
  c.total_steps = 2;
  c.steps_per_epoch = 1;
  c.gamma = 0.9;
  return c;
}

struct Grid {
  env::ProcessPtr process = env::make_gridworld(5, 5, 0.0);
  data::TrajectoryStore store = data::generate_offline(*process, data::Behavior::epsilon_mix(0.3), 2000, 1);
};

Grid& grid() {
  static Grid g;
  return g;
}

// ---------------------------------------------------------------- rank statistics

TEST(Spearman, Examples) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-15);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-15);
  EXPECT_NEAR(spearman({1, 2, 3}, {1, 8, 27}), 1.0, 1e-15);
  EXPECT_EQ(spearman({1, 1, 1}, {1, 2, 3}), 0.0);
  // Average ranks for ties: x ranks (1, 2.5, 2.5, 4).
  const double rho = spearman({1, 2, 2, 3}, {1, 2, 3, 4});
  EXPECT_NEAR(rho, 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
  EXPECT_THROW(spearman({1}, {1}), InvalidArgument);
  EXPECT_THROW(spearman({1, 2}, {1, 2, 3}), InvalidArgument);
}

TEST(NormalizeTrace, Examples) {
  EXPECT_EQ(normalize_trace({3, 3, 3}), (std::vector<double>{0, 0, 0}));
  const auto inc = normalize_trace({-2, 0, 1, 6});
  EXPECT_EQ(inc.front(), 0.0);
  EXPECT_EQ(inc.back(), 1.0);
  for (size_t i = 1; i < inc.size(); ++i) EXPECT_GT(inc[i], inc[i - 1]);
  EXPECT_NEAR(inc[1], 0.25, 1e-15);
}

TEST(NormalizeTrace, AffineInvariant) {
  Rng rng = make_rng(1);
  std::vector<double> q(20);
  for (auto& v : q) v = uniform01(rng) * 10 - 5;
  const auto base = normalize_trace(q);
  for (auto [a, b] : {std::pair{2.0, 3.0}, {0.01, -7.0}, {1e3, 1e2}}) {
    std::vector<double> t(q.size());
    for (size_t i = 0; i < q.size(); ++i) t[i] = a * q[i] + b;
    const auto n = normalize_trace(t);
    for (size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(n[i], base[i], 1e-12);
  }
}

TEST(QTrace, ScalingTheCriticLeavesTraceUnchanged) {
  auto cfg = small_config();
  cfg.cold_init_range = 1.0;
  auto agent = algo::make_agent(cfg, *grid().process);
  const auto rollouts = scripted_rollouts(*grid().process, 1, 4, 3);
  const auto& r = rollouts[0];
  const auto base = q_trace(agent.critic, *grid().process, r.states, r.actions, r.goal);
  // Scale the final dense layer of phi (weights and bias) by 2.5.
  auto& phi = agent.critic.phi;
  const size_t off = phi.param_offset(static_cast<size_t>(phi.last_dense()));
  for (size_t k = off; k < phi.num_params(); ++k) phi.params()[k] *= 2.5f;
  const auto scaled = q_trace(agent.critic, *grid().process, r.states, r.actions, r.goal);
  for (size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(scaled[i], base[i], 1e-5);
  EXPECT_THROW(q_trace(agent.critic, *grid().process, {r.states[0]}, {r.actions[0]}, r.goal),
               InvalidArgument);
}

TEST(QTrace, ConstantCriticGivesZeros) {
  auto cfg = small_config();
  auto agent = algo::make_agent(cfg, *grid().process);
  for (auto& p : agent.critic.phi.params()) p = 0;
  const auto r = scripted_rollouts(*grid().process, 1, 3, 4)[0];
  for (double v : q_trace(agent.critic, *grid().process, r.states, r.actions, r.goal)) EXPECT_EQ(v, 0.0);
}

TEST(ScriptedRollouts, ReachTheGoal) {
  const auto& p = *grid().process;
  const auto rollouts = scripted_rollouts(p, 8, 3, 5);
  ASSERT_EQ(rollouts.size(), 8u);
  Rng rng = make_rng(0);
  for (const auto& r : rollouts) {
    ASSERT_GE(r.states.size(), 3u);
    ASSERT_EQ(r.states.size(), r.actions.size());
    EXPECT_FALSE(p.default_criterion().is_success(r.states.back(), r.goal));
    // Deterministic grid: the last action lands on the goal.
    EXPECT_TRUE(p.default_criterion().is_success(p.step(r.states.back(), r.actions.back(), rng), r.goal));
  }
  const auto again = scripted_rollouts(p, 8, 3, 5);
  for (size_t i = 0; i < 8; ++i) EXPECT_EQ(again[i].states, rollouts[i].states);
}

// ---------------------------------------------------------------- binary accuracy

TEST(BinaryAccuracy, InvariantToMonotoneTransforms) {
  Rng rng = make_rng(2);
  auto l = Tensor<float>::matrix(9, 9);
  for (auto& v : l.storage()) v = static_cast<float>(uniform01(rng) * 4 - 2);
  auto t = l;
  for (auto& v : t.storage()) v = v * v * v + 0.5f * v;
  EXPECT_EQ(algo::binary_accuracy(l), algo::binary_accuracy(t));
}

TEST(BinaryAccuracy, PairWeightedOverBatches) {
  auto cfg = small_config();
  cfg.cold_init_range = 1.0;
  const auto agent = algo::make_agent(cfg, *grid().process);
  const auto small = make_batches(grid().store, *grid().process, 1, 3, 0.9, 1);
  const auto large = make_batches(grid().store, *grid().process, 1, 7, 0.9, 2);
  const double a = binary_accuracy(agent.critic, small), b = binary_accuracy(agent.critic, large);
  std::vector<data::ContrastiveBatch> both{small[0], large[0]};
  EXPECT_NEAR(binary_accuracy(agent.critic, both), (9 * a + 49 * b) / 58, 1e-12);
  EXPECT_THROW(binary_accuracy(agent.critic, {}), InvalidArgument);
}

// ---------------------------------------------------------------- rollouts

TEST(EvaluatePolicy, ScriptedPolicySolvesGrid) {
  const auto p = env::make_gridworld(9, 9, 0.0);
  const auto goals = sample_goals(*p, 40, 1);
  const PolicyFn scripted = [&](const env::State& s, const env::State& g) { return p->scripted_action(s, g); };
  const auto report = evaluate_policy(*p, scripted, goals, {0, p->default_criterion(), 0});
  EXPECT_EQ(report.success_rate, 1.0);
  EXPECT_EQ(report.successes, 40u);
  for (const auto& o : report.outcomes) EXPECT_LE(o.steps, 16);
}

TEST(EvaluatePolicy, StationaryPolicyRarelySucceeds) {
  const auto p = env::make_gridworld(9, 9, 0.0);
  const auto goals = sample_goals(*p, 200, 2);
  const PolicyFn stay = [&](const env::State&, const env::State&) { return env::Action{0.0}; };
  const auto report = evaluate_policy(*p, stay, goals, {0, p->default_criterion(), 4});
  EXPECT_LT(report.success_rate, 0.2);
  EXPECT_THROW(evaluate_policy(*p, stay, {}, {}), InvalidArgument);
}

TEST(EvaluatePolicy, DeterministicAndHorizonZeroSuccessOnlyAtStart) {
  const auto p = env::make_gridworld(9, 9, 0.2);
  const auto goals = sample_goals(*p, 30, 5);
  const PolicyFn scripted = [&](const env::State& s, const env::State& g) { return p->scripted_action(s, g); };
  const EvalOptions opts{0, p->default_criterion(), 7};
  const auto a = evaluate_policy(*p, scripted, goals, opts), b = evaluate_policy(*p, scripted, goals, opts);
  for (size_t i = 0; i < goals.size(); ++i) {
    EXPECT_EQ(a.outcomes[i].success, b.outcomes[i].success);
    EXPECT_EQ(a.outcomes[i].steps, b.outcomes[i].steps);
  }
  const auto one = evaluate_policy(*p, scripted, goals, {1, p->default_criterion(), 7});
  for (const auto& o : one.outcomes) EXPECT_LE(o.steps, 1);
}

TEST(EvaluatePolicy, CsvHasOneRowPerGoal) {
  const auto p = env::make_gridworld(5, 5, 0.0);
  const auto goals = sample_goals(*p, 4, 1);
  const PolicyFn scripted = [&](const env::State& s, const env::State& g) { return p->scripted_action(s, g); };
  const auto path = fs::temp_directory_path() / "scrl_eval_test.csv";
  write_eval_csv(evaluate_policy(*p, scripted, goals, {0, p->default_criterion(), 0}), path);
  std::ifstream f(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "rollout,goal,success,steps");
  EXPECT_EQ(lines[5].rfind("# success_rate=1 ", 0), 0u);
}

// ---------------------------------------------------------------- interpolation

TEST(PermutationError, Examples) {
  EXPECT_EQ(permutation_error({0, 1, 2, 3}), 0u);
  EXPECT_EQ(permutation_error({3, 1, 2, 0}), 6u);
  EXPECT_EQ(permutation_error({3, 2, 1, 0}), 8u);
  for (size_t n = 1; n < 12; ++n) {
    std::vector<size_t> rev(n);
    size_t closed = 0;
    for (size_t t = 0; t < n; ++t) {
      rev[t] = n - 1 - t;
      closed += static_cast<size_t>(std::abs(static_cast<long>(n) - 1 - 2 * static_cast<long>(t)));
    }
    EXPECT_EQ(permutation_error(rev), closed);
  }
}

TEST(Interpolate, TrueFramesGiveIdentity) {
  const std::vector<float> start{1, 0, 0.5f}, goal{0, 1, -0.5f};
  const size_t n = 6;
  auto frames = Tensor<float>::matrix(n, 3);
  for (size_t t = 0; t < n; ++t) {
    const double a = static_cast<double>(t) / (n - 1);
    for (size_t k = 0; k < 3; ++k) frames(t, k) = static_cast<float>((1 - a) * start[k] + a * goal[k]);
  }
  for (auto metric : {Metric::cosine, Metric::l2}) {
    const auto trace = interpolate_and_retrieve(start, goal, frames, n, metric);
    EXPECT_EQ(trace.perm, (std::vector<size_t>{0, 1, 2, 3, 4, 5}));
    EXPECT_EQ(trace.error, 0u);
    EXPECT_DOUBLE_EQ(trace.alphas.back(), 1.0);
  }
  // Reversed validation rows give the full-reversal error.
  auto reversed = Tensor<float>::matrix(n, 3);
  for (size_t t = 0; t < n; ++t)
    for (size_t k = 0; k < 3; ++k) reversed(t, k) = frames(n - 1 - t, k);
  EXPECT_EQ(interpolate_and_retrieve(start, goal, reversed, n, Metric::l2).error, 18u);
  EXPECT_THROW(interpolate_and_retrieve(start, goal, Tensor<float>::matrix(0, 3), n, Metric::l2), InvalidArgument);
  EXPECT_THROW(interpolate_and_retrieve(start, goal, frames, 1, Metric::l2), InvalidArgument);
}

TEST(Interpolate, StraightLineCasesOnPixels) {
  const auto p = env::make_pixel_pointmass(0.05, 0.0);
  const auto cases = straight_line_cases(*p, 3, 8, 0.3, 1);
  ASSERT_EQ(cases.size(), 3u);
  for (const auto& c : cases) {
    EXPECT_GE(std::hypot(c.start[0] - c.goal[0], c.start[1] - c.goal[1]), 0.3);
    EXPECT_EQ(c.validation_obs.rows(), 8u);
    // The first and last frames are the endpoints.
    for (size_t k = 0; k < c.start_obs.size(); ++k) {
      EXPECT_EQ(c.validation_obs(0, k), c.start_obs[k]);
      EXPECT_EQ(c.validation_obs(7, k), c.goal_obs[k]);
    }
  }
  EXPECT_THROW(straight_line_cases(*grid().process, 1, 8, 0.3, 1), UnsupportedOperation);
}

TEST(Interpolate, JsonLayout) {
  InterpolationTrace t;
  t.alphas = {0.0, 1.0};
  t.perm = {1, 0};
  t.score = {0.5, 0.25};
  t.error = 2;
  const auto path = fs::temp_directory_path() / "scrl_interp_test.json";
  write_interp_json({t}, {t, t}, path);
  std::ifstream f(path);
  const auto doc = nlohmann::json::parse(f);
  ASSERT_EQ(doc["representation"].size(), 1u);
  ASSERT_EQ(doc["pixel"].size(), 2u);
  const auto& e = doc["pixel"][1];
  EXPECT_EQ(e["pair"], 1);
  EXPECT_EQ(e["permutation_error"], 2);
  EXPECT_EQ(e["steps"][0]["retrieved_index"], 1);
  EXPECT_EQ(e["steps"][1]["alpha"], 1.0);
  EXPECT_EQ(e["steps"][1]["similarity"], 0.25);
}

// ---------------------------------------------------------------- alignment

TEST(Alignment, ZeroRangeCollapsesPhi) {
  const auto probes = make_batches(grid().store, *grid().process, 3, 16, 0.9, 1);
  const auto make = [](double r) {
    auto cfg = small_config();
    cfg.cold_init_range = r;
    return algo::make_agent(cfg, *grid().process).critic;
  };
  const auto pts = alignment_at_init(make, {0.0}, probes);
  EXPECT_NEAR(pts[0].phi_pairwise, 1.0, 1e-6);
  EXPECT_THROW(alignment_at_init(make, {-1.0}, probes), InvalidArgument);
}

TEST(Alignment, DeterministicAndOrdered) {
  const auto probes = make_batches(grid().store, *grid().process, 10, 16, 0.9, 2);
  const auto make = [](double r) {
    auto cfg = small_config();
    cfg.cold_init_range = r;
    return algo::make_agent(cfg, *grid().process).critic;
  };
  const auto a = alignment_at_init(make, {1e-4, 1e-12}, probes);
  const auto b = alignment_at_init(make, {1e-4, 1e-12}, probes);
  EXPECT_EQ(a[0].positive_pair, b[0].positive_pair);
  EXPECT_EQ(a[1].phi_pairwise, b[1].phi_pairwise);
  EXPECT_GT(a[1].phi_pairwise, a[0].phi_pairwise);
}

// ---------------------------------------------------------------- ablations

TEST(Ablation, ApplyAxis) {
  const algo::TrainConfig base;
  const auto wd = apply_axis(base, Axis::mlp_width_depth, "256x2");
  EXPECT_EQ(wd.mlp_width, 256u);
  EXPECT_EQ(wd.mlp_depth, 2u);
  EXPECT_EQ(apply_axis(base, Axis::batch_size, "128").batch_size, 128u);
  EXPECT_EQ(apply_axis(base, Axis::cold_init_range, "1e-8").cold_init_range, 1e-8);
  EXPECT_FALSE(apply_axis(base, Axis::layer_norm, "false").use_layer_norm);
  EXPECT_EQ(apply_axis(base, Axis::augmentation, "0").aug_prob, 0.0);
  EXPECT_EQ(apply_axis(base, Axis::repr_dim, "512").repr_dim, 512u);
  EXPECT_THROW(apply_axis(base, Axis::mlp_width_depth, "256"), InvalidArgument);
  EXPECT_THROW(apply_axis(base, Axis::batch_size, "1"), InvalidArgument);
  EXPECT_THROW(apply_axis(base, Axis::batch_size, "12.5"), InvalidArgument);
  EXPECT_THROW(apply_axis(base, Axis::layer_norm, "yes"), InvalidArgument);
  for (auto axis : {Axis::mlp_width_depth, Axis::batch_size, Axis::cold_init_range, Axis::layer_norm,
                    Axis::augmentation, Axis::repr_dim}) {
    EXPECT_EQ(parse_axis(to_string(axis)), axis);
  }
  EXPECT_THROW(parse_axis("depth"), InvalidArgument);
}

TEST(Ablation, RowsPerValueAndSeed) {
  AblationSetup setup;
  setup.process = grid().process.get();
  setup.train_store = &grid().store;
  setup.held_out_store = &grid().store;
  setup.num_eval_goals = 5;
  setup.num_held_out_batches = 2;
  setup.held_out_batch_size = 8;
  setup.eval.criterion = grid().process->default_criterion();
  const auto rows = run_ablation(small_config(), Axis::repr_dim, {"4", "8"}, {0, 1}, setup);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].axis_value, "4");
  EXPECT_EQ(rows[3].axis_value, "8");
  EXPECT_EQ(rows[3].seed, 1u);
  for (const auto& r : rows) {
    EXPECT_GE(r.success_rate, 0.0);
    EXPECT_LE(r.binary_accuracy, 1.0);
  }
  EXPECT_EQ(run_ablation(small_config(), Axis::repr_dim, {"4"}, {0}, setup)[0].binary_accuracy,
            rows[0].binary_accuracy);
  const auto path = fs::temp_directory_path() / "scrl_ablation_test.csv";
  write_ablation_csv(rows, path);
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "axis_value,seed,success_rate,binary_accuracy");

  auto diverging = small_config();
  diverging.lr = 1e30;
  diverging.cold_init_range = 1.0;
  try {
    run_ablation(diverging, Axis::batch_size, {"8"}, {2}, setup);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_NE(std::string(e.what()).find("batch_size=8 seed=2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_ablation(small_config(), Axis::batch_size, {}, {0}, setup), InvalidArgument);
}

}  // namespace
}  // namespace scrl::analysis
