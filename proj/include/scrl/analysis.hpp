#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scrl/algorithm.hpp"
#include "scrl/dataset.hpp"
#include "scrl/env.hpp"
#include "scrl/tensor.hpp"

namespace scrl::analysis {

// ---------------------------------------------------------------- rollouts

struct GoalOutcome {
  env::State goal;
  bool success = false;
  int steps = 0;  // steps taken until success, or the horizon
};

struct EvalReport {
  size_t num_rollouts = 0;
  size_t successes = 0;
  double success_rate = 0;
  double mean_length = 0;
  std::vector<GoalOutcome> outcomes;
};

struct EvalOptions {
  int horizon = 0;  // 0: the process horizon
  env::SuccessCriterion criterion;
  uint64_t seed = 0;
};

using PolicyFn = std::function<env::Action(const env::State& state, const env::State& goal)>;

// One rollout per goal from an initial state drawn with the rollout's own RNG
// stream; success if the criterion holds at any step 0..horizon.
EvalReport evaluate_policy(const env::GoalProcess& process, const PolicyFn& policy,
                           const std::vector<env::State>& goals, const EvalOptions& options);

// Greedy (argmax / mean) actions of a trained agent.
PolicyFn greedy_policy(const env::GoalProcess& process, const algo::Agent& agent);

std::vector<env::State> sample_goals(const env::GoalProcess& process, size_t count, uint64_t seed);

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------- critic diagnostics

// Pairwise accuracy over the B x B logit matrices of every batch.
double binary_accuracy(const algo::CriticPair& critic,
                       const std::vector<data::ContrastiveBatch>& batches);

std::vector<data::ContrastiveBatch> make_batches(const data::TrajectoryStore& store,
                                                 const env::GoalProcess& process, size_t count,
                                                 size_t batch_size, double gamma, uint64_t seed);

// f(s_t, a_t, g) along a trajectory, min-max normalized; a flat trace is all
// zeros. Needs at least two steps.
std::vector<double> q_trace(const algo::CriticPair& critic, const env::GoalProcess& process,
                            const std::vector<env::State>& states,
                            const std::vector<env::Action>& actions, const env::State& goal);
std::vector<double> normalize_trace(const std::vector<double>& values);

struct Rollout {
  std::vector<env::State> states;  // s_0 .. s_{T-1}
  std::vector<env::Action> actions;
  env::State goal;
};

// Successful rollouts of the scripted (greedy) controller from random starts
// to random goals, each with at least `min_steps` (state, action) pairs.
std::vector<Rollout> scripted_rollouts(const env::GoalProcess& process, size_t count,
                                       size_t min_steps, uint64_t seed);

// Spearman rank correlation with average ranks for ties; 0 if either side is
// constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Mean cosine similarity of phi(s_i, a_i) and psi(g_i) over the rows of
// every batch (positive pairs).
double positive_pair_alignment(const algo::CriticPair& critic,
                               const std::vector<data::ContrastiveBatch>& batches);
// Mean cosine similarity over distinct pairs of phi(s_i, a_i).
double phi_pairwise_alignment(const algo::CriticPair& critic,
                              const std::vector<data::ContrastiveBatch>& batches);

struct AlignmentPoint {
  double range = 0;
  double positive_pair = 0;
  double phi_pairwise = 0;
};

// Builds a fresh critic per cold-init range and measures alignment at
// initialization on the probe batches.
std::vector<AlignmentPoint> alignment_at_init(
    const std::function<algo::CriticPair(double range)>& make_critic,
    const std::vector<double>& ranges, const std::vector<data::ContrastiveBatch>& probes);

// ---------------------------------------------------------------- interpolation

enum class Metric { cosine, l2 };

struct InterpolationTrace {
  std::vector<double> alphas;
  std::vector<size_t> perm;  // retrieved validation index per alpha
  std::vector<double> score;  // similarity (cosine) or distance (l2) of the match
  size_t error = 0;
};

size_t permutation_error(const std::vector<size_t>& perm);

// z(alpha) = (1 - alpha) start + alpha goal for alpha on an even grid over
// [0, 1]; each z is matched to the best validation row under `metric`.
InterpolationTrace interpolate_and_retrieve(std::span<const float> start, std::span<const float> goal,
                                            const Tensor<float>& validation, size_t num_alphas,
                                            Metric metric);

// Interpolates goal-encoder representations with cosine retrieval.
InterpolationTrace interpolate_representations(const algo::CriticPair& critic,
                                               std::span<const float> start_obs,
                                               std::span<const float> goal_obs,
                                               const Tensor<float>& validation_obs,
                                               size_t num_alphas = 8);

// Interpolates raw observations with L2 retrieval.
InterpolationTrace interpolate_pixels(std::span<const float> start_obs,
                                      std::span<const float> goal_obs,
                                      const Tensor<float>& validation_obs, size_t num_alphas = 8);

// A start/goal pair with its ground-truth ordered path (num_alphas frames
// evenly spaced on the straight segment between them).
struct InterpolationCase {
  env::State start, goal;
  std::vector<float> start_obs, goal_obs;
  Tensor<float> validation_obs;
};

// Point-mass processes only; endpoints at least `min_distance` apart.
std::vector<InterpolationCase> straight_line_cases(const env::GoalProcess& process, size_t count,
                                                   size_t num_alphas, double min_distance,
                                                   uint64_t seed);

// {"representation": [...], "pixel": [...]}, one entry per case with its
// permutation error and per-alpha (alpha, retrieved_index, similarity).
void write_interp_json(const std::vector<InterpolationTrace>& representation,
                       const std::vector<InterpolationTrace>& pixel,
                       const std::filesystem::path& path);

// ---------------------------------------------------------------- ablations

enum class Axis { mlp_width_depth, batch_size, cold_init_range, layer_norm, augmentation, repr_dim };

Axis parse_axis(const std::string& text);
std::string to_string(Axis axis);

// Returns `base` with the axis set to `value` ("256x2" for width x depth,
// "true"/"false" for layer norm, the augmentation probability, ...).
algo::TrainConfig apply_axis(const algo::TrainConfig& base, Axis axis, const std::string& value);

struct AblationRow {
  std::string axis_value;
  uint64_t seed = 0;
  double success_rate = 0;
  double binary_accuracy = 0;
};

struct AblationSetup {
  const env::GoalProcess* process = nullptr;
  const data::TrajectoryStore* train_store = nullptr;
  const data::TrajectoryStore* held_out_store = nullptr;
  size_t num_eval_goals = 50;
  size_t num_held_out_batches = 10;
  size_t held_out_batch_size = 0;  // 0: the variant's batch size
  EvalOptions eval;
  algo::TrainOptions train;
};

std::vector<AblationRow> run_ablation(const algo::TrainConfig& base, Axis axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<uint64_t>& seeds,
                                      const AblationSetup& setup);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace scrl::analysis
