#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scrl/dataset.hpp"
#include "scrl/env.hpp"
#include "scrl/nn.hpp"
#include "scrl/random.hpp"
#include "scrl/tensor.hpp"

namespace scrl::algo {

enum class CriticMode { mc, td };
// Where the TD bootstrap action a' comes from: a sample from the current
// policy at (s', g), or the logged a_{t+1} (evaluates the behavior policy).
enum class NextActionSource { policy, dataset };

struct TrainConfig {
  double gamma = 0.99;
  size_t batch_size = 2048;
  size_t repr_dim = 16;
  double lr = 3e-4;
  double lambda = 0.5;
  CriticMode critic_mode = CriticMode::mc;
  double cold_init_range = 1e-12;
  bool use_layer_norm = true;
  double aug_prob = 0.5;
  bool augment_critic = false;
  double td_weight_clip = 20.0;
  NextActionSource td_next_action = NextActionSource::policy;
  // 0 evaluates the TD weight with the current parameters; K > 0 keeps a
  // frozen copy refreshed every K steps.
  uint64_t target_period = 0;
  uint64_t total_steps = 20000;
  uint64_t steps_per_epoch = 1000;
  uint64_t seed = 0;
  size_t mlp_width = 1024;
  size_t mlp_depth = 4;
  nn::CnnSpec cnn;
  double policy_std = 0.15;
  bool train_actor = true;

  void validate() const;
};

std::string to_string(CriticMode mode);
std::string to_string(NextActionSource source);
CriticMode parse_critic_mode(const std::string& text);
NextActionSource parse_next_action_source(const std::string& text);

// ---------------------------------------------------------------- models

template <class T>
struct BasicCriticPair {
  nn::BasicNetwork<T> phi;  // (state features, encoded action) -> R^d
  nn::BasicNetwork<T> psi;  // goal features -> R^d

  size_t repr_dim() const { return phi.output_dim(); }
  void zero_grad() {
    phi.zero_grad();
    psi.zero_grad();
  }
  template <class U>
  BasicCriticPair<U> cast() const {
    return {phi.template cast<U>(), psi.template cast<U>()};
  }
};

// pi(a | s, g). The network sees the state and goal stacked along the feature
// (or image channel) axis. Discrete policies output logits; continuous ones
// output a pre-tanh mean with a fixed standard deviation.
template <class T>
struct BasicPolicyNet {
  nn::BasicNetwork<T> net;
  env::ActionKind kind = env::ActionKind::discrete;
  size_t action_dim = 0;
  double std = 0.15;

  template <class U>
  BasicPolicyNet<U> cast() const {
    return {net.template cast<U>(), kind, action_dim, std};
  }
};

using CriticPair = BasicCriticPair<float>;
using PolicyNet = BasicPolicyNet<float>;

struct Agent {
  CriticPair critic;
  PolicyNet policy;
  std::optional<CriticPair> target;
  nn::AdamState phi_opt, psi_opt, policy_opt;
  env::ObsSpec obs;
};

// Builds and initializes all networks from the config's seed.
Agent make_agent(const TrainConfig& config, const env::GoalProcess& process);
// Architecture summary stored in checkpoints; restoring requires equality.
std::string agent_descriptor(const Agent& agent);
nn::Checkpoint to_checkpoint(const Agent& agent, uint64_t step);
void restore(Agent& agent, const nn::Checkpoint& ckpt);

// ---------------------------------------------------------------- batches

template <class T>
struct TrainingBatch {
  size_t size = 0;
  Tensor<T> states, actions, goals, next_states, next_actions;
  bool has_next_actions = false;
};

template <class T>
TrainingBatch<T> to_training_batch(const data::ContrastiveBatch& batch);

// Replaces each row, with probability `prob`, by a random crop of itself.
// Only image observations are touched.
template <class T>
void augment_rows(Tensor<T>& obs, const env::ObsSpec& spec, double prob, Rng& rng);

// [s ; g] per row; images are stacked channel-wise.
template <class T>
Tensor<T> policy_input(const Tensor<T>& states, const Tensor<T>& goals, const env::ObsSpec& spec);

// ---------------------------------------------------------------- losses

// L[i, j] = phi(s_i, a_i) . psi(g_j).
template <class T>
Tensor<T> critic_logits(const BasicCriticPair<T>& critic, const Tensor<T>& states,
                        const Tensor<T>& actions, const Tensor<T>& goals);

// -[mean_i log sigma(L_ii) + mean_{i != j} log(1 - sigma(L_ij))] and, if
// `grad` is given, its gradient with respect to L. Requires B >= 2.
template <class T>
double mc_critic_loss(const Tensor<T>& logits, Tensor<T>* grad = nullptr);

// Mean over rows of -[(1-gamma) log sigma(pos) + log(1 - sigma(neg)) +
// gamma * w * log sigma(neg)], w treated as a constant.
template <class T>
double td_critic_loss(std::span<const T> pos, std::span<const T> neg, std::span<const T> weights,
                      double gamma, std::span<T> dpos = {}, std::span<T> dneg = {});

// Fraction of B x B pairs classified correctly with sigma(L) > 0.5 as positive.
template <class T>
double binary_accuracy(const Tensor<T>& logits);

// Gradient of log(1 - sigma(phi . psi)) with respect to psi: -sigma(phi . psi) phi.
std::vector<double> hard_negative_gradient(std::span<const double> phi,
                                           std::span<const double> psi_neg);

struct CriticStats {
  double loss = 0, binary_accuracy = 0, pos_logit_mean = 0, neg_logit_mean = 0;
};

struct ActorStats {
  double loss = 0, bc_loss = 0, critic_term = 0;
};

// Forward + backward of the contrastive critic loss; accumulates into the
// critic's gradient vectors.
template <class T>
CriticStats mc_critic_gradients(BasicCriticPair<T>& critic, const TrainingBatch<T>& batch);

struct TdOptions {
  double gamma = 0.99;
  double weight_clip = 20.0;
  NextActionSource next_action = NextActionSource::policy;
};

// Row i's positive is its next state; its negative goal is row (i+1) mod B's
// future goal. The weight w uses `target` when given, else the current
// critic, and never receives gradient.
template <class T>
CriticStats td_critic_gradients(BasicCriticPair<T>& critic, const BasicCriticPair<T>* target,
                                const BasicPolicyNet<T>& policy, const TrainingBatch<T>& batch,
                                const env::ObsSpec& obs, const TdOptions& opts, Rng& rng);

// -mean[(1-lambda) f(s, a~pi, g) + lambda log pi(a_orig | s, g)]; accumulates
// into the policy's gradient only.
template <class T>
ActorStats actor_gradients(BasicPolicyNet<T>& policy, const BasicCriticPair<T>& critic,
                           const TrainingBatch<T>& batch, const env::ObsSpec& obs, double lambda,
                           double aug_prob, Rng& rng);

inline constexpr double kMinLogProb = -30.0;

// Deterministic action: argmax for discrete policies, the mean otherwise.
env::Action greedy_action(const PolicyNet& policy, const env::ObsSpec& obs,
                          std::span<const float> state, std::span<const float> goal);

// ---------------------------------------------------------------- training

struct LossReport {
  uint64_t step = 0;
  double critic_loss = 0, actor_loss = 0, bc_loss = 0, critic_term_of_actor = 0;
  double binary_accuracy = 0, pos_logit_mean = 0, neg_logit_mean = 0;
  double wall_ms = 0;
};

std::string metrics_header();
std::string metrics_row(const LossReport& report);

struct TrainHooks {
  std::function<void(const LossReport&)> on_step;
  // Called after every epoch with the epoch index (1-based) and a checkpoint.
  std::function<void(uint64_t, const nn::Checkpoint&)> on_epoch;
};

struct TrainOptions {
  size_t workers = 1;        // batch assembly threads
  bool record_timing = false;  // wall_ms stays 0 unless set
};

// Runs steps [start, total_steps). `agent` may come from make_agent or from
// a restored checkpoint at step `start`.
void train(Agent& agent, const TrainConfig& config, const data::TrajectoryStore& store,
           const env::GoalProcess& process, uint64_t start, const TrainHooks& hooks,
           const TrainOptions& options = {});

// Convenience: make_agent + train from step 0.
Agent train(const TrainConfig& config, const data::TrajectoryStore& store,
            const env::GoalProcess& process, const TrainHooks& hooks = {},
            const TrainOptions& options = {});

}  // namespace scrl::algo
