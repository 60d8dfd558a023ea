#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scrl/random.hpp"

namespace scrl::env {

enum class ObsKind { tabular, features, image };
enum class ActionKind { discrete, continuous };

struct ObsSpec {
  ObsKind kind = ObsKind::features;
  size_t dim = 0;  // length of the feature vector networks consume
  size_t height = 0, width = 0, channels = 0;
};

struct ActionSpec {
  ActionKind kind = ActionKind::discrete;
  size_t size = 0;  // number of discrete actions, or box dimension
  double low = -1.0, high = 1.0;

  // Width of the action encoding fed to the critic (one-hot for discrete).
  size_t encoded_dim() const { return size; }
  // Width of a stored action (the index for discrete).
  size_t stored_dim() const { return kind == ActionKind::discrete ? 1 : size; }
};

// Tabular states are {index}; continuous states are coordinates.
using State = std::vector<double>;
// Discrete actions are {index}.
using Action = std::vector<double>;

struct SuccessCriterion {
  enum class Kind { exact_match, l2_ball };
  Kind kind = Kind::exact_match;
  double radius = 0.0;

  bool is_success(const State& s, const State& goal) const;
};

// A goal-conditioned controlled Markov process. Instances are immutable;
// callers own episode state and RNG streams, so one process can be shared
// across threads.
class GoalProcess {
 public:
  virtual ~GoalProcess() = default;

  virtual std::string id() const = 0;
  virtual ObsSpec obs_spec() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual size_t state_dim() const = 0;
  virtual int horizon() const = 0;
  virtual SuccessCriterion default_criterion() const = 0;

  virtual State initial_state(Rng& rng) const = 0;
  virtual State step(const State& s, const Action& a, Rng& rng) const = 0;
  virtual State sample_goal(Rng& rng) const = 0;

  // Network features for a state: one-hot, coordinates, or a rendered image.
  virtual void observe(const State& s, std::span<float> out) const = 0;
  std::vector<float> observe(const State& s) const;
  void encode_action(const Action& a, std::span<float> out) const;

  // Greedy move toward `goal`; the basis of the scripted data collector.
  virtual Action scripted_action(const State& s, const State& goal) const = 0;
  virtual Action random_action(Rng& rng) const = 0;

  virtual bool is_tabular() const { return false; }
  virtual size_t num_states() const;
  virtual size_t num_actions() const;
  // Dense P[s, a, s'] in row-major order.
  virtual const std::vector<double>& transition_matrix() const;
  virtual size_t state_index(const State& s) const;
};

using ProcessPtr = std::shared_ptr<const GoalProcess>;

enum GridAction : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };

class Gridworld final : public GoalProcess {
 public:
  Gridworld(int width, int height, double slip_prob, int horizon = 50);

  std::string id() const override;
  ObsSpec obs_spec() const override;
  ActionSpec action_spec() const override;
  size_t state_dim() const override { return 1; }
  int horizon() const override { return horizon_; }
  SuccessCriterion default_criterion() const override { return {}; }

  State initial_state(Rng& rng) const override;
  State step(const State& s, const Action& a, Rng& rng) const override;
  State sample_goal(Rng& rng) const override;
  void observe(const State& s, std::span<float> out) const override;
  Action scripted_action(const State& s, const State& goal) const override;
  Action random_action(Rng& rng) const override;

  bool is_tabular() const override { return true; }
  size_t num_states() const override { return static_cast<size_t>(width_ * height_); }
  size_t num_actions() const override { return 5; }
  const std::vector<double>& transition_matrix() const override { return transitions_; }
  size_t state_index(const State& s) const override;

  int width() const { return width_; }
  int height() const { return height_; }
  double slip_prob() const { return slip_; }
  // Deterministic destination of `move` from `cell` (walls clamp).
  int move(int cell, int move) const;
  int manhattan(int a, int b) const;

 private:
  int width_, height_;
  double slip_;
  int horizon_;
  std::vector<double> transitions_;
};

// A tabular process given by an explicit transition tensor P[s, a, s'].
// Observations are one-hot; initial states and goals are uniform.
class TabularProcess final : public GoalProcess {
 public:
  TabularProcess(size_t num_states, size_t num_actions, std::vector<double> transitions,
                 int horizon = 50);

  std::string id() const override { return "tabular"; }
  ObsSpec obs_spec() const override;
  ActionSpec action_spec() const override;
  size_t state_dim() const override { return 1; }
  int horizon() const override { return horizon_; }
  SuccessCriterion default_criterion() const override { return {}; }

  State initial_state(Rng& rng) const override;
  State step(const State& s, const Action& a, Rng& rng) const override;
  State sample_goal(Rng& rng) const override;
  void observe(const State& s, std::span<float> out) const override;
  Action scripted_action(const State& s, const State& goal) const override;
  Action random_action(Rng& rng) const override;

  bool is_tabular() const override { return true; }
  size_t num_states() const override { return ns_; }
  size_t num_actions() const override { return na_; }
  const std::vector<double>& transition_matrix() const override { return transitions_; }
  size_t state_index(const State& s) const override;

 private:
  size_t ns_, na_;
  std::vector<double> transitions_;
  int horizon_;
};

// Samples s' from row P[s, a, :] of a tabular process.
size_t sample_next_index(const GoalProcess& process, size_t s, size_t a, Rng& rng);

struct PointMassOptions {
  int dim = 2;
  double max_step = 0.05;
  double noise_std = 0.0;
  int horizon = 100;
  bool pixels = false;
  size_t image_size = 48;
  size_t channels = 1;
  double disc_radius_px = 3.0;
  double success_radius = 0.05;
};

// Continuous process on [0,1]^dim: s' = clamp(s + a * max_step + noise).
class PointMass final : public GoalProcess {
 public:
  explicit PointMass(PointMassOptions opts);

  std::string id() const override;
  ObsSpec obs_spec() const override;
  ActionSpec action_spec() const override;
  size_t state_dim() const override { return static_cast<size_t>(opts_.dim); }
  int horizon() const override { return opts_.horizon; }
  SuccessCriterion default_criterion() const override;

  State initial_state(Rng& rng) const override;
  State step(const State& s, const Action& a, Rng& rng) const override;
  State sample_goal(Rng& rng) const override;
  void observe(const State& s, std::span<float> out) const override;
  Action scripted_action(const State& s, const State& goal) const override;
  Action random_action(Rng& rng) const override;

  const PointMassOptions& options() const { return opts_; }
  void render(const State& s, std::span<float> out) const;

 private:
  PointMassOptions opts_;
};

ProcessPtr make_gridworld(int width, int height, double slip_prob, int horizon = 50);
ProcessPtr make_pointmass(int dim, double max_step, double noise_std, int horizon = 100);
ProcessPtr make_pixel_pointmass(double max_step, double noise_std, size_t image_size = 48,
                                size_t channels = 1, int horizon = 100);

// Renders a point-mass state as a filled disc on a black background.
// Throws UnsupportedOperation for processes that cannot be rendered.
std::vector<float> render_pixel(const GoalProcess& process, const State& state);

// Builds a process from a short id: "grid9", "grid5x3", "grid9:0.1" (slip),
// "point2", "point1", "pixelpoint". Ids round-trip through GoalProcess::id().
ProcessPtr make_process(const std::string& env_id);

}  // namespace scrl::env
