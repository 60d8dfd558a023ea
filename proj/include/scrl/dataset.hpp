#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scrl/env.hpp"
#include "scrl/random.hpp"
#include "scrl/tensor.hpp"

namespace scrl::data {

// How transitions are collected. The scripted collector walks greedily toward
// a per-episode goal (resampled whenever it is reached) and takes a uniformly
// random action with probability `epsilon`; uniform-random is epsilon = 1.
struct Behavior {
  enum class Kind { scripted, uniform_random, epsilon_mix };
  Kind kind = Kind::scripted;
  double epsilon = 0.1;

  static Behavior scripted() { return {Kind::scripted, 0.1}; }
  static Behavior uniform_random() { return {Kind::uniform_random, 1.0}; }
  static Behavior epsilon_mix(double eps) { return {Kind::epsilon_mix, eps}; }
  // "scripted", "random", or "mix:<eps>"
  static Behavior parse(const std::string& text);
  std::string name() const;
};

struct Trajectory {
  std::vector<float> states;   // (length + 1) * state_dim
  std::vector<float> actions;  // length * action_dim

  bool operator==(const Trajectory&) const = default;
};

struct StoreMetadata {
  std::string env_id;
  std::string behavior;
  uint64_t seed = 0;

  bool operator==(const StoreMetadata&) const = default;
};

// Trajectory-segmented transitions. Observation t + 1 is the next observation
// of transition t, so no transition crosses a trajectory boundary. Immutable
// once built; concurrent readers are safe.
class TrajectoryStore {
 public:
  TrajectoryStore() = default;
  TrajectoryStore(env::ObsKind obs_kind, size_t state_dim, size_t action_dim,
                  StoreMetadata metadata);

  void append(Trajectory trajectory);

  env::ObsKind obs_kind() const { return obs_kind_; }
  size_t state_dim() const { return state_dim_; }
  size_t action_dim() const { return action_dim_; }
  const StoreMetadata& metadata() const { return metadata_; }

  size_t num_trajectories() const { return trajectories_.size(); }
  size_t num_transitions() const { return offsets_.empty() ? 0 : offsets_.back(); }
  const Trajectory& trajectory(size_t i) const { return trajectories_.at(i); }
  size_t length(size_t traj) const;  // transitions in trajectory

  std::span<const float> state(size_t traj, size_t t) const;
  std::span<const float> action(size_t traj, size_t t) const;
  env::State state_vector(size_t traj, size_t t) const;
  env::Action action_vector(size_t traj, size_t t) const;

  struct Position {
    size_t trajectory = 0, t = 0;
  };
  Position locate(size_t transition) const;

  bool operator==(const TrajectoryStore& other) const;

 private:
  env::ObsKind obs_kind_ = env::ObsKind::features;
  size_t state_dim_ = 0, action_dim_ = 0;
  StoreMetadata metadata_;
  std::vector<Trajectory> trajectories_;
  std::vector<size_t> offsets_;  // prefix sums of trajectory lengths
};

TrajectoryStore generate_offline(const env::GoalProcess& process, const Behavior& behavior,
                                 size_t num_transitions, uint64_t seed);

struct FutureSample {
  size_t offset = 0;  // k >= 1
  std::span<const float> state;
};

// Future state at t + k, k ~ Geometric(1 - gamma) on {1, 2, ...} conditioned
// on staying inside the trajectory. The conditional law is sampled exactly,
// so there is no retry loop; a position with no future throws
// DegenerateTrajectory.
FutureSample sample_future_positive(const TrajectoryStore& store, size_t traj, size_t t,
                                    double gamma, Rng& rng);

// Rows of (s, a, s', g): row i's goal is its own future positive; for
// i != j, (s_i, a_i, g_j) is a negative pair.
struct ContrastiveBatch {
  size_t size = 0;
  Tensor<float> states;         // [B, obs_dim]
  Tensor<float> actions;        // [B, encoded action dim]
  Tensor<float> future_goals;   // [B, obs_dim]
  Tensor<float> next_states;    // [B, obs_dim]
  Tensor<float> next_actions;   // [B, encoded action dim]; valid if has_next_actions
  std::vector<env::State> raw_states, raw_goals, raw_next_states;
  std::vector<env::Action> raw_actions;
  std::vector<size_t> trajectory_ids, times, offsets;
  bool has_next_actions = false;
  bool with_replacement_warning = false;  // fewer trajectories than rows
};

struct BatchOptions {
  // Only draw transitions whose successor transition exists, and fill
  // next_actions with the logged a_{t+1}.
  bool require_next_action = false;
};

ContrastiveBatch assemble_batch(const TrajectoryStore& store, const env::GoalProcess& process,
                                size_t batch_size, double gamma, Rng& rng,
                                BatchOptions options = {});

// Edge-replicating pad of `pad` pixels on every side, then an H x W crop at
// (dy, dx) in [0, 2 * pad]^2. Image is HWC.
std::vector<float> crop_at(std::span<const float> image, size_t height, size_t width,
                           size_t channels, size_t pad, size_t dy, size_t dx);
std::vector<float> random_crop(std::span<const float> image, size_t height, size_t width,
                               size_t channels, size_t pad, Rng& rng);

inline constexpr size_t kDefaultCropPad = 4;

void save_store(const TrajectoryStore& store, const std::filesystem::path& path);
TrajectoryStore load_store(const std::filesystem::path& path);

}  // namespace scrl::data
