#include "scrl/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>

#include "scrl/errors.hpp"
#include "scrl/io.hpp"

namespace scrl::data {

// ---------------------------------------------------------------- Behavior

Behavior Behavior::parse(const std::string& text) {
  if (text == "scripted") return scripted();
  if (text == "random" || text == "uniform-random") return uniform_random();
  if (text.rfind("mix:", 0) == 0) {
    double eps = -1.0;
    try {
      size_t used = 0;
      eps = std::stod(text.substr(4), &used);
      if (used != text.size() - 4) eps = -1.0;
    } catch (const std::exception&) {
    }
    if (!(eps >= 0.0 && eps <= 1.0)) throw InvalidArgument("behavior: epsilon must be in [0,1]");
    return epsilon_mix(eps);
  }
  throw InvalidArgument("unknown behavior '" + text + "' (scripted | random | mix:<eps>)");
}

std::string Behavior::name() const {
  switch (kind) {
    case Kind::scripted: return "scripted";
    case Kind::uniform_random: return "random";
    case Kind::epsilon_mix: return "mix:" + std::to_string(epsilon);
  }
  return "unknown";
}

// ---------------------------------------------------------------- store

TrajectoryStore::TrajectoryStore(env::ObsKind obs_kind, size_t state_dim, size_t action_dim,
                                 StoreMetadata metadata)
    : obs_kind_(obs_kind),
      state_dim_(state_dim),
      action_dim_(action_dim),
      metadata_(std::move(metadata)) {}

void TrajectoryStore::append(Trajectory trajectory) {
  if (trajectory.states.size() % state_dim_ != 0 || trajectory.states.size() < state_dim_) {
    throw InvalidArgument("store: trajectory states have the wrong width");
  }
  const size_t len = trajectory.states.size() / state_dim_ - 1;
  if (trajectory.actions.size() != len * action_dim_) {
    throw InvalidArgument("store: trajectory needs one action per transition");
  }
  offsets_.push_back(num_transitions() + len);
  trajectories_.push_back(std::move(trajectory));
}

size_t TrajectoryStore::length(size_t traj) const {
  return trajectories_.at(traj).states.size() / state_dim_ - 1;
}

std::span<const float> TrajectoryStore::state(size_t traj, size_t t) const {
  const auto& s = trajectories_.at(traj).states;
  if ((t + 1) * state_dim_ > s.size()) throw InvalidArgument("store: time index out of range");
  return {s.data() + t * state_dim_, state_dim_};
}

std::span<const float> TrajectoryStore::action(size_t traj, size_t t) const {
  const auto& a = trajectories_.at(traj).actions;
  if ((t + 1) * action_dim_ > a.size()) throw InvalidArgument("store: time index out of range");
  return {a.data() + t * action_dim_, action_dim_};
}

env::State TrajectoryStore::state_vector(size_t traj, size_t t) const {
  auto s = state(traj, t);
  return {s.begin(), s.end()};
}

env::Action TrajectoryStore::action_vector(size_t traj, size_t t) const {
  auto a = action(traj, t);
  return {a.begin(), a.end()};
}

TrajectoryStore::Position TrajectoryStore::locate(size_t transition) const {
  if (transition >= num_transitions()) throw InvalidArgument("store: transition out of range");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), transition);
  const auto traj = static_cast<size_t>(it - offsets_.begin());
  const size_t start = traj == 0 ? 0 : offsets_[traj - 1];
  return {traj, transition - start};
}

bool TrajectoryStore::operator==(const TrajectoryStore& o) const {
  return obs_kind_ == o.obs_kind_ && state_dim_ == o.state_dim_ &&
         action_dim_ == o.action_dim_ && metadata_ == o.metadata_ &&
         trajectories_ == o.trajectories_;
}

// ---------------------------------------------------------------- generation

TrajectoryStore generate_offline(const env::GoalProcess& process, const Behavior& behavior,
                                 size_t num_transitions, uint64_t seed) {
  const auto horizon = static_cast<size_t>(process.horizon());
  if (num_transitions < horizon) {
    throw InvalidArgument("generate_offline: need at least one horizon (" +
                          std::to_string(horizon) + ") of transitions");
  }
  const size_t sdim = process.state_dim();
  const size_t adim = process.action_spec().stored_dim();
  TrajectoryStore store(process.obs_spec().kind, sdim, adim,
                        {process.id(), behavior.name(), seed});
  const auto criterion = process.default_criterion();
  Rng rng = make_rng(seed);

  auto push = [](std::vector<float>& dst, const std::vector<double>& v) {
    for (double x : v) dst.push_back(static_cast<float>(x));
  };

  size_t produced = 0;
  while (produced < num_transitions) {
    Trajectory traj;
    env::State s = process.initial_state(rng);
    env::State goal = process.sample_goal(rng);
    // Round-trip through float so stored states are exactly what the
    // simulation continues from.
    for (auto& v : s) v = static_cast<float>(v);
    push(traj.states, s);
    const size_t len = std::min(horizon, num_transitions - produced);
    for (size_t t = 0; t < len; ++t) {
      const double u = uniform01(rng);
      env::Action a = u < behavior.epsilon ? process.random_action(rng)
                                           : process.scripted_action(s, goal);
      for (auto& v : a) v = static_cast<float>(v);
      s = process.step(s, a, rng);
      for (auto& v : s) v = static_cast<float>(v);
      push(traj.actions, a);
      push(traj.states, s);
      if (criterion.is_success(s, goal)) goal = process.sample_goal(rng);
    }
    produced += len;
    store.append(std::move(traj));
  }
  return store;
}

// ---------------------------------------------------------------- sampling

FutureSample sample_future_positive(const TrajectoryStore& store, size_t traj, size_t t,
                                    double gamma, Rng& rng) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must be in [0, 1)");
  const size_t len = store.length(traj);
  if (t > len) throw InvalidArgument("sample_future_positive: time index out of range");
  const size_t remaining = len - t;
  if (remaining == 0) {
    throw DegenerateTrajectory("no future state after t=" + std::to_string(t) +
                               " in trajectory " + std::to_string(traj));
  }
  const double u = uniform01(rng);
  size_t k = 1;
  if (gamma > 0.0) {
    // Inverse CDF of the geometric law truncated to {1, ..., remaining}.
    const double tail = std::pow(gamma, static_cast<double>(remaining));
    const double x = std::floor(std::log1p(-u * (1.0 - tail)) / std::log(gamma)) + 1.0;
    k = static_cast<size_t>(std::clamp(x, 1.0, static_cast<double>(remaining)));
  }
  return {k, store.state(traj, t + k)};
}

ContrastiveBatch assemble_batch(const TrajectoryStore& store, const env::GoalProcess& process,
                                size_t batch_size, double gamma, Rng& rng, BatchOptions options) {
  if (batch_size < 2) throw InvalidArgument("assemble_batch: batch_size must be >= 2");
  if (store.num_transitions() == 0) throw InvalidArgument("assemble_batch: store is empty");
  if (store.state_dim() != process.state_dim()) {
    throw InvalidArgument("assemble_batch: store does not match process " + process.id());
  }
  const size_t obs_dim = process.obs_spec().dim;
  const size_t act_dim = process.action_spec().encoded_dim();

  // Index space of eligible transitions; with require_next_action the last
  // transition of each trajectory is excluded.
  std::vector<size_t> eligible_offsets;
  size_t eligible = store.num_transitions();
  if (options.require_next_action) {
    eligible = 0;
    for (size_t i = 0; i < store.num_trajectories(); ++i) {
      eligible += store.length(i) > 0 ? store.length(i) - 1 : 0;
      eligible_offsets.push_back(eligible);
    }
    if (eligible == 0) throw InvalidArgument("assemble_batch: no transition has a successor");
  }

  ContrastiveBatch b;
  b.size = batch_size;
  b.states = Tensor<float>::matrix(batch_size, obs_dim);
  b.future_goals = Tensor<float>::matrix(batch_size, obs_dim);
  b.next_states = Tensor<float>::matrix(batch_size, obs_dim);
  b.actions = Tensor<float>::matrix(batch_size, act_dim);
  b.next_actions = Tensor<float>::matrix(batch_size, act_dim);
  b.has_next_actions = options.require_next_action;
  b.with_replacement_warning = store.num_trajectories() < batch_size;

  std::uniform_int_distribution<size_t> pick(0, eligible - 1);
  for (size_t i = 0; i < batch_size; ++i) {
    TrajectoryStore::Position pos;
    const size_t idx = pick(rng);
    if (options.require_next_action) {
      const auto it = std::upper_bound(eligible_offsets.begin(), eligible_offsets.end(), idx);
      pos.trajectory = static_cast<size_t>(it - eligible_offsets.begin());
      pos.t = idx - (pos.trajectory == 0 ? 0 : eligible_offsets[pos.trajectory - 1]);
    } else {
      pos = store.locate(idx);
    }
    const auto future = sample_future_positive(store, pos.trajectory, pos.t, gamma, rng);

    b.raw_states.push_back(store.state_vector(pos.trajectory, pos.t));
    b.raw_next_states.push_back(store.state_vector(pos.trajectory, pos.t + 1));
    b.raw_goals.emplace_back(future.state.begin(), future.state.end());
    b.raw_actions.push_back(store.action_vector(pos.trajectory, pos.t));
    b.trajectory_ids.push_back(pos.trajectory);
    b.times.push_back(pos.t);
    b.offsets.push_back(future.offset);

    process.observe(b.raw_states.back(), b.states.row(i));
    process.observe(b.raw_next_states.back(), b.next_states.row(i));
    process.observe(b.raw_goals.back(), b.future_goals.row(i));
    process.encode_action(b.raw_actions.back(), b.actions.row(i));
    if (options.require_next_action) {
      process.encode_action(store.action_vector(pos.trajectory, pos.t + 1), b.next_actions.row(i));
    }
  }
  return b;
}

// ---------------------------------------------------------------- augmentation

std::vector<float> crop_at(std::span<const float> image, size_t height, size_t width,
                           size_t channels, size_t pad, size_t dy, size_t dx) {
  if (image.size() != height * width * channels) throw InvalidArgument("crop: bad image size");
  if (height < 2 * pad || width < 2 * pad) {
    throw InvalidArgument("crop: image smaller than twice the padding");
  }
  if (dy > 2 * pad || dx > 2 * pad) throw InvalidArgument("crop: offset outside padded image");
  std::vector<float> out(image.size());
  const auto h = static_cast<long>(height), w = static_cast<long>(width);
  for (long y = 0; y < h; ++y) {
    const long sy = std::clamp(y + static_cast<long>(dy) - static_cast<long>(pad), 0L, h - 1);
    for (long x = 0; x < w; ++x) {
      const long sx = std::clamp(x + static_cast<long>(dx) - static_cast<long>(pad), 0L, w - 1);
      std::memcpy(&out[(y * w + x) * channels], &image[(sy * w + sx) * channels],
                  channels * sizeof(float));
    }
  }
  return out;
}

std::vector<float> random_crop(std::span<const float> image, size_t height, size_t width,
                               size_t channels, size_t pad, Rng& rng) {
  std::uniform_int_distribution<size_t> offset(0, 2 * pad);
  const size_t dy = offset(rng);
  const size_t dx = offset(rng);
  return crop_at(image, height, width, channels, pad, dy, dx);
}

// ---------------------------------------------------------------- persistence

namespace {
constexpr char kStoreMagic[4] = {'S', 'C', 'R', 'L'};
constexpr uint32_t kStoreVersion = 1;
}  // namespace

void save_store(const TrajectoryStore& store, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.raw(kStoreMagic, 4);
  w.u32(kStoreVersion);
  w.u32(static_cast<uint32_t>(store.obs_kind()));
  w.u32(static_cast<uint32_t>(store.state_dim()));
  w.u32(static_cast<uint32_t>(store.action_dim()));
  w.str(store.metadata().env_id);
  w.str(store.metadata().behavior);
  w.u64(store.metadata().seed);
  w.u64(store.num_trajectories());
  for (size_t i = 0; i < store.num_trajectories(); ++i) {
    const auto& t = store.trajectory(i);
    w.u64(store.length(i));
    w.f32s(t.states);
    w.f32s(t.actions);
  }
  w.finish(path);
}

TrajectoryStore load_store(const std::filesystem::path& path) {
  io::ByteReader r(path);
  r.expect_bytes(kStoreMagic, 4);
  if (r.u32() != kStoreVersion) throw CorruptFile(path.string() + ": unsupported version");
  const uint32_t kind = r.u32();
  if (kind > static_cast<uint32_t>(env::ObsKind::image)) {
    throw CorruptFile(path.string() + ": bad observation kind");
  }
  const size_t sdim = r.u32();
  const size_t adim = r.u32();
  if (sdim == 0) throw CorruptFile(path.string() + ": zero state width");
  StoreMetadata meta;
  meta.env_id = r.str();
  meta.behavior = r.str();
  meta.seed = r.u64();
  TrajectoryStore store(static_cast<env::ObsKind>(kind), sdim, adim, meta);
  const uint64_t count = r.u64();
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t len = r.u64();
    Trajectory t;
    t.states.resize((len + 1) * sdim);
    t.actions.resize(len * adim);
    r.f32s(t.states);
    r.f32s(t.actions);
    store.append(std::move(t));
  }
  if (!r.at_end()) throw CorruptFile(path.string() + ": trailing bytes");
  return store;
}

}  // namespace scrl::data
