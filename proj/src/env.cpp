#include "scrl/env.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "scrl/errors.hpp"

namespace scrl::env {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidArgument("env id: bad number for " + what + ": '" + s + "'");
  }
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidArgument("env id: bad integer for " + what + ": '" + s + "'");
  }
  return v;
}

}  // namespace

bool SuccessCriterion::is_success(const State& s, const State& goal) const {
  if (s.size() != goal.size()) throw InvalidArgument("success criterion: state size mismatch");
  if (kind == Kind::exact_match) return s == goal;
  double d2 = 0;
  for (size_t i = 0; i < s.size(); ++i) d2 += (s[i] - goal[i]) * (s[i] - goal[i]);
  return std::sqrt(d2) <= radius;
}

std::vector<float> GoalProcess::observe(const State& s) const {
  std::vector<float> out(obs_spec().dim);
  observe(s, out);
  return out;
}

void GoalProcess::encode_action(const Action& a, std::span<float> out) const {
  const auto spec = action_spec();
  if (out.size() != spec.encoded_dim()) throw InvalidArgument("encode_action: bad output width");
  if (spec.kind == ActionKind::discrete) {
    std::fill(out.begin(), out.end(), 0.0f);
    const auto idx = static_cast<size_t>(a.at(0));
    if (idx >= spec.size) throw InvalidArgument("encode_action: action index out of range");
    out[idx] = 1.0f;
  } else {
    if (a.size() != spec.size) throw InvalidArgument("encode_action: action width mismatch");
    for (size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i]);
  }
}

size_t GoalProcess::num_states() const {
  throw UnsupportedOperation(id() + " is not tabular");
}
size_t GoalProcess::num_actions() const {
  throw UnsupportedOperation(id() + " is not tabular");
}
const std::vector<double>& GoalProcess::transition_matrix() const {
  throw UnsupportedOperation(id() + " is not tabular");
}
size_t GoalProcess::state_index(const State&) const {
  throw UnsupportedOperation(id() + " is not tabular");
}

// ---------------------------------------------------------------- Gridworld

Gridworld::Gridworld(int width, int height, double slip_prob, int horizon)
    : width_(width), height_(height), slip_(slip_prob), horizon_(horizon) {
  if (width < 1 || height < 1 || width * height < 2) {
    throw InvalidArgument("gridworld: needs at least two cells");
  }
  if (!(slip_prob >= 0.0 && slip_prob < 1.0)) {
    throw InvalidArgument("gridworld: slip_prob must be in [0, 1)");
  }
  if (horizon < 1) throw InvalidArgument("gridworld: horizon must be positive");

  const size_t ns = num_states(), na = num_actions();
  transitions_.assign(ns * na * ns, 0.0);
  for (size_t s = 0; s < ns; ++s) {
    for (size_t a = 0; a < na; ++a) {
      double* row = &transitions_[(s * na + a) * ns];
      for (int m = 0; m < 5; ++m) {
        const double p = (m == static_cast<int>(a)) ? 1.0 - slip_ : slip_ / 4.0;
        row[move(static_cast<int>(s), m)] += p;
      }
    }
  }
}

std::string Gridworld::id() const {
  std::string out = "grid" + std::to_string(width_) + "x" + std::to_string(height_);
  if (slip_ != 0.0) out += ",slip=" + format_double(slip_);
  if (horizon_ != 50) out += ",horizon=" + std::to_string(horizon_);
  return out;
}

ObsSpec Gridworld::obs_spec() const {
  return {ObsKind::tabular, num_states(), 0, 0, 0};
}

ActionSpec Gridworld::action_spec() const { return {ActionKind::discrete, 5, 0.0, 4.0}; }

int Gridworld::move(int cell, int m) const {
  int x = cell % width_, y = cell / width_;
  switch (m) {
    case kUp: y = std::max(0, y - 1); break;
    case kDown: y = std::min(height_ - 1, y + 1); break;
    case kLeft: x = std::max(0, x - 1); break;
    case kRight: x = std::min(width_ - 1, x + 1); break;
    default: break;
  }
  return y * width_ + x;
}

int Gridworld::manhattan(int a, int b) const {
  return std::abs(a % width_ - b % width_) + std::abs(a / width_ - b / width_);
}

size_t Gridworld::state_index(const State& s) const {
  if (s.size() != 1) throw InvalidArgument("gridworld: state must be a single index");
  const auto idx = static_cast<long>(s[0]);
  if (idx < 0 || static_cast<size_t>(idx) >= num_states() || static_cast<double>(idx) != s[0]) {
    throw InvalidArgument("gridworld: state index out of range");
  }
  return static_cast<size_t>(idx);
}

State Gridworld::initial_state(Rng& rng) const {
  std::uniform_int_distribution<int> cell(0, width_ * height_ - 1);
  return {static_cast<double>(cell(rng))};
}

State Gridworld::sample_goal(Rng& rng) const { return initial_state(rng); }

State Gridworld::step(const State& s, const Action& a, Rng& rng) const {
  const int cell = static_cast<int>(state_index(s));
  const int intended = static_cast<int>(a.at(0));
  if (intended < 0 || intended > 4) throw InvalidArgument("gridworld: action out of range");
  int m = intended;
  if (slip_ > 0.0 && uniform01(rng) < slip_) {
    // uniformly one of the four other moves
    int other = std::uniform_int_distribution<int>(0, 3)(rng);
    m = other >= intended ? other + 1 : other;
  }
  return {static_cast<double>(move(cell, m))};
}

void Gridworld::observe(const State& s, std::span<float> out) const {
  if (out.size() != num_states()) throw InvalidArgument("gridworld: bad observation width");
  std::fill(out.begin(), out.end(), 0.0f);
  out[state_index(s)] = 1.0f;
}

Action Gridworld::scripted_action(const State& s, const State& goal) const {
  const int c = static_cast<int>(state_index(s)), g = static_cast<int>(state_index(goal));
  const int dx = g % width_ - c % width_, dy = g / width_ - c / width_;
  if (dx == 0 && dy == 0) return {static_cast<double>(kStay)};
  if (std::abs(dx) >= std::abs(dy)) return {static_cast<double>(dx > 0 ? kRight : kLeft)};
  return {static_cast<double>(dy > 0 ? kDown : kUp)};
}

Action Gridworld::random_action(Rng& rng) const {
  return {static_cast<double>(std::uniform_int_distribution<int>(0, 4)(rng))};
}

// ---------------------------------------------------------------- PointMass

PointMass::PointMass(PointMassOptions opts) : opts_(opts) {
  if (opts_.dim != 1 && opts_.dim != 2) throw InvalidArgument("pointmass: dim must be 1 or 2");
  if (!(opts_.max_step > 0.0)) throw InvalidArgument("pointmass: max_step must be positive");
  if (opts_.noise_std < 0.0) throw InvalidArgument("pointmass: noise_std must be >= 0");
  if (opts_.horizon < 1) throw InvalidArgument("pointmass: horizon must be positive");
  if (opts_.pixels && (opts_.image_size < 2 || (opts_.channels != 1 && opts_.channels != 3))) {
    throw InvalidArgument("pointmass: image must be at least 2x2 with 1 or 3 channels");
  }
}

std::string PointMass::id() const {
  const PointMassOptions def;
  std::string out = opts_.pixels ? "pixelpoint" : "point" + std::to_string(opts_.dim);
  if (opts_.pixels && opts_.dim != 2) out += ",dim=" + std::to_string(opts_.dim);
  if (opts_.max_step != def.max_step) out += ",max_step=" + format_double(opts_.max_step);
  if (opts_.noise_std != def.noise_std) out += ",noise=" + format_double(opts_.noise_std);
  if (opts_.horizon != def.horizon) out += ",horizon=" + std::to_string(opts_.horizon);
  if (opts_.pixels && opts_.image_size != def.image_size) {
    out += ",size=" + std::to_string(opts_.image_size);
  }
  if (opts_.pixels && opts_.channels != def.channels) {
    out += ",channels=" + std::to_string(opts_.channels);
  }
  return out;
}

ObsSpec PointMass::obs_spec() const {
  if (opts_.pixels) {
    const size_t n = opts_.image_size;
    return {ObsKind::image, n * n * opts_.channels, n, n, opts_.channels};
  }
  return {ObsKind::features, static_cast<size_t>(opts_.dim), 0, 0, 0};
}

ActionSpec PointMass::action_spec() const {
  return {ActionKind::continuous, static_cast<size_t>(opts_.dim), -1.0, 1.0};
}

SuccessCriterion PointMass::default_criterion() const {
  return {SuccessCriterion::Kind::l2_ball, opts_.success_radius};
}

State PointMass::initial_state(Rng& rng) const {
  State s(static_cast<size_t>(opts_.dim));
  for (auto& v : s) v = uniform01(rng);
  return s;
}

State PointMass::sample_goal(Rng& rng) const { return initial_state(rng); }

State PointMass::step(const State& s, const Action& a, Rng& rng) const {
  if (s.size() != state_dim() || a.size() != state_dim()) {
    throw InvalidArgument("pointmass: state/action width mismatch");
  }
  State next(s.size());
  std::normal_distribution<double> noise(0.0, opts_.noise_std);
  for (size_t i = 0; i < s.size(); ++i) {
    const double ai = std::clamp(a[i], -1.0, 1.0);
    double v = s[i] + ai * opts_.max_step;
    if (opts_.noise_std > 0.0) v += noise(rng);
    next[i] = std::clamp(v, 0.0, 1.0);
  }
  return next;
}

void PointMass::render(const State& s, std::span<float> out) const {
  const size_t n = opts_.image_size, c = opts_.channels;
  if (out.size() != n * n * c) throw InvalidArgument("render: bad output size");
  const double cx = s.at(0) * static_cast<double>(n);
  const double cy = (opts_.dim == 2 ? s.at(1) : 0.5) * static_cast<double>(n);
  const double r2 = opts_.disc_radius_px * opts_.disc_radius_px;
  for (size_t row = 0; row < n; ++row) {
    for (size_t col = 0; col < n; ++col) {
      const double dx = static_cast<double>(col) - cx, dy = static_cast<double>(row) - cy;
      const float v = dx * dx + dy * dy <= r2 ? 1.0f : 0.0f;
      for (size_t ch = 0; ch < c; ++ch) out[(row * n + col) * c + ch] = v;
    }
  }
}

void PointMass::observe(const State& s, std::span<float> out) const {
  if (opts_.pixels) {
    render(s, out);
    return;
  }
  if (out.size() != s.size()) throw InvalidArgument("pointmass: bad observation width");
  for (size_t i = 0; i < s.size(); ++i) out[i] = static_cast<float>(s[i]);
}

Action PointMass::scripted_action(const State& s, const State& goal) const {
  Action a(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    a[i] = std::clamp((goal.at(i) - s[i]) / opts_.max_step, -1.0, 1.0);
  }
  return a;
}

Action PointMass::random_action(Rng& rng) const {
  Action a(static_cast<size_t>(opts_.dim));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : a) v = u(rng);
  return a;
}

// ---------------------------------------------------------------- factories

ProcessPtr make_gridworld(int width, int height, double slip_prob, int horizon) {
  return std::make_shared<Gridworld>(width, height, slip_prob, horizon);
}

ProcessPtr make_pointmass(int dim, double max_step, double noise_std, int horizon) {
  PointMassOptions o;
  o.dim = dim;
  o.max_step = max_step;
  o.noise_std = noise_std;
  o.horizon = horizon;
  return std::make_shared<PointMass>(o);
}

ProcessPtr make_pixel_pointmass(double max_step, double noise_std, size_t image_size,
                                size_t channels, int horizon) {
  PointMassOptions o;
  o.max_step = max_step;
  o.noise_std = noise_std;
  o.horizon = horizon;
  o.pixels = true;
  o.image_size = image_size;
  o.channels = channels;
  return std::make_shared<PointMass>(o);
}

std::vector<float> render_pixel(const GoalProcess& process, const State& state) {
  const auto* pm = dynamic_cast<const PointMass*>(&process);
  if (!pm) throw UnsupportedOperation("render_pixel: " + process.id() + " is not renderable");
  PointMassOptions o = pm->options();
  o.pixels = true;
  PointMass renderable(o);
  std::vector<float> out(o.image_size * o.image_size * o.channels);
  renderable.render(state, out);
  return out;
}

ProcessPtr make_process(const std::string& env_id) {
  std::vector<std::string> parts;
  std::stringstream ss(env_id);
  for (std::string item; std::getline(ss, item, ',');) parts.push_back(item);
  if (parts.empty()) throw InvalidArgument("env id is empty");

  std::map<std::string, std::string> kv;
  for (size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) throw InvalidArgument("env id: expected key=value: " + parts[i]);
    kv[parts[i].substr(0, eq)] = parts[i].substr(eq + 1);
  }
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  const std::string& name = parts[0];
  ProcessPtr out;
  if (name.rfind("grid", 0) == 0) {
    const std::string dims = name.substr(4);
    const auto x = dims.find('x');
    const int w = parse_int(dims.substr(0, x), "grid width");
    const int h = x == std::string::npos ? w : parse_int(dims.substr(x + 1), "grid height");
    double slip = 0.0;
    int horizon = 50;
    if (auto v = take("slip")) slip = parse_double(*v, "slip");
    if (auto v = take("horizon")) horizon = parse_int(*v, "horizon");
    out = make_gridworld(w, h, slip, horizon);
  } else {
    PointMassOptions o;
    if (name == "pixelpoint") {
      o.pixels = true;
    } else if (name == "point1" || name == "point2") {
      o.dim = name == "point1" ? 1 : 2;
    } else {
      throw InvalidArgument("unknown env id: " + env_id);
    }
    if (auto v = take("dim")) o.dim = parse_int(*v, "dim");
    if (auto v = take("max_step")) o.max_step = parse_double(*v, "max_step");
    if (auto v = take("noise")) o.noise_std = parse_double(*v, "noise");
    if (auto v = take("horizon")) o.horizon = parse_int(*v, "horizon");
    if (auto v = take("size")) o.image_size = static_cast<size_t>(parse_int(*v, "size"));
    if (auto v = take("channels")) o.channels = static_cast<size_t>(parse_int(*v, "channels"));
    out = std::make_shared<PointMass>(o);
  }
  if (!kv.empty()) throw InvalidArgument("env id: unknown option '" + kv.begin()->first + "'");
  return out;
}

}  // namespace scrl::env

namespace scrl::env {

TabularProcess::TabularProcess(size_t num_states, size_t num_actions,
                               std::vector<double> transitions, int horizon)
    : ns_(num_states), na_(num_actions), transitions_(std::move(transitions)), horizon_(horizon) {
  if (ns_ < 1 || na_ < 1) throw InvalidArgument("tabular process: empty state or action set");
  if (transitions_.size() != ns_ * na_ * ns_) {
    throw InvalidArgument("tabular process: transition tensor has wrong size");
  }
  for (size_t row = 0; row < ns_ * na_; ++row) {
    double sum = 0;
    for (size_t j = 0; j < ns_; ++j) {
      const double p = transitions_[row * ns_ + j];
      if (p < 0.0) throw InvalidArgument("tabular process: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("tabular process: row does not sum to 1");
  }
}

ObsSpec TabularProcess::obs_spec() const { return {ObsKind::tabular, ns_, 0, 0, 0}; }

ActionSpec TabularProcess::action_spec() const {
  return {ActionKind::discrete, na_, 0.0, static_cast<double>(na_ - 1)};
}

size_t TabularProcess::state_index(const State& s) const {
  if (s.size() != 1) throw InvalidArgument("tabular: state must be a single index");
  const auto idx = static_cast<long>(s[0]);
  if (idx < 0 || static_cast<size_t>(idx) >= ns_) throw InvalidArgument("tabular: bad state");
  return static_cast<size_t>(idx);
}

State TabularProcess::initial_state(Rng& rng) const {
  return {static_cast<double>(std::uniform_int_distribution<size_t>(0, ns_ - 1)(rng))};
}

State TabularProcess::sample_goal(Rng& rng) const { return initial_state(rng); }

State TabularProcess::step(const State& s, const Action& a, Rng& rng) const {
  return {static_cast<double>(
      sample_next_index(*this, state_index(s), static_cast<size_t>(a.at(0)), rng))};
}

void TabularProcess::observe(const State& s, std::span<float> out) const {
  if (out.size() != ns_) throw InvalidArgument("tabular: bad observation width");
  std::fill(out.begin(), out.end(), 0.0f);
  out[state_index(s)] = 1.0f;
}

Action TabularProcess::scripted_action(const State& s, const State& goal) const {
  // Action with the most probability of landing on the goal next step.
  const size_t si = state_index(s), gi = state_index(goal);
  size_t best = 0;
  for (size_t a = 1; a < na_; ++a) {
    if (transitions_[(si * na_ + a) * ns_ + gi] > transitions_[(si * na_ + best) * ns_ + gi]) {
      best = a;
    }
  }
  return {static_cast<double>(best)};
}

Action TabularProcess::random_action(Rng& rng) const {
  return {static_cast<double>(std::uniform_int_distribution<size_t>(0, na_ - 1)(rng))};
}

size_t sample_next_index(const GoalProcess& process, size_t s, size_t a, Rng& rng) {
  const size_t ns = process.num_states(), na = process.num_actions();
  const double* row = &process.transition_matrix()[(s * na + a) * ns];
  const double u = uniform01(rng);
  double cum = 0;
  size_t last_nonzero = 0;
  for (size_t j = 0; j < ns; ++j) {
    if (row[j] <= 0.0) continue;
    cum += row[j];
    last_nonzero = j;
    if (u < cum) return j;
  }
  return last_nonzero;
}

}  // namespace scrl::env
