#include "scrl/analysis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>

#include "scrl/errors.hpp"
#include "scrl/nn.hpp"

namespace scrl::analysis {

namespace {

Tensor<float> stack_observations(const env::GoalProcess& process,
                                 const std::vector<env::State>& states) {
  const size_t dim = process.obs_spec().dim;
  Tensor<float> out = Tensor<float>::matrix(states.size(), dim);
  for (size_t i = 0; i < states.size(); ++i) process.observe(states[i], out.row(i));
  return out;
}

void open_for_write(std::ofstream& f, const std::filesystem::path& path) {
  f.open(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
}

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double parse_number(const std::string& text, const char* what) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw InvalidArgument(std::string(what) + ": cannot parse '" + text + "'");
  }
  return v;
}

size_t parse_count(const std::string& text, const char* what) {
  const double v = parse_number(text, what);
  if (v < 0 || v != std::floor(v)) throw InvalidArgument(std::string(what) + ": expected a count");
  return static_cast<size_t>(v);
}

}  // namespace

// ---------------------------------------------------------------- rollouts

EvalReport evaluate_policy(const env::GoalProcess& process, const PolicyFn& policy,
                           const std::vector<env::State>& goals, const EvalOptions& options) {
  if (goals.empty()) throw InvalidArgument("evaluate_policy: empty goal set");
  const int horizon = options.horizon > 0 ? options.horizon : process.horizon();
  EvalReport report;
  report.num_rollouts = goals.size();
  report.outcomes.resize(goals.size());
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(goals.size()); ++i) {
    try {
      Rng rng = make_rng(options.seed, static_cast<uint64_t>(i));
      GoalOutcome out{goals[i], false, horizon};
      env::State s = process.initial_state(rng);
      for (int t = 0; t <= horizon; ++t) {
        if (options.criterion.is_success(s, goals[i])) {
          out.success = true;
          out.steps = t;
          break;
        }
        if (t == horizon) break;
        s = process.step(s, policy(s, goals[i]), rng);
      }
      report.outcomes[i] = out;
    } catch (...) {
#pragma omp critical
      error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  double total_len = 0;
  for (const auto& o : report.outcomes) {
    report.successes += o.success ? 1 : 0;
    total_len += o.steps;
  }
  report.success_rate = static_cast<double>(report.successes) / static_cast<double>(goals.size());
  report.mean_length = total_len / static_cast<double>(goals.size());
  return report;
}

PolicyFn greedy_policy(const env::GoalProcess& process, const algo::Agent& agent) {
  return [&process, &agent](const env::State& s, const env::State& g) {
    const auto so = process.observe(s);
    const auto go = process.observe(g);
    return algo::greedy_action(agent.policy, agent.obs, so, go);
  };
}

std::vector<env::State> sample_goals(const env::GoalProcess& process, size_t count, uint64_t seed) {
  Rng rng = make_rng(seed, 0x90a1);
  std::vector<env::State> goals;
  goals.reserve(count);
  for (size_t i = 0; i < count; ++i) goals.push_back(process.sample_goal(rng));
  return goals;
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f;
  open_for_write(f, path);
  f << "rollout,goal,success,steps\n";
  char buf[64];
  for (size_t i = 0; i < report.outcomes.size(); ++i) {
    const auto& o = report.outcomes[i];
    std::string goal;
    for (size_t k = 0; k < o.goal.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%s%.9g", k ? " " : "", o.goal[k]);
      goal += buf;
    }
    f << i << "," << goal << "," << (o.success ? 1 : 0) << "," << o.steps << "\n";
  }
  std::snprintf(buf, sizeof(buf), "%.9g", report.success_rate);
  f << "# success_rate=" << buf << " successes=" << report.successes
    << " rollouts=" << report.num_rollouts << "\n";
  if (!f) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- critic diagnostics

double binary_accuracy(const algo::CriticPair& critic,
                       const std::vector<data::ContrastiveBatch>& batches) {
  if (batches.empty()) throw InvalidArgument("binary_accuracy: no batches");
  double correct = 0, total = 0;
  for (const auto& b : batches) {
    const auto logits = algo::critic_logits(critic, b.states, b.actions, b.future_goals);
    const double pairs = static_cast<double>(b.size * b.size);
    correct += algo::binary_accuracy(logits) * pairs;
    total += pairs;
  }
  return correct / total;
}

std::vector<data::ContrastiveBatch> make_batches(const data::TrajectoryStore& store,
                                                 const env::GoalProcess& process, size_t count,
                                                 size_t batch_size, double gamma, uint64_t seed) {
  std::vector<data::ContrastiveBatch> out;
  for (size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, i);
    out.push_back(data::assemble_batch(store, process, batch_size, gamma, rng));
  }
  return out;
}

std::vector<double> normalize_trace(const std::vector<double>& values) {
  if (values.empty()) return {};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<double> out(values.size(), 0.0);
  const double range = *hi - *lo;
  if (range == 0.0) return out;
  for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

std::vector<double> q_trace(const algo::CriticPair& critic, const env::GoalProcess& process,
                            const std::vector<env::State>& states,
                            const std::vector<env::Action>& actions, const env::State& goal) {
  if (states.size() < 2 || actions.size() != states.size()) {
    throw InvalidArgument("q_trace: need at least two (state, action) steps");
  }
  const Tensor<float> obs = stack_observations(process, states);
  Tensor<float> acts = Tensor<float>::matrix(actions.size(), process.action_spec().encoded_dim());
  for (size_t i = 0; i < actions.size(); ++i) process.encode_action(actions[i], acts.row(i));
  const auto g = process.observe(goal);
  const Tensor<float> goal_row({1, g.size()}, g);
  const Tensor<float> phi = critic.phi.forward(obs, &acts);
  const Tensor<float> psi = critic.psi.forward(goal_row);
  std::vector<double> q(states.size());
  for (size_t t = 0; t < states.size(); ++t) {
    double acc = 0;
    for (size_t k = 0; k < phi.cols(); ++k) acc += static_cast<double>(phi(t, k)) * psi(0, k);
    q[t] = acc;
  }
  return normalize_trace(q);
}

std::vector<Rollout> scripted_rollouts(const env::GoalProcess& process, size_t count,
                                       size_t min_steps, uint64_t seed) {
  const auto criterion = process.default_criterion();
  std::vector<Rollout> out;
  for (uint64_t attempt = 0; out.size() < count; ++attempt) {
    if (attempt > 1000 * (count + 1)) {
      throw InvalidArgument("scripted_rollouts: the scripted controller rarely succeeds here");
    }
    Rng rng = make_rng(seed, attempt);
    Rollout r;
    r.goal = process.sample_goal(rng);
    env::State s = process.initial_state(rng);
    bool reached = false;
    for (int t = 0; t < process.horizon(); ++t) {
      if (criterion.is_success(s, r.goal)) {
        reached = true;
        break;
      }
      const auto a = process.scripted_action(s, r.goal);
      r.states.push_back(s);
      r.actions.push_back(a);
      s = process.step(s, a, rng);
    }
    reached = reached || criterion.is_success(s, r.goal);
    if (reached && r.states.size() >= std::max<size_t>(min_steps, 2)) out.push_back(std::move(r));
  }
  return out;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal-length series");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double positive_pair_alignment(const algo::CriticPair& critic,
                               const std::vector<data::ContrastiveBatch>& batches) {
  if (batches.empty()) throw InvalidArgument("alignment: no probe batches");
  double total = 0;
  size_t count = 0;
  for (const auto& b : batches) {
    const auto phi = critic.phi.forward(b.states, &b.actions);
    const auto psi = critic.psi.forward(b.future_goals);
    for (size_t i = 0; i < b.size; ++i) {
      total += nn::cosine_similarity(phi.row(i), psi.row(i));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double phi_pairwise_alignment(const algo::CriticPair& critic,
                              const std::vector<data::ContrastiveBatch>& batches) {
  if (batches.empty()) throw InvalidArgument("alignment: no probe batches");
  double total = 0;
  size_t count = 0;
  for (const auto& b : batches) {
    const auto phi = critic.phi.forward(b.states, &b.actions);
    for (size_t i = 0; i < b.size; ++i) {
      for (size_t j = i + 1; j < b.size; ++j) {
        total += nn::cosine_similarity(phi.row(i), phi.row(j));
        ++count;
      }
    }
  }
  if (count == 0) throw InvalidArgument("alignment: batches need at least two rows");
  return total / static_cast<double>(count);
}

std::vector<AlignmentPoint> alignment_at_init(
    const std::function<algo::CriticPair(double range)>& make_critic,
    const std::vector<double>& ranges, const std::vector<data::ContrastiveBatch>& probes) {
  std::vector<AlignmentPoint> out;
  for (const double r : ranges) {
    if (!(r >= 0.0)) throw InvalidArgument("alignment_at_init: ranges must be non-negative");
    const auto critic = make_critic(r);
    out.push_back({r, positive_pair_alignment(critic, probes), phi_pairwise_alignment(critic, probes)});
  }
  return out;
}

// ---------------------------------------------------------------- interpolation

size_t permutation_error(const std::vector<size_t>& perm) {
  size_t err = 0;
  for (size_t t = 0; t < perm.size(); ++t) err += perm[t] > t ? perm[t] - t : t - perm[t];
  return err;
}

InterpolationTrace interpolate_and_retrieve(std::span<const float> start, std::span<const float> goal,
                                            const Tensor<float>& validation, size_t num_alphas,
                                            Metric metric) {
  if (validation.rows() == 0) throw InvalidArgument("interpolate: empty validation set");
  if (start.size() != goal.size() || validation.cols() != start.size()) {
    throw InvalidArgument("interpolate: dimension mismatch");
  }
  if (num_alphas < 2) throw InvalidArgument("interpolate: need at least two alphas");
  InterpolationTrace trace;
  std::vector<float> z(start.size());
  for (size_t t = 0; t < num_alphas; ++t) {
    const double alpha = static_cast<double>(t) / static_cast<double>(num_alphas - 1);
    for (size_t k = 0; k < z.size(); ++k) {
      z[k] = static_cast<float>((1.0 - alpha) * start[k] + alpha * goal[k]);
    }
    size_t best = 0;
    double best_score = 0;
    for (size_t v = 0; v < validation.rows(); ++v) {
      double score;
      if (metric == Metric::cosine) {
        score = nn::cosine_similarity(z, validation.row(v));
      } else {
        double acc = 0;
        const auto row = validation.row(v);
        for (size_t k = 0; k < z.size(); ++k) acc += (double(z[k]) - row[k]) * (double(z[k]) - row[k]);
        score = std::sqrt(acc);
      }
      const bool better = metric == Metric::cosine ? score > best_score : score < best_score;
      if (v == 0 || better) {
        best = v;
        best_score = score;
      }
    }
    trace.alphas.push_back(alpha);
    trace.perm.push_back(best);
    trace.score.push_back(best_score);
  }
  trace.error = permutation_error(trace.perm);
  return trace;
}

InterpolationTrace interpolate_representations(const algo::CriticPair& critic,
                                               std::span<const float> start_obs,
                                               std::span<const float> goal_obs,
                                               const Tensor<float>& validation_obs,
                                               size_t num_alphas) {
  if (validation_obs.rows() == 0) throw InvalidArgument("interpolate: empty validation set");
  Tensor<float> ends = Tensor<float>::matrix(2, start_obs.size());
  std::copy(start_obs.begin(), start_obs.end(), ends.row(0).begin());
  std::copy(goal_obs.begin(), goal_obs.end(), ends.row(1).begin());
  const auto z = critic.psi.forward(ends);
  const auto v = critic.psi.forward(validation_obs);
  return interpolate_and_retrieve(z.row(0), z.row(1), v, num_alphas, Metric::cosine);
}

InterpolationTrace interpolate_pixels(std::span<const float> start_obs,
                                      std::span<const float> goal_obs,
                                      const Tensor<float>& validation_obs, size_t num_alphas) {
  return interpolate_and_retrieve(start_obs, goal_obs, validation_obs, num_alphas, Metric::l2);
}

std::vector<InterpolationCase> straight_line_cases(const env::GoalProcess& process, size_t count,
                                                   size_t num_alphas, double min_distance,
                                                   uint64_t seed) {
  if (!dynamic_cast<const env::PointMass*>(&process)) {
    throw UnsupportedOperation("interpolation cases need a point-mass process");
  }
  if (num_alphas < 2) throw InvalidArgument("interpolation: need at least two alphas");
  Rng rng = make_rng(seed, 0x1e7);
  std::vector<InterpolationCase> out;
  const size_t dim = process.state_dim();
  while (out.size() < count) {
    InterpolationCase c;
    c.start = process.sample_goal(rng);
    c.goal = process.sample_goal(rng);
    double dist = 0;
    for (size_t k = 0; k < dim; ++k) dist += (c.start[k] - c.goal[k]) * (c.start[k] - c.goal[k]);
    if (std::sqrt(dist) < min_distance) continue;
    c.start_obs = process.observe(c.start);
    c.goal_obs = process.observe(c.goal);
    c.validation_obs = Tensor<float>::matrix(num_alphas, process.obs_spec().dim);
    for (size_t t = 0; t < num_alphas; ++t) {
      const double alpha = static_cast<double>(t) / static_cast<double>(num_alphas - 1);
      env::State s(dim);
      for (size_t k = 0; k < dim; ++k) s[k] = (1.0 - alpha) * c.start[k] + alpha * c.goal[k];
      process.observe(s, c.validation_obs.row(t));
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {
nlohmann::json traces_to_json(const std::vector<InterpolationTrace>& traces) {
  nlohmann::json doc = nlohmann::json::array();
  for (size_t p = 0; p < traces.size(); ++p) {
    const auto& t = traces[p];
    nlohmann::json steps = nlohmann::json::array();
    for (size_t i = 0; i < t.alphas.size(); ++i) {
      steps.push_back({{"alpha", t.alphas[i]}, {"retrieved_index", t.perm[i]}, {"similarity", t.score[i]}});
    }
    doc.push_back({{"pair", p}, {"permutation_error", t.error}, {"steps", steps}});
  }
  return doc;
}
}  // namespace

void write_interp_json(const std::vector<InterpolationTrace>& representation,
                       const std::vector<InterpolationTrace>& pixel,
                       const std::filesystem::path& path) {
  const nlohmann::json doc = {{"representation", traces_to_json(representation)},
                              {"pixel", traces_to_json(pixel)}};
  std::ofstream f;
  open_for_write(f, path);
  f << doc.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- ablations

Axis parse_axis(const std::string& text) {
  if (text == "mlp_width_depth") return Axis::mlp_width_depth;
  if (text == "batch_size") return Axis::batch_size;
  if (text == "cold_init_range") return Axis::cold_init_range;
  if (text == "layer_norm") return Axis::layer_norm;
  if (text == "augmentation") return Axis::augmentation;
  if (text == "repr_dim") return Axis::repr_dim;
  throw InvalidArgument("unknown ablation axis '" + text + "'");
}

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::mlp_width_depth: return "mlp_width_depth";
    case Axis::batch_size: return "batch_size";
    case Axis::cold_init_range: return "cold_init_range";
    case Axis::layer_norm: return "layer_norm";
    case Axis::augmentation: return "augmentation";
    case Axis::repr_dim: return "repr_dim";
  }
  return "?";
}

algo::TrainConfig apply_axis(const algo::TrainConfig& base, Axis axis, const std::string& value) {
  algo::TrainConfig c = base;
  switch (axis) {
    case Axis::mlp_width_depth: {
      const auto x = value.find('x');
      if (x == std::string::npos) throw InvalidArgument("mlp_width_depth expects WIDTHxDEPTH, got '" + value + "'");
      c.mlp_width = parse_count(value.substr(0, x), "mlp width");
      c.mlp_depth = parse_count(value.substr(x + 1), "mlp depth");
      break;
    }
    case Axis::batch_size: c.batch_size = parse_count(value, "batch_size"); break;
    case Axis::cold_init_range: c.cold_init_range = parse_number(value, "cold_init_range"); break;
    case Axis::layer_norm:
      if (value != "true" && value != "false") throw InvalidArgument("layer_norm expects true or false");
      c.use_layer_norm = value == "true";
      break;
    case Axis::augmentation: c.aug_prob = parse_number(value, "aug_prob"); break;
    case Axis::repr_dim: c.repr_dim = parse_count(value, "repr_dim"); break;
  }
  c.validate();
  return c;
}

std::vector<AblationRow> run_ablation(const algo::TrainConfig& base, Axis axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<uint64_t>& seeds,
                                      const AblationSetup& setup) {
  if (values.empty()) throw InvalidArgument("run_ablation: no values");
  if (seeds.empty()) throw InvalidArgument("run_ablation: no seeds");
  if (!setup.process || !setup.train_store || !setup.held_out_store) {
    throw InvalidArgument("run_ablation: process and stores are required");
  }
  const auto goals = sample_goals(*setup.process, setup.num_eval_goals, setup.eval.seed);
  std::vector<AblationRow> rows;
  for (const auto& value : values) {
    const auto variant = apply_axis(base, axis, value);
    const size_t hb = setup.held_out_batch_size ? setup.held_out_batch_size : variant.batch_size;
    const auto held_out = make_batches(*setup.held_out_store, *setup.process,
                                       setup.num_held_out_batches, hb, variant.gamma, 0x4e1d);
    for (const uint64_t seed : seeds) {
      auto cfg = variant;
      cfg.seed = seed;
      try {
        const auto agent = algo::train(cfg, *setup.train_store, *setup.process, {}, setup.train);
        const auto report = evaluate_policy(*setup.process, greedy_policy(*setup.process, agent), goals, setup.eval);
        rows.push_back({value, seed, report.success_rate, binary_accuracy(agent.critic, held_out)});
      } catch (const TrainingDivergence& e) {
        throw TrainingDivergence(to_string(axis) + "=" + value + " seed=" + std::to_string(seed) +
                                     ": " + e.what(),
                                 e.step());
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::ofstream f;
  open_for_write(f, path);
  f << "axis_value,seed,success_rate,binary_accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%llu,%.9g,%.9g\n", static_cast<unsigned long long>(r.seed),
                  r.success_rate, r.binary_accuracy);
    f << r.axis_value << buf;
  }
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace scrl::analysis
