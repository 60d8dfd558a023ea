#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "scrl/algorithm.hpp"
#include "scrl/analysis.hpp"
#include "scrl/config.hpp"
#include "scrl/dataset.hpp"
#include "scrl/env.hpp"
#include "scrl/errors.hpp"
#include "scrl/gradcheck.hpp"
#include "scrl/nn.hpp"

namespace scrl::cli {

namespace fs = std::filesystem;

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw InvalidArgument("empty list '" + text + "'");
  return out;
}

// The store must come from the configured process.
void check_store(const data::TrajectoryStore& store, const env::GoalProcess& process) {
  const std::string stored = env::make_process(store.metadata().env_id)->id();
  if (stored != process.id()) {
    throw InvalidArgument("data was generated for env '" + stored + "' but the config describes '" +
                          process.id() + "'");
  }
}

algo::Agent load_agent(const config::RunConfig& cfg, const env::GoalProcess& process,
                       const fs::path& checkpoint) {
  algo::Agent agent = algo::make_agent(cfg.train, process);
  algo::restore(agent, nn::load_checkpoint(checkpoint));
  return agent;
}

// Keeps the header and the rows with step < `step`.
void truncate_metrics(const fs::path& path, uint64_t step) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> keep;
  std::string line;
  if (std::getline(in, line)) keep.push_back(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) < step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

uint64_t parse_seed(const std::string& text) {
  uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw InvalidArgument("bad seed '" + text + "'");
  }
  return v;
}

struct Common {
  std::string config_path;
  std::string checkpoint;
  std::string out_dir;
};

void add_config(CLI::App* cmd, std::string& path) {
  cmd->add_option("--config", path, "Run config (sectioned key = value)")->required();
}

// ---------------------------------------------------------------- commands

struct GenDataArgs {
  std::string env = "grid9";
  std::string behavior = "scripted";
  size_t num_transitions = 250000;
  uint64_t seed = 0;
  std::string out;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.num_transitions == 0) throw InvalidArgument("too few transitions: --num-transitions is 0");
  const auto process = env::make_process(a.env);
  const auto store =
      data::generate_offline(*process, data::Behavior::parse(a.behavior), a.num_transitions, a.seed);
  const fs::path path(a.out);
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  data::save_store(store, path);
  out << "transitions=" << store.num_transitions() << " trajectories=" << store.num_trajectories()
      << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string out_dir;
  std::string resume;
  size_t workers = 1;
  bool timing = false;
};

int train(const TrainArgs& a, std::ostream& out) {
  const auto cfg = config::load_config(a.config_path);
  const auto process = config::make_process(cfg.env);
  const std::string data_path = a.data.empty() ? cfg.data.path : a.data;
  if (data_path.empty()) throw InvalidArgument("no data: pass --data or set data.path");
  const auto store = data::load_store(data_path);
  check_store(store, *process);

  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  const fs::path metrics_path = dir / "metrics.csv";

  algo::Agent agent = algo::make_agent(cfg.train, *process);
  uint64_t start = 0;
  if (!a.resume.empty()) {
    const auto ckpt = nn::load_checkpoint(a.resume);
    algo::restore(agent, ckpt);
    start = ckpt.step;
    truncate_metrics(metrics_path, start);
  }

  std::ofstream metrics(metrics_path, std::ios::binary | (start ? std::ios::app : std::ios::trunc));
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  if (start == 0) metrics << algo::metrics_header() << "\n";
  {
    std::ofstream resolved(dir / "config.ini", std::ios::binary | std::ios::trunc);
    resolved << config::format_config(cfg);
    if (!resolved) throw IoError("cannot write " + (dir / "config.ini").string());
  }

  algo::TrainHooks hooks;
  hooks.on_step = [&](const algo::LossReport& r) { metrics << algo::metrics_row(r) << "\n"; };
  hooks.on_epoch = [&](uint64_t epoch, const nn::Checkpoint& ckpt) {
    metrics.flush();
    if (!metrics) throw IoError("cannot write " + metrics_path.string());
    nn::save_checkpoint(ckpt, dir / ("ckpt_epoch" + std::to_string(epoch)));
  };
  algo::TrainOptions options;
  options.workers = a.workers;
  options.record_timing = a.timing;
  try {
    algo::train(agent, cfg.train, store, *process, start, hooks, options);
  } catch (const TrainingDivergence&) {
    metrics.flush();
    throw;
  }
  metrics.flush();
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  nn::save_checkpoint(algo::to_checkpoint(agent, cfg.train.total_steps), dir / "ckpt_final");
  out << "trained " << cfg.train.total_steps - start << " steps; outputs in " << dir.string() << "\n";
  return kOk;
}

struct EvalArgs {
  Common c;
  size_t num_goals = 0;
  int64_t seed = -1;
};

int eval(const EvalArgs& a, std::ostream& out) {
  const auto cfg = config::load_config(a.c.config_path);
  const auto process = config::make_process(cfg.env);
  const auto agent = load_agent(cfg, *process, a.c.checkpoint);
  const size_t n = a.num_goals ? a.num_goals : cfg.eval.num_goals;
  const uint64_t seed = a.seed >= 0 ? static_cast<uint64_t>(a.seed) : cfg.eval.seed;
  analysis::EvalOptions opts;
  opts.horizon = cfg.eval.horizon;
  opts.criterion = config::resolve_criterion(cfg.eval.criterion, *process);
  opts.seed = seed;
  const auto report = analysis::evaluate_policy(*process, analysis::greedy_policy(*process, agent),
                                                analysis::sample_goals(*process, n, seed), opts);
  const fs::path dir(a.c.out_dir);
  ensure_dir(dir);
  analysis::write_eval_csv(report, dir / "eval.csv");
  out << "success_rate=" << format("%.6g", report.success_rate) << " (" << report.successes << "/"
      << report.num_rollouts << ")\n";
  return kOk;
}

struct InterpArgs {
  Common c;
  size_t pairs = 10;
  size_t num_alphas = 8;
  double min_distance = 0.3;
  uint64_t seed = 0;
};

int interp(const InterpArgs& a, std::ostream& out) {
  const auto cfg = config::load_config(a.c.config_path);
  const auto process = config::make_process(cfg.env);
  const auto agent = load_agent(cfg, *process, a.c.checkpoint);
  const auto cases =
      analysis::straight_line_cases(*process, a.pairs, a.num_alphas, a.min_distance, a.seed);
  std::vector<analysis::InterpolationTrace> rep, pix;
  double rep_err = 0, pix_err = 0;
  for (const auto& c : cases) {
    rep.push_back(analysis::interpolate_representations(agent.critic, c.start_obs, c.goal_obs,
                                                        c.validation_obs, a.num_alphas));
    pix.push_back(analysis::interpolate_pixels(c.start_obs, c.goal_obs, c.validation_obs, a.num_alphas));
    rep_err += static_cast<double>(rep.back().error);
    pix_err += static_cast<double>(pix.back().error);
  }
  const fs::path dir(a.c.out_dir);
  ensure_dir(dir);
  analysis::write_interp_json(rep, pix, dir / "interp.json");
  const double n = static_cast<double>(cases.size());
  out << "mean_permutation_error representation=" << format("%.6g", rep_err / n)
      << " pixel=" << format("%.6g", pix_err / n) << "\n";
  return kOk;
}

struct QtraceArgs {
  Common c;
  size_t rollouts = 10;
  size_t min_steps = 5;
  uint64_t seed = 0;
};

int qtrace(const QtraceArgs& a, std::ostream& out) {
  const auto cfg = config::load_config(a.c.config_path);
  const auto process = config::make_process(cfg.env);
  const auto agent = load_agent(cfg, *process, a.c.checkpoint);
  const auto rollouts = analysis::scripted_rollouts(*process, a.rollouts, a.min_steps, a.seed);
  const fs::path dir(a.c.out_dir);
  ensure_dir(dir);
  const fs::path path = dir / "qtrace.csv";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "rollout,t,q\n";
  double total_rho = 0;
  for (size_t r = 0; r < rollouts.size(); ++r) {
    const auto& ro = rollouts[r];
    const auto q = analysis::q_trace(agent.critic, *process, ro.states, ro.actions, ro.goal);
    std::vector<double> t(q.size());
    for (size_t i = 0; i < q.size(); ++i) {
      t[i] = static_cast<double>(i);
      f << r << "," << i << "," << format("%.9g", q[i]) << "\n";
    }
    total_rho += analysis::spearman(q, t);
  }
  const double mean_rho = total_rho / static_cast<double>(rollouts.size());
  f << "# mean_spearman=" << format("%.9g", mean_rho) << "\n";
  if (!f) throw IoError("cannot write " + path.string());
  out << "mean_spearman=" << format("%.6g", mean_rho) << "\n";
  return kOk;
}

struct AblateArgs {
  std::string config_path;
  std::string data;
  std::string held_out;
  std::string out_dir;
  std::string axis;
  std::string values;
  std::string seeds = "0,1,2";
  size_t eval_goals = 50;
  size_t held_out_batches = 10;
  size_t held_out_batch_size = 0;
  size_t workers = 1;
};

int ablate(const AblateArgs& a, std::ostream& out) {
  const auto cfg = config::load_config(a.config_path);
  const auto process = config::make_process(cfg.env);
  const std::string data_path = a.data.empty() ? cfg.data.path : a.data;
  if (data_path.empty()) throw InvalidArgument("no data: pass --data or set data.path");
  const auto store = data::load_store(data_path);
  check_store(store, *process);
  std::optional<data::TrajectoryStore> held;
  if (!a.held_out.empty()) {
    held = data::load_store(a.held_out);
    check_store(*held, *process);
  }
  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(a.seeds)) seeds.push_back(parse_seed(s));

  analysis::AblationSetup setup;
  setup.process = process.get();
  setup.train_store = &store;
  setup.held_out_store = held ? &*held : &store;
  setup.num_eval_goals = a.eval_goals;
  setup.num_held_out_batches = a.held_out_batches;
  setup.held_out_batch_size = a.held_out_batch_size;
  setup.eval.horizon = cfg.eval.horizon;
  setup.eval.criterion = config::resolve_criterion(cfg.eval.criterion, *process);
  setup.eval.seed = cfg.eval.seed;
  setup.train.workers = a.workers;
  const auto rows = analysis::run_ablation(cfg.train, analysis::parse_axis(a.axis),
                                           split_list(a.values), seeds, setup);
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  analysis::write_ablation_csv(rows, dir / "ablation.csv");
  for (const auto& r : rows) {
    out << a.axis << "=" << r.axis_value << " seed=" << r.seed
        << " success_rate=" << format("%.6g", r.success_rate)
        << " binary_accuracy=" << format("%.6g", r.binary_accuracy) << "\n";
  }
  return kOk;
}

int gradcheck(uint64_t seed, const std::string& out_dir, std::ostream& out) {
  const auto checks = gradcheck::run_suite(seed);
  bool ok = true;
  std::ostringstream csv;
  csv << "name,rel_error,num_values,attempts,passed\n";
  for (const auto& c : checks) {
    ok = ok && c.passed;
    char line[160];
    std::snprintf(line, sizeof(line), "%-34s rel_error=%.3e  values=%zu  %s\n", c.name.c_str(),
                  c.rel_error, c.num_values, c.passed ? "ok" : "FAIL");
    out << line;
    csv << c.name << "," << format("%.9g", c.rel_error) << "," << c.num_values << ","
        << c.attempts << "," << (c.passed ? 1 : 0) << "\n";
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    const fs::path path = fs::path(out_dir) / "gradcheck.csv";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << csv.str();
    if (!f) throw IoError("cannot write " + path.string());
  }
  out << (ok ? "all checks passed" : "gradient check FAILED") << "\n";
  return ok ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive goal-conditioned RL: data, training, evaluation, diagnostics"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Collect an offline trajectory store");
  gen_cmd->add_option("--env", gen.env, "Process id: grid<W>[x<H>], point1, point2, pixelpoint");
  gen_cmd->add_option("--behavior", gen.behavior, "scripted | random | mix:<eps>");
  gen_cmd->add_option("--num-transitions", gen.num_transitions, "Transitions to collect");
  gen_cmd->add_option("--seed", gen.seed, "Collection seed");
  gen_cmd->add_option("--out", gen.out, "Output store file")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train an agent; writes metrics.csv and checkpoints");
  add_config(train_cmd, tr.config_path);
  train_cmd->add_option("--data", tr.data, "Store file (default: data.path from the config)");
  train_cmd->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint");
  train_cmd->add_option("--workers", tr.workers, "Batch assembly threads (1: determinism mode)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--timing", tr.timing, "Record wall_ms per step");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy-policy success rate; writes eval.csv");
  add_config(eval_cmd, ev.c.config_path);
  eval_cmd->add_option("--checkpoint", ev.c.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out-dir", ev.c.out_dir, "Output directory")->required();
  eval_cmd->add_option("--num-goals", ev.num_goals, "Rollouts (0: eval.num_goals)");
  eval_cmd->add_option("--seed", ev.seed, "Goal and rollout seed (-1: eval.seed)");

  InterpArgs in;
  auto* interp_cmd =
      app.add_subcommand("interp", "Representation vs pixel interpolation; writes interp.json");
  add_config(interp_cmd, in.c.config_path);
  interp_cmd->add_option("--checkpoint", in.c.checkpoint, "Checkpoint file")->required();
  interp_cmd->add_option("--out-dir", in.c.out_dir, "Output directory")->required();
  interp_cmd->add_option("--pairs", in.pairs, "Start/goal pairs")->check(CLI::PositiveNumber);
  interp_cmd->add_option("--num-alphas", in.num_alphas, "Interpolation steps")
      ->check(CLI::Range(size_t{2}, size_t{1000}));
  interp_cmd->add_option("--min-distance", in.min_distance, "Minimum start/goal distance");
  interp_cmd->add_option("--seed", in.seed, "Pair seed");

  QtraceArgs qt;
  auto* qtrace_cmd =
      app.add_subcommand("qtrace", "Critic values along scripted rollouts; writes qtrace.csv");
  add_config(qtrace_cmd, qt.c.config_path);
  qtrace_cmd->add_option("--checkpoint", qt.c.checkpoint, "Checkpoint file")->required();
  qtrace_cmd->add_option("--out-dir", qt.c.out_dir, "Output directory")->required();
  qtrace_cmd->add_option("--rollouts", qt.rollouts, "Successful rollouts")->check(CLI::PositiveNumber);
  qtrace_cmd->add_option("--min-steps", qt.min_steps, "Minimum rollout length");
  qtrace_cmd->add_option("--seed", qt.seed, "Rollout seed");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one design axis; writes ablation.csv");
  add_config(ablate_cmd, ab.config_path);
  ablate_cmd->add_option("--data", ab.data, "Training store (default: data.path)");
  ablate_cmd->add_option("--held-out", ab.held_out, "Store for binary accuracy (default: training store)");
  ablate_cmd->add_option("--out-dir", ab.out_dir, "Output directory")->required();
  ablate_cmd->add_option("--axis", ab.axis,
                         "mlp_width_depth | batch_size | cold_init_range | layer_norm | "
                         "augmentation | repr_dim")
      ->required();
  ablate_cmd->add_option("--values", ab.values, "Comma-separated axis values (e.g. 256x2,512x4)")
      ->required();
  ablate_cmd->add_option("--seeds", ab.seeds, "Comma-separated training seeds");
  ablate_cmd->add_option("--eval-goals", ab.eval_goals, "Rollouts per variant and seed");
  ablate_cmd->add_option("--held-out-batches", ab.held_out_batches, "Batches for binary accuracy");
  ablate_cmd->add_option("--held-out-batch-size", ab.held_out_batch_size,
                         "Rows per held-out batch (0: the variant's batch size)");
  ablate_cmd->add_option("--workers", ab.workers, "Batch assembly threads")
      ->check(CLI::PositiveNumber);

  uint64_t gc_seed = 0;
  std::string gc_out;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gc_cmd->add_option("--seed", gc_seed, "Instance seed");
  gc_cmd->add_option("--out-dir", gc_out, "Also write gradcheck.csv here");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadArguments;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*train_cmd) return train(tr, out);
    if (*eval_cmd) return eval(ev, out);
    if (*interp_cmd) return interp(in, out);
    if (*qtrace_cmd) return qtrace(qt, out);
    if (*ablate_cmd) return ablate(ab, out);
    if (*gc_cmd) return gradcheck(gc_seed, gc_out, out);
  } catch (const TrainingDivergence& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const CorruptFile& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kBadArguments;
  } catch (const IncompatibleCheckpoint& e) {
    err << "error: incompatible checkpoint: " << e.what() << "\n";
    return kBadArguments;
  } catch (const UnsupportedOperation& e) {
    err << "error: " << e.what() << "\n";
    return kBadArguments;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kBadArguments;
}

}  // namespace scrl::cli
