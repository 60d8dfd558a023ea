#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <future>
#include <sstream>

#include "scrl/algorithm.hpp"
#include "scrl/errors.hpp"

namespace scrl::algo {

namespace {

constexpr uint64_t kInitStream = ~uint64_t{0};

enum StepStream : uint64_t { kBatchStream = 0, kCriticStream = 1, kActorStream = 2 };

uint64_t step_stream(uint64_t step, StepStream which) { return (step << 2) | which; }

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(std::string(name) + " must lie in [0, 1]");
}

// Adam step counts are stored as two exactly representable float halves.
std::vector<float> encode_count(uint64_t t) {
  return {static_cast<float>(t >> 24), static_cast<float>(t & 0xFFFFFF)};
}
uint64_t decode_count(const std::vector<float>& v) {
  if (v.size() != 2) throw IncompatibleCheckpoint("malformed optimizer step count");
  return (static_cast<uint64_t>(v[0]) << 24) | static_cast<uint64_t>(v[1]);
}

void restore_adam(nn::AdamState& state, const nn::Checkpoint& ckpt, const std::string& name) {
  const auto& m = ckpt.blob(name + "_m");
  const auto& v = ckpt.blob(name + "_v");
  if (m.size() != state.m.size() || v.size() != state.v.size()) {
    throw IncompatibleCheckpoint("optimizer state '" + name + "' has the wrong size");
  }
  state.m = m;
  state.v = v;
  state.t = decode_count(ckpt.blob(name + "_t"));
}

void add_adam(nn::Checkpoint& ckpt, const nn::AdamState& state, const std::string& name) {
  ckpt.blobs.emplace_back(name + "_m", state.m);
  ckpt.blobs.emplace_back(name + "_v", state.v);
  ckpt.blobs.emplace_back(name + "_t", encode_count(state.t));
}

std::vector<float> to_vector(std::span<const float> s) { return {s.begin(), s.end()}; }

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0, 1)");
  check_unit(lambda, "lambda");
  check_unit(aug_prob, "aug_prob");
  if (batch_size < 2) throw InvalidArgument("batch_size must be at least 2");
  if (repr_dim == 0) throw InvalidArgument("repr_dim must be positive");
  if (!(lr >= 0.0)) throw InvalidArgument("lr must be non-negative");
  if (!(cold_init_range >= 0.0)) throw InvalidArgument("cold_init_range must be non-negative");
  if (!(td_weight_clip > 0.0)) throw InvalidArgument("td_weight_clip must be positive");
  if (steps_per_epoch == 0) throw InvalidArgument("steps_per_epoch must be positive");
  if (!(policy_std > 0.0)) throw InvalidArgument("policy_std must be positive");
}

std::string to_string(CriticMode mode) { return mode == CriticMode::mc ? "mc" : "td"; }
std::string to_string(NextActionSource source) {
  return source == NextActionSource::policy ? "policy" : "dataset";
}
CriticMode parse_critic_mode(const std::string& text) {
  if (text == "mc") return CriticMode::mc;
  if (text == "td") return CriticMode::td;
  throw InvalidArgument("critic_mode must be 'mc' or 'td', got '" + text + "'");
}
NextActionSource parse_next_action_source(const std::string& text) {
  if (text == "policy") return NextActionSource::policy;
  if (text == "dataset") return NextActionSource::dataset;
  throw InvalidArgument("td_next_action must be 'policy' or 'dataset', got '" + text + "'");
}

Agent make_agent(const TrainConfig& config, const env::GoalProcess& process) {
  config.validate();
  Agent agent;
  agent.obs = process.obs_spec();
  const auto action = process.action_spec();

  nn::EncoderSpec spec;
  spec.cnn = agent.obs.kind == env::ObsKind::image;
  spec.cnn_spec = config.cnn;
  spec.mlp_width = config.mlp_width;
  spec.mlp_depth = config.mlp_depth;
  spec.layer_norm = config.use_layer_norm;

  env::ObsSpec stacked = agent.obs;
  stacked.dim *= 2;
  stacked.channels *= 2;

  agent.critic.phi = nn::Network(nn::build_encoder(spec, agent.obs, action.encoded_dim(), config.repr_dim));
  agent.critic.psi = nn::Network(nn::build_encoder(spec, agent.obs, 0, config.repr_dim));
  agent.policy.net = nn::Network(nn::build_encoder(spec, stacked, 0, action.size));
  agent.policy.kind = action.kind;
  agent.policy.action_dim = action.size;
  agent.policy.std = config.policy_std;

  Rng rng = make_rng(config.seed, kInitStream);
  for (nn::Network* net : {&agent.critic.phi, &agent.critic.psi, &agent.policy.net}) {
    nn::fan_in_init(*net, rng);
    nn::cold_init(*net, config.cold_init_range, rng);
  }
  if (config.critic_mode == CriticMode::td && config.target_period > 0) agent.target = agent.critic;

  agent.phi_opt = nn::AdamState(agent.critic.phi.num_params());
  agent.psi_opt = nn::AdamState(agent.critic.psi.num_params());
  agent.policy_opt = nn::AdamState(agent.policy.net.num_params());
  return agent;
}

std::string agent_descriptor(const Agent& agent) {
  std::ostringstream os;
  os << "phi{" << agent.critic.phi.arch().describe() << "} psi{"
     << agent.critic.psi.arch().describe() << "} policy{" << agent.policy.net.arch().describe()
     << "} action=" << (agent.policy.kind == env::ActionKind::discrete ? "discrete" : "continuous")
     << " target=" << (agent.target ? 1 : 0);
  return os.str();
}

nn::Checkpoint to_checkpoint(const Agent& agent, uint64_t step) {
  nn::Checkpoint ckpt;
  ckpt.descriptor = agent_descriptor(agent);
  ckpt.step = step;
  ckpt.blobs.emplace_back("phi", to_vector(agent.critic.phi.params()));
  ckpt.blobs.emplace_back("psi", to_vector(agent.critic.psi.params()));
  ckpt.blobs.emplace_back("policy", to_vector(agent.policy.net.params()));
  if (agent.target) {
    ckpt.blobs.emplace_back("target_phi", to_vector(agent.target->phi.params()));
    ckpt.blobs.emplace_back("target_psi", to_vector(agent.target->psi.params()));
  }
  add_adam(ckpt, agent.phi_opt, "phi_adam");
  add_adam(ckpt, agent.psi_opt, "psi_adam");
  add_adam(ckpt, agent.policy_opt, "policy_adam");
  return ckpt;
}

void restore(Agent& agent, const nn::Checkpoint& ckpt) {
  const std::string expected = agent_descriptor(agent);
  if (ckpt.descriptor != expected) {
    throw IncompatibleCheckpoint("checkpoint architecture '" + ckpt.descriptor +
                                 "' does not match '" + expected + "'");
  }
  agent.critic.phi.load_params(ckpt.blob("phi"));
  agent.critic.psi.load_params(ckpt.blob("psi"));
  agent.policy.net.load_params(ckpt.blob("policy"));
  if (agent.target) {
    agent.target->phi.load_params(ckpt.blob("target_phi"));
    agent.target->psi.load_params(ckpt.blob("target_psi"));
  }
  restore_adam(agent.phi_opt, ckpt, "phi_adam");
  restore_adam(agent.psi_opt, ckpt, "psi_adam");
  restore_adam(agent.policy_opt, ckpt, "policy_adam");
}

std::string metrics_header() {
  return "step,critic_loss,actor_loss,bc_loss,binary_accuracy,pos_logit_mean,neg_logit_mean,wall_ms";
}

std::string metrics_row(const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f",
                static_cast<unsigned long long>(r.step), r.critic_loss, r.actor_loss, r.bc_loss,
                r.binary_accuracy, r.pos_logit_mean, r.neg_logit_mean, r.wall_ms);
  return buf;
}

void train(Agent& agent, const TrainConfig& config, const data::TrajectoryStore& store,
           const env::GoalProcess& process, uint64_t start, const TrainHooks& hooks,
           const TrainOptions& options) {
  config.validate();
  if (store.num_transitions() == 0) throw InvalidArgument("train: empty trajectory store");
  if (start > config.total_steps) throw InvalidArgument("train: start step beyond total_steps");

  data::BatchOptions batch_opts;
  batch_opts.require_next_action =
      config.critic_mode == CriticMode::td && config.td_next_action == NextActionSource::dataset;
  const nn::AdamOptions adam{config.lr};
  const TdOptions td{config.gamma, config.td_weight_clip, config.td_next_action};

  // Each step's batch depends only on (seed, step), so prefetching on worker
  // threads does not change results.
  auto make_batch = [&](uint64_t step) {
    Rng rng = make_rng(config.seed, step_stream(step, kBatchStream));
    return data::assemble_batch(store, process, config.batch_size, config.gamma, rng, batch_opts);
  };
  const size_t workers = std::max<size_t>(1, options.workers);
  std::deque<std::future<data::ContrastiveBatch>> pending;
  uint64_t next_request = start;
  auto fill = [&] {
    while (workers > 1 && pending.size() < workers && next_request < config.total_steps) {
      pending.push_back(std::async(std::launch::async, make_batch, next_request++));
    }
  };

  for (uint64_t step = start; step < config.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    data::ContrastiveBatch raw;
    if (workers > 1) {
      fill();
      raw = pending.front().get();
      pending.pop_front();
    } else {
      raw = make_batch(step);
    }
    auto batch = to_training_batch<float>(raw);
    LossReport report;
    report.step = step;
    try {
      Rng critic_rng = make_rng(config.seed, step_stream(step, kCriticStream));
      if (config.augment_critic) {
        augment_rows(batch.states, agent.obs, config.aug_prob, critic_rng);
        augment_rows(batch.goals, agent.obs, config.aug_prob, critic_rng);
        augment_rows(batch.next_states, agent.obs, config.aug_prob, critic_rng);
      }
      agent.critic.zero_grad();
      const CriticStats cs =
          config.critic_mode == CriticMode::mc
              ? mc_critic_gradients(agent.critic, batch)
              : td_critic_gradients(agent.critic, agent.target ? &*agent.target : nullptr,
                                    agent.policy, batch, agent.obs, td, critic_rng);
      if (!std::isfinite(cs.loss)) throw TrainingDivergence("non-finite critic loss");
      nn::adam_step<float>(agent.critic.phi.params(), agent.critic.phi.grads(), agent.phi_opt, adam);
      nn::adam_step<float>(agent.critic.psi.params(), agent.critic.psi.grads(), agent.psi_opt, adam);
      if (agent.target && (step + 1) % config.target_period == 0) *agent.target = agent.critic;
      report.critic_loss = cs.loss;
      report.binary_accuracy = cs.binary_accuracy;
      report.pos_logit_mean = cs.pos_logit_mean;
      report.neg_logit_mean = cs.neg_logit_mean;

      if (config.train_actor) {
        Rng actor_rng = make_rng(config.seed, step_stream(step, kActorStream));
        const auto actor_batch = config.augment_critic ? to_training_batch<float>(raw) : batch;
        agent.policy.net.zero_grad();
        const ActorStats as = actor_gradients(agent.policy, agent.critic, actor_batch, agent.obs,
                                              config.lambda, config.aug_prob, actor_rng);
        nn::adam_step<float>(agent.policy.net.params(), agent.policy.net.grads(), agent.policy_opt,
                             adam);
        report.actor_loss = as.loss;
        report.bc_loss = as.bc_loss;
        report.critic_term_of_actor = as.critic_term;
      }
    } catch (const TrainingDivergence& e) {
      if (e.step() >= 0) throw;
      throw TrainingDivergence(e.what(), static_cast<int64_t>(step));
    }
    if (options.record_timing) {
      report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (hooks.on_step) hooks.on_step(report);
    if ((step + 1) % config.steps_per_epoch == 0 && hooks.on_epoch) {
      hooks.on_epoch((step + 1) / config.steps_per_epoch, to_checkpoint(agent, step + 1));
    }
  }
}

Agent train(const TrainConfig& config, const data::TrajectoryStore& store,
            const env::GoalProcess& process, const TrainHooks& hooks, const TrainOptions& options) {
  Agent agent = make_agent(config, process);
  train(agent, config, store, process, 0, hooks, options);
  return agent;
}

}  // namespace scrl::algo
