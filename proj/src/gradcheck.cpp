#include "scrl/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "scrl/algorithm.hpp"
#include "scrl/errors.hpp"
#include "scrl/nn.hpp"

namespace scrl::gradcheck {

namespace {

using Net = nn::BasicNetwork<double>;
using Mat = Tensor<double>;
using Critic = algo::BasicCriticPair<double>;
using Policy = algo::BasicPolicyNet<double>;

constexpr double kKinkTolerance = 1e-5;

Mat gaussian(size_t rows, size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m = Mat::matrix(rows, cols);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

Mat uniform(size_t rows, size_t cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m = Mat::matrix(rows, cols);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

Mat one_hot(size_t rows, size_t n, Rng& rng) {
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  Mat m = Mat::matrix(rows, n);
  for (size_t r = 0; r < rows; ++r) m(r, pick(rng)) = 1.0;
  return m;
}

// Fan-in init plus noise, so layer-norm gains and biases are not trivial.
Net random_net(const nn::Architecture& arch, Rng& rng) {
  Net net(arch);
  nn::fan_in_init(net, rng);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& p : net.params()) p += n(rng);
  return net;
}

std::vector<double> concat(std::initializer_list<std::span<const double>> parts) {
  std::vector<double> out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Problem network_problem(const nn::Architecture& arch, size_t batch, Rng& rng, bool wrt_params,
                        bool wrt_input, bool wrt_side) {
  struct State {
    Net net;
    Mat x, side, r;
  };
  auto s = std::make_shared<State>();
  s->net = random_net(arch, rng);
  s->x = gaussian(batch, arch.input_dim, rng);
  if (arch.side_dim > 0) s->side = gaussian(batch, arch.side_dim, rng);
  s->r = gaussian(batch, arch.output_dim(), rng);
  const Mat* side = arch.side_dim > 0 ? &s->side : nullptr;

  Problem p;
  p.owner = s;
  if (wrt_params) p.values.push_back(s->net.params());
  if (wrt_input) p.values.push_back(s->x.values());
  if (wrt_side) p.values.push_back(s->side.values());
  p.loss = [s, side] {
    const Mat y = s->net.forward(s->x, side);
    double acc = 0;
    for (size_t i = 0; i < y.size(); ++i) acc += y[i] * s->r[i];
    return acc;
  };
  p.analytic = [s, side, wrt_params, wrt_input, wrt_side] {
    Net::Tape tape;
    s->net.forward(s->x, side, &tape);
    s->net.zero_grad();
    const auto g = s->net.backward(tape, s->r, {wrt_params, wrt_input});
    std::vector<double> out;
    if (wrt_params) out = concat({s->net.grads()});
    if (wrt_input) out.insert(out.end(), g.input.values().begin(), g.input.values().end());
    if (wrt_side) out.insert(out.end(), g.side.values().begin(), g.side.values().end());
    return out;
  };
  return p;
}

env::ObsSpec features(size_t dim) { return {env::ObsKind::features, dim, 0, 0, 0}; }
env::ObsSpec image(size_t h, size_t w, size_t c) { return {env::ObsKind::image, h * w * c, h, w, c}; }

nn::EncoderSpec small_spec(bool cnn) {
  nn::EncoderSpec spec;
  spec.cnn = cnn;
  spec.cnn_spec.channels = {3, 4, 4};
  spec.cnn_spec.kernels = {3, 3, 3};
  spec.cnn_spec.strides = {2, 1, 1};
  spec.cnn_spec.pads = {1, 1, 1};
  spec.mlp_width = 8;
  spec.mlp_depth = 2;
  return spec;
}

Critic random_critic(const env::ObsSpec& obs, size_t action_dim, size_t d, Rng& rng) {
  const auto spec = small_spec(obs.kind == env::ObsKind::image);
  Critic c;
  c.phi = random_net(nn::build_encoder(spec, obs, action_dim, d), rng);
  c.psi = random_net(nn::build_encoder(spec, obs, 0, d), rng);
  return c;
}

Policy random_policy(const env::ObsSpec& obs, env::ActionKind kind, size_t action_dim, Rng& rng) {
  env::ObsSpec stacked = obs;
  stacked.dim *= 2;
  stacked.channels *= 2;
  Policy p;
  p.net = random_net(nn::build_encoder(small_spec(obs.kind == env::ObsKind::image), stacked, 0, action_dim), rng);
  p.kind = kind;
  p.action_dim = action_dim;
  p.std = 0.15;
  return p;
}

algo::TrainingBatch<double> random_batch(const env::ObsSpec& obs, env::ActionKind kind,
                                         size_t action_dim, size_t b, Rng& rng) {
  algo::TrainingBatch<double> batch;
  batch.size = b;
  const bool img = obs.kind == env::ObsKind::image;
  auto observation = [&] { return img ? uniform(b, obs.dim, rng, 0.0, 1.0) : gaussian(b, obs.dim, rng); };
  auto action = [&] {
    return kind == env::ActionKind::discrete ? one_hot(b, action_dim, rng)
                                             : uniform(b, action_dim, rng, -0.9, 0.9);
  };
  batch.states = observation();
  batch.goals = observation();
  batch.next_states = observation();
  batch.actions = action();
  batch.next_actions = action();
  batch.has_next_actions = true;
  return batch;
}

Problem critic_problem(bool td, algo::NextActionSource source, Rng& rng) {
  struct State {
    Critic critic, target;
    Policy policy;
    algo::TrainingBatch<double> batch;
    env::ObsSpec obs;
    uint64_t sample_seed = 0;
  };
  auto s = std::make_shared<State>();
  s->obs = features(5);
  s->critic = random_critic(s->obs, 5, 4, rng);
  s->target = random_critic(s->obs, 5, 4, rng);
  s->policy = random_policy(s->obs, env::ActionKind::discrete, 5, rng);
  s->batch = random_batch(s->obs, env::ActionKind::discrete, 5, 4, rng);
  s->sample_seed = rng();

  auto run = [s, td, source] {
    s->critic.zero_grad();
    if (!td) return algo::mc_critic_gradients(s->critic, s->batch).loss;
    Rng r = make_rng(s->sample_seed);
    const algo::TdOptions opts{0.9, 20.0, source};
    return algo::td_critic_gradients(s->critic, &s->target, s->policy, s->batch, s->obs, opts, r).loss;
  };
  Problem p;
  p.owner = s;
  p.values = {s->critic.phi.params(), s->critic.psi.params()};
  p.loss = run;
  p.analytic = [s, run] {
    run();
    return concat({s->critic.phi.grads(), s->critic.psi.grads()});
  };
  return p;
}

Problem actor_problem(const env::ObsSpec& obs, env::ActionKind kind, size_t action_dim,
                      double aug_prob, Rng& rng) {
  struct State {
    Critic critic;
    Policy policy;
    algo::TrainingBatch<double> batch;
    env::ObsSpec obs;
    uint64_t sample_seed = 0;
    double aug_prob = 0;
  };
  auto s = std::make_shared<State>();
  s->obs = obs;
  s->aug_prob = aug_prob;
  s->critic = random_critic(obs, action_dim, 4, rng);
  s->policy = random_policy(obs, kind, action_dim, rng);
  s->batch = random_batch(obs, kind, action_dim, 4, rng);
  s->sample_seed = rng();

  auto run = [s] {
    s->policy.net.zero_grad();
    Rng r = make_rng(s->sample_seed);
    return algo::actor_gradients(s->policy, s->critic, s->batch, s->obs, 0.5, s->aug_prob, r).loss;
  };
  Problem p;
  p.owner = s;
  p.values = {s->policy.net.params()};
  p.loss = run;
  p.analytic = [s, run] {
    run();
    return concat({s->policy.net.grads()});
  };
  return p;
}

// The contrastive loss's gradient on a negative goal representation, taken
// through the engine, against -sigma(phi . psi) phi. Row 1 has phi = 0, so
// psi_1 only appears in the negative pair (0, 1); the mean over the two
// negatives scales the term by 1/2.
Check hard_negative_check(uint64_t seed) {
  constexpr size_t d = 5;
  Rng rng = make_rng(seed, 99);
  nn::Architecture phi_arch{d, 1, {nn::ConcatSide{d, 1}, nn::Dense{d + 1, d}}};
  nn::Architecture psi_arch{d, 0, {nn::Dense{d, d}}};
  Net phi(phi_arch), psi(psi_arch);
  for (size_t k = 0; k < d; ++k) {
    phi.params()[k * d + k] = 1.0;  // W is [in, out]; the action row stays 0
    psi.params()[k * d + k] = 1.0;
  }
  Mat states = gaussian(2, d, rng);
  for (size_t k = 0; k < d; ++k) states(1, k) = 0.0;
  const Mat actions = Mat::matrix(2, 1);
  const Mat goals = gaussian(2, d, rng);

  const Mat phi_out = phi.forward(states, &actions);
  Net::Tape tape;
  const Mat psi_out = psi.forward(goals, nullptr, &tape);
  Mat logits = Mat::matrix(2, 2);
  for (size_t i = 0; i < 2; ++i)
    for (size_t j = 0; j < 2; ++j)
      for (size_t k = 0; k < d; ++k) logits(i, j) += phi_out(i, k) * psi_out(j, k);
  Mat dlogits;
  algo::mc_critic_loss(logits, &dlogits);
  Mat dpsi = Mat::matrix(2, d);
  for (size_t i = 0; i < 2; ++i)
    for (size_t j = 0; j < 2; ++j)
      for (size_t k = 0; k < d; ++k) dpsi(j, k) += dlogits(i, j) * phi_out(i, k);
  const auto grads = psi.input_gradients(tape, dpsi, true);

  std::vector<double> engine(d);
  for (size_t k = 0; k < d; ++k) engine[k] = -2.0 * grads.input(1, k);
  const auto closed = algo::hard_negative_gradient(phi_out.row(0), psi_out.row(1));
  Check c{"hard_negative_closed_form", relative_error(engine, closed), d, 1, false};
  c.passed = c.rel_error < 1e-12;
  return c;
}

}  // namespace

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("relative_error: size mismatch");
  double diff = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  if (scale == 0.0) return 0.0;
  return std::sqrt(diff) / scale;
}

std::vector<double> numeric_gradient(const std::function<double()>& loss,
                                     const std::vector<std::span<double>>& xs, double h) {
  std::vector<double> out;
  for (auto x : xs) {
    for (auto& v : x) {
      const double saved = v;
      v = saved + h;
      const double up = loss();
      v = saved - h;
      const double down = loss();
      v = saved;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

Check run_check(const std::string& name, const std::function<Problem(Rng&)>& make, uint64_t seed,
                size_t max_attempts) {
  for (size_t attempt = 1; attempt <= max_attempts; ++attempt) {
    Rng rng = make_rng(seed, attempt);
    Problem p = make(rng);
    const auto coarse = numeric_gradient(p.loss, p.values, kStep);
    const auto fine = numeric_gradient(p.loss, p.values, kStep / 2);
    if (relative_error(coarse, fine) > kKinkTolerance) continue;
    const auto analytic = p.analytic();
    Check c{name, relative_error(analytic, coarse), coarse.size(), attempt, false};
    c.passed = c.rel_error < kTolerance;
    return c;
  }
  return {name, std::numeric_limits<double>::infinity(), 0, max_attempts, false};
}

std::vector<Check> run_suite(uint64_t seed) {
  using namespace nn;
  kernels::ConvGeometry conv{6, 6, 2, 3, 2, 1, 3};
  const auto mlp = build_encoder(small_spec(false), features(5), 3, 4);
  const auto cnn = build_encoder(small_spec(true), image(8, 8, 2), 2, 4);

  struct Item {
    std::string name;
    std::function<Problem(Rng&)> make;
  };
  const std::vector<Item> items = {
      {"dense", [](Rng& r) { return network_problem({5, 0, {Dense{5, 4}}}, 3, r, true, true, false); }},
      {"conv", [conv](Rng& r) { return network_problem({conv.in_size(), 0, {Conv{conv}}}, 2, r, true, true, false); }},
      {"layer_norm", [](Rng& r) { return network_problem({6, 0, {LayerNorm{6}}}, 3, r, true, true, false); }},
      {"relu", [](Rng& r) { return network_problem({6, 0, {Relu{6}}}, 3, r, false, true, false); }},
      {"concat_side", [](Rng& r) { return network_problem({4, 3, {ConcatSide{4, 3}, Dense{7, 5}}}, 3, r, true, true, true); }},
      {"mlp_encoder", [mlp](Rng& r) { return network_problem(mlp, 3, r, true, true, true); }},
      {"cnn_encoder", [cnn](Rng& r) { return network_problem(cnn, 2, r, true, false, true); }},
      {"mc_critic_loss", [](Rng& r) { return critic_problem(false, algo::NextActionSource::dataset, r); }},
      {"td_critic_loss_dataset_actions", [](Rng& r) { return critic_problem(true, algo::NextActionSource::dataset, r); }},
      {"td_critic_loss_policy_actions", [](Rng& r) { return critic_problem(true, algo::NextActionSource::policy, r); }},
      {"actor_loss_discrete", [](Rng& r) { return actor_problem(features(5), env::ActionKind::discrete, 5, 0.0, r); }},
      {"actor_loss_continuous", [](Rng& r) { return actor_problem(features(3), env::ActionKind::continuous, 2, 0.0, r); }},
      {"actor_loss_image_augmented", [](Rng& r) { return actor_problem(image(10, 10, 1), env::ActionKind::continuous, 2, 0.5, r); }},
  };
  std::vector<Check> out;
  for (size_t i = 0; i < items.size(); ++i) out.push_back(run_check(items[i].name, items[i].make, seed + i));
  out.push_back(hard_negative_check(seed));
  return out;
}

}  // namespace scrl::gradcheck
