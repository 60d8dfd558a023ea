#include <algorithm>
#include <cmath>
#include <numbers>

#include "scrl/algorithm.hpp"
#include "scrl/errors.hpp"
#include "scrl/kernels/parallel.hpp"

namespace scrl::algo {

namespace {

using kernels::index_t;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double log_sigmoid(double x) { return -softplus(-x); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class T>
double row_dot(const Tensor<T>& a, size_t i, const Tensor<T>& b, size_t j) {
  const size_t d = a.cols();
  const T* x = a.data() + i * d;
  const T* y = b.data() + j * d;
  double acc = 0;
  for (size_t k = 0; k < d; ++k) acc += static_cast<double>(x[k]) * y[k];
  return acc;
}

template <class T>
Tensor<T> outer_logits(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("critic: representation widths differ");
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.rows());
  kernels::inner_products(a.data(), b.data(), out.data(), a.rows(), b.rows(), a.cols());
  return out;
}

// out[i, :] = sum_j m[i, j] * b[j, :]
template <class T>
Tensor<T> mat_rows(const Tensor<T>& m, const Tensor<T>& b) {
  Tensor<T> out = Tensor<T>::matrix(m.rows(), b.cols());
  kernels::detail::gemm(m.data(), b.data(), out.data(), m.rows(), m.cols(), b.cols(),
                        static_cast<const T*>(nullptr), 0);
  return out;
}

// out[j, :] = sum_i m[i, j] * a[i, :]
template <class T>
Tensor<T> mat_cols(const Tensor<T>& m, const Tensor<T>& a) {
  const auto mt = kernels::detail::transpose(m.data(), m.rows(), m.cols());
  Tensor<T> out = Tensor<T>::matrix(m.cols(), a.cols());
  kernels::detail::gemm(mt.data(), a.data(), out.data(), m.cols(), m.rows(), a.cols(),
                        static_cast<const T*>(nullptr), 0);
  return out;
}

template <class T>
void logit_means(const Tensor<T>& logits, CriticStats& stats) {
  const size_t b = logits.rows();
  double pos = 0, neg = 0;
  for (size_t i = 0; i < b; ++i) {
    for (size_t j = 0; j < b; ++j) (i == j ? pos : neg) += logits(i, j);
  }
  stats.pos_logit_mean = pos / static_cast<double>(b);
  stats.neg_logit_mean = b > 1 ? neg / static_cast<double>(b * (b - 1)) : 0.0;
  stats.binary_accuracy = binary_accuracy(logits);
}

template <class T>
Tensor<T> roll_rows(const Tensor<T>& x) {
  const size_t b = x.rows(), c = x.cols();
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < b; ++i) {
    std::copy_n(x.data() + ((i + 1) % b) * c, c, out.data() + i * c);
  }
  return out;
}

template <class T>
std::vector<double> softmax_row(const T* z, size_t n) {
  double mx = z[0];
  for (size_t k = 1; k < n; ++k) mx = std::max<double>(mx, z[k]);
  std::vector<double> p(n);
  double sum = 0;
  for (size_t k = 0; k < n; ++k) sum += (p[k] = std::exp(z[k] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

template <class T>
double log_softmax_at(const T* z, size_t n, size_t idx) {
  double mx = z[0];
  for (size_t k = 1; k < n; ++k) mx = std::max<double>(mx, z[k]);
  double sum = 0;
  for (size_t k = 0; k < n; ++k) sum += std::exp(z[k] - mx);
  return z[idx] - mx - std::log(sum);
}

template <class T>
size_t argmax_row(const T* x, size_t n) {
  return static_cast<size_t>(std::max_element(x, x + n) - x);
}

// Encoded actions drawn from the policy at the given inputs.
template <class T>
Tensor<T> sample_actions(const BasicPolicyNet<T>& policy, const Tensor<T>& input, Rng& rng) {
  const Tensor<T> out = policy.net.forward(input);
  const size_t b = out.rows(), a = policy.action_dim;
  Tensor<T> actions = Tensor<T>::matrix(b, a);
  if (policy.kind == env::ActionKind::discrete) {
    for (size_t i = 0; i < b; ++i) {
      const auto p = softmax_row(out.data() + i * a, a);
      double u = uniform01(rng);
      size_t k = 0;
      while (k + 1 < a && u >= p[k]) u -= p[k++];
      actions(i, k) = T(1);
    }
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (size_t i = 0; i < b * a; ++i) {
      actions[i] = static_cast<T>(std::tanh(static_cast<double>(out[i])) + policy.std * normal(rng));
    }
  }
  return actions;
}

}  // namespace

// ---------------------------------------------------------------- batches

template <class T>
TrainingBatch<T> to_training_batch(const data::ContrastiveBatch& batch) {
  TrainingBatch<T> out;
  out.size = batch.size;
  out.states = batch.states.cast<T>();
  out.actions = batch.actions.cast<T>();
  out.goals = batch.future_goals.cast<T>();
  out.next_states = batch.next_states.cast<T>();
  out.has_next_actions = batch.has_next_actions;
  if (batch.has_next_actions) out.next_actions = batch.next_actions.cast<T>();
  return out;
}

template <class T>
void augment_rows(Tensor<T>& obs, const env::ObsSpec& spec, double prob, Rng& rng) {
  if (spec.kind != env::ObsKind::image || prob <= 0.0) return;
  if (obs.cols() != spec.dim) throw InvalidArgument("augment_rows: row width mismatch");
  std::vector<float> image(spec.dim);
  for (size_t r = 0; r < obs.rows(); ++r) {
    if (uniform01(rng) >= prob) continue;
    auto row = obs.row(r);
    std::copy(row.begin(), row.end(), image.begin());
    const auto cropped = data::random_crop(image, spec.height, spec.width, spec.channels,
                                           data::kDefaultCropPad, rng);
    std::copy(cropped.begin(), cropped.end(), row.begin());
  }
}

template <class T>
Tensor<T> policy_input(const Tensor<T>& states, const Tensor<T>& goals, const env::ObsSpec& spec) {
  if (states.rows() != goals.rows() || states.cols() != spec.dim || goals.cols() != spec.dim) {
    throw InvalidArgument("policy_input: state/goal shape mismatch");
  }
  const size_t b = states.rows();
  Tensor<T> out = Tensor<T>::matrix(b, 2 * spec.dim);
  if (spec.kind == env::ObsKind::image) {
    const size_t c = spec.channels, pixels = spec.height * spec.width;
    for (size_t r = 0; r < b; ++r) {
      const T* s = states.data() + r * spec.dim;
      const T* g = goals.data() + r * spec.dim;
      T* o = out.data() + r * 2 * spec.dim;
      for (size_t p = 0; p < pixels; ++p) {
        std::copy_n(s + p * c, c, o + p * 2 * c);
        std::copy_n(g + p * c, c, o + p * 2 * c + c);
      }
    }
  } else {
    for (size_t r = 0; r < b; ++r) {
      std::copy_n(states.data() + r * spec.dim, spec.dim, out.data() + r * 2 * spec.dim);
      std::copy_n(goals.data() + r * spec.dim, spec.dim, out.data() + r * 2 * spec.dim + spec.dim);
    }
  }
  return out;
}

// ---------------------------------------------------------------- losses

template <class T>
Tensor<T> critic_logits(const BasicCriticPair<T>& critic, const Tensor<T>& states,
                        const Tensor<T>& actions, const Tensor<T>& goals) {
  const Tensor<T> phi = critic.phi.forward(states, &actions);
  const Tensor<T> psi = critic.psi.forward(goals);
  return outer_logits(phi, psi);
}

template <class T>
double mc_critic_loss(const Tensor<T>& logits, Tensor<T>* grad) {
  const size_t b = logits.rows();
  if (logits.rank() != 2 || logits.cols() != b) throw InvalidArgument("mc_critic_loss: logits must be square");
  if (b < 2) throw InvalidArgument("mc_critic_loss: batch size must be at least 2");
  for (const T v : logits.values()) {
    if (!std::isfinite(static_cast<double>(v))) throw TrainingDivergence("non-finite critic logit");
  }
  if (grad) *grad = Tensor<T>::matrix(b, b);
  const double inv_pos = 1.0 / static_cast<double>(b);
  const double inv_neg = 1.0 / static_cast<double>(b * (b - 1));
  double pos = 0, neg = 0;
  for (size_t i = 0; i < b; ++i) {
    double row_neg = 0;
    for (size_t j = 0; j < b; ++j) {
      // softplus and sigmoid of x from a single exp(-|x|)
      const double x = logits(i, j);
      const double e = std::exp(-std::abs(x));
      const double sp = std::max(x, 0.0) + std::log1p(e);      // softplus(x)
      const double sig = x >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);  // sigma(x)
      if (i == j) {
        pos += x - sp;  // log sigma(x)
        if (grad) (*grad)(i, j) = static_cast<T>(-(1.0 - sig) * inv_pos);
      } else {
        row_neg -= sp;  // log(1 - sigma(x))
        if (grad) (*grad)(i, j) = static_cast<T>(sig * inv_neg);
      }
    }
    neg += row_neg;
  }
  return -(pos * inv_pos + neg * inv_neg);
}

template <class T>
double td_critic_loss(std::span<const T> pos, std::span<const T> neg, std::span<const T> weights,
                      double gamma, std::span<T> dpos, std::span<T> dneg) {
  const size_t b = pos.size();
  if (b == 0 || neg.size() != b || weights.size() != b) {
    throw InvalidArgument("td_critic_loss: inputs must be nonempty and equally sized");
  }
  const bool with_grad = !dpos.empty();
  if (with_grad && (dpos.size() != b || dneg.size() != b)) {
    throw InvalidArgument("td_critic_loss: gradient buffers have the wrong size");
  }
  const double inv = 1.0 / static_cast<double>(b);
  double total = 0;
  for (size_t i = 0; i < b; ++i) {
    const double p = pos[i], n = neg[i], w = weights[i];
    if (!std::isfinite(p) || !std::isfinite(n)) throw TrainingDivergence("non-finite critic logit");
    if (!std::isfinite(w)) throw TrainingDivergence("non-finite importance weight");
    total += (1.0 - gamma) * log_sigmoid(p) - softplus(n) + gamma * w * log_sigmoid(n);
    if (with_grad) {
      dpos[i] = static_cast<T>(-inv * (1.0 - gamma) * (1.0 - sigmoid(p)));
      dneg[i] = static_cast<T>(-inv * (-sigmoid(n) + gamma * w * (1.0 - sigmoid(n))));
    }
  }
  return -total * inv;
}

template <class T>
double binary_accuracy(const Tensor<T>& logits) {
  const size_t b = logits.rows();
  if (b == 0 || logits.cols() != b) throw InvalidArgument("binary_accuracy: logits must be square");
  size_t correct = 0;
  for (size_t i = 0; i < b; ++i) {
    for (size_t j = 0; j < b; ++j) {
      const bool positive = logits(i, j) > T(0);  // sigma(x) > 0.5
      if (positive == (i == j)) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(b * b);
}

std::vector<double> hard_negative_gradient(std::span<const double> phi,
                                           std::span<const double> psi_neg) {
  if (phi.size() != psi_neg.size()) throw InvalidArgument("hard_negative_gradient: size mismatch");
  double logit = 0;
  for (size_t k = 0; k < phi.size(); ++k) logit += phi[k] * psi_neg[k];
  const double s = sigmoid(logit);
  std::vector<double> out(phi.size());
  for (size_t k = 0; k < phi.size(); ++k) out[k] = -s * phi[k];
  return out;
}

template <class T>
CriticStats mc_critic_gradients(BasicCriticPair<T>& critic, const TrainingBatch<T>& batch) {
  typename nn::BasicNetwork<T>::Tape phi_tape, psi_tape;
  const Tensor<T> phi = critic.phi.forward(batch.states, &batch.actions, &phi_tape);
  const Tensor<T> psi = critic.psi.forward(batch.goals, nullptr, &psi_tape);
  const Tensor<T> logits = outer_logits(phi, psi);
  Tensor<T> dlogits;
  CriticStats stats;
  stats.loss = mc_critic_loss(logits, &dlogits);
  logit_means(logits, stats);
  critic.phi.backward(phi_tape, mat_rows(dlogits, psi), {true, false});
  critic.psi.backward(psi_tape, mat_cols(dlogits, phi), {true, false});
  return stats;
}

template <class T>
CriticStats td_critic_gradients(BasicCriticPair<T>& critic, const BasicCriticPair<T>* target,
                                const BasicPolicyNet<T>& policy, const TrainingBatch<T>& batch,
                                const env::ObsSpec& obs, const TdOptions& opts, Rng& rng) {
  const size_t b = batch.size;
  if (b < 2) throw InvalidArgument("td critic: batch size must be at least 2");
  if (!(opts.weight_clip > 0)) throw InvalidArgument("td critic: weight clip must be positive");

  typename nn::BasicNetwork<T>::Tape phi_tape, next_tape, goal_tape;
  const Tensor<T> phi = critic.phi.forward(batch.states, &batch.actions, &phi_tape);
  const Tensor<T> next = critic.psi.forward(batch.next_states, nullptr, &next_tape);
  const Tensor<T> goal = critic.psi.forward(batch.goals, nullptr, &goal_tape);

  // a' at (s', g_neg), where g_neg is the next row's future goal.
  Tensor<T> next_actions;
  if (opts.next_action == NextActionSource::dataset) {
    if (!batch.has_next_actions) throw InvalidArgument("td critic: batch carries no next actions");
    next_actions = batch.next_actions;
  } else {
    next_actions = sample_actions(policy, policy_input(batch.next_states, roll_rows(batch.goals), obs), rng);
  }

  std::vector<T> pos(b), neg(b), weights(b), dpos(b), dneg(b);
  {
    Tensor<T> w_phi, w_goal;
    if (target) {
      w_phi = target->phi.forward(batch.next_states, &next_actions);
      w_goal = target->psi.forward(batch.goals);
    } else {
      w_phi = critic.phi.forward(batch.next_states, &next_actions);
      w_goal = goal;
    }
    const double log_clip = std::log(opts.weight_clip);
    for (size_t i = 0; i < b; ++i) {
      const size_t j = (i + 1) % b;
      pos[i] = static_cast<T>(row_dot(phi, i, next, i));
      neg[i] = static_cast<T>(row_dot(phi, i, goal, j));
      const double f = row_dot(w_phi, i, w_goal, j);
      if (!std::isfinite(f)) throw TrainingDivergence("non-finite importance weight");
      weights[i] = static_cast<T>(std::exp(std::min(f, log_clip)));
    }
  }

  CriticStats stats;
  stats.loss = td_critic_loss<T>(pos, neg, weights, opts.gamma, dpos, dneg);
  logit_means(outer_logits(phi, goal), stats);

  const size_t d = phi.cols();
  Tensor<T> dphi = Tensor<T>::matrix(b, d), dnext = Tensor<T>::matrix(b, d),
            dgoal = Tensor<T>::matrix(b, d);
  for (size_t i = 0; i < b; ++i) {
    const size_t j = (i + 1) % b;
    for (size_t k = 0; k < d; ++k) {
      dphi(i, k) = dpos[i] * next(i, k) + dneg[i] * goal(j, k);
      dnext(i, k) = dpos[i] * phi(i, k);
      dgoal(j, k) = dneg[i] * phi(i, k);
    }
  }
  critic.phi.backward(phi_tape, dphi, {true, false});
  critic.psi.backward(next_tape, dnext, {true, false});
  critic.psi.backward(goal_tape, dgoal, {true, false});
  return stats;
}

template <class T>
ActorStats actor_gradients(BasicPolicyNet<T>& policy, const BasicCriticPair<T>& critic,
                           const TrainingBatch<T>& batch, const env::ObsSpec& obs, double lambda,
                           double aug_prob, Rng& rng) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("actor: lambda must lie in [0, 1]");
  const size_t b = batch.size, a = policy.action_dim;
  if (b == 0) throw InvalidArgument("actor: empty batch");
  const double inv = 1.0 / static_cast<double>(b);
  const double sigma = policy.std;

  typename nn::BasicNetwork<T>::Tape tape, bc_tape;
  const Tensor<T> out = policy.net.forward(policy_input(batch.states, batch.goals, obs), nullptr, &tape);
  // The behavior-cloning term sees augmented observations when enabled.
  const bool separate_bc = obs.kind == env::ObsKind::image && aug_prob > 0.0;
  Tensor<T> bc_out;
  if (separate_bc) {
    Tensor<T> s = batch.states, g = batch.goals;
    augment_rows(s, obs, aug_prob, rng);
    augment_rows(g, obs, aug_prob, rng);
    bc_out = policy.net.forward(policy_input(s, g, obs), nullptr, &bc_tape);
  }
  const Tensor<T>& bco = separate_bc ? bc_out : out;

  const Tensor<T> psi = critic.psi.forward(batch.goals);
  const size_t d = psi.cols();
  Tensor<T> dout = Tensor<T>::matrix(b, a);
  Tensor<T> dbc = Tensor<T>::matrix(b, a);
  ActorStats stats;

  if (policy.kind == env::ActionKind::discrete) {
    // Exact expectation of f over the categorical policy.
    Tensor<T> rep_states = Tensor<T>::matrix(b * a, batch.states.cols());
    Tensor<T> rep_actions = Tensor<T>::matrix(b * a, a);
    for (size_t i = 0; i < b; ++i) {
      for (size_t k = 0; k < a; ++k) {
        std::copy_n(batch.states.data() + i * obs.dim, obs.dim, rep_states.data() + (i * a + k) * obs.dim);
        rep_actions(i * a + k, k) = T(1);
      }
    }
    const Tensor<T> phi_all = critic.phi.forward(rep_states, &rep_actions);
    double critic_term = 0, bc = 0;
    for (size_t i = 0; i < b; ++i) {
      const auto p = softmax_row(out.data() + i * a, a);
      std::vector<double> q(a);
      double expected = 0;
      for (size_t k = 0; k < a; ++k) {
        double acc = 0;
        for (size_t c = 0; c < d; ++c) acc += static_cast<double>(phi_all(i * a + k, c)) * psi(i, c);
        q[k] = acc;
        expected += p[k] * acc;
      }
      critic_term += expected;
      for (size_t k = 0; k < a; ++k) {
        dout(i, k) = static_cast<T>(-(1.0 - lambda) * inv * p[k] * (q[k] - expected));
      }
      const size_t orig = argmax_row(batch.actions.data() + i * a, a);
      const double logp = log_softmax_at(bco.data() + i * a, a, orig);
      if (logp < kMinLogProb) {
        bc += kMinLogProb;
      } else {
        bc += logp;
        const auto pb = softmax_row(bco.data() + i * a, a);
        for (size_t k = 0; k < a; ++k) {
          dbc(i, k) = static_cast<T>(-lambda * inv * ((k == orig ? 1.0 : 0.0) - pb[k]));
        }
      }
    }
    stats.critic_term = critic_term * inv;
    stats.bc_loss = -bc * inv;
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<T> mu = Tensor<T>::matrix(b, a), sampled = Tensor<T>::matrix(b, a);
    for (size_t i = 0; i < b * a; ++i) {
      mu[i] = static_cast<T>(std::tanh(static_cast<double>(out[i])));
      sampled[i] = static_cast<T>(mu[i] + sigma * normal(rng));
    }
    typename nn::BasicNetwork<T>::Tape critic_tape;
    const Tensor<T> phi = critic.phi.forward(batch.states, &sampled, &critic_tape);
    double critic_term = 0, bc = 0;
    Tensor<T> dphi = Tensor<T>::matrix(b, d);
    for (size_t i = 0; i < b; ++i) {
      critic_term += row_dot(phi, i, psi, i);
      for (size_t c = 0; c < d; ++c) dphi(i, c) = static_cast<T>(-(1.0 - lambda) * inv * psi(i, c));
    }
    const auto g = critic.phi.input_gradients(critic_tape, dphi);
    const double log_norm = static_cast<double>(a) * std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
    for (size_t i = 0; i < b; ++i) {
      double sq = 0;
      for (size_t k = 0; k < a; ++k) {
        const double m = mu(i, k);
        dout(i, k) = static_cast<T>(g.side(i, k) * (1.0 - m * m));
        const double mb = std::tanh(static_cast<double>(bco(i, k)));
        const double diff = batch.actions(i, k) - mb;
        sq += diff * diff;
        dbc(i, k) = static_cast<T>(-lambda * inv * diff / (sigma * sigma) * (1.0 - mb * mb));
      }
      bc += -sq / (2.0 * sigma * sigma) - log_norm;
    }
    stats.critic_term = critic_term * inv;
    stats.bc_loss = -bc * inv;
  }

  stats.loss = -(1.0 - lambda) * stats.critic_term + lambda * stats.bc_loss;
  if (!std::isfinite(stats.loss)) throw TrainingDivergence("non-finite actor loss");
  if (separate_bc) {
    policy.net.backward(tape, dout, {true, false});
    policy.net.backward(bc_tape, dbc, {true, false});
  } else {
    for (size_t i = 0; i < b * a; ++i) dout[i] += dbc[i];
    policy.net.backward(tape, dout, {true, false});
  }
  return stats;
}

env::Action greedy_action(const PolicyNet& policy, const env::ObsSpec& obs,
                          std::span<const float> state, std::span<const float> goal) {
  Tensor<float> s({1, obs.dim}, std::vector<float>(state.begin(), state.end()));
  Tensor<float> g({1, obs.dim}, std::vector<float>(goal.begin(), goal.end()));
  const Tensor<float> out = policy.net.forward(policy_input(s, g, obs));
  if (policy.kind == env::ActionKind::discrete) {
    return {static_cast<double>(argmax_row(out.data(), policy.action_dim))};
  }
  env::Action act(policy.action_dim);
  for (size_t k = 0; k < policy.action_dim; ++k) act[k] = std::tanh(static_cast<double>(out[k]));
  return act;
}

#define SCRL_INSTANTIATE(T)                                                                      \
  template TrainingBatch<T> to_training_batch<T>(const data::ContrastiveBatch&);                 \
  template void augment_rows<T>(Tensor<T>&, const env::ObsSpec&, double, Rng&);                  \
  template Tensor<T> policy_input<T>(const Tensor<T>&, const Tensor<T>&, const env::ObsSpec&);   \
  template Tensor<T> critic_logits<T>(const BasicCriticPair<T>&, const Tensor<T>&,               \
                                      const Tensor<T>&, const Tensor<T>&);                       \
  template double mc_critic_loss<T>(const Tensor<T>&, Tensor<T>*);                               \
  template double td_critic_loss<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                    double, std::span<T>, std::span<T>);                         \
  template double binary_accuracy<T>(const Tensor<T>&);                                          \
  template CriticStats mc_critic_gradients<T>(BasicCriticPair<T>&, const TrainingBatch<T>&);     \
  template CriticStats td_critic_gradients<T>(BasicCriticPair<T>&, const BasicCriticPair<T>*,    \
                                              const BasicPolicyNet<T>&, const TrainingBatch<T>&, \
                                              const env::ObsSpec&, const TdOptions&, Rng&);      \
  template ActorStats actor_gradients<T>(BasicPolicyNet<T>&, const BasicCriticPair<T>&,          \
                                         const TrainingBatch<T>&, const env::ObsSpec&, double,   \
                                         double, Rng&);

SCRL_INSTANTIATE(float)
SCRL_INSTANTIATE(double)
#undef SCRL_INSTANTIATE

}  // namespace scrl::algo
