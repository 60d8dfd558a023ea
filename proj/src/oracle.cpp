#include "scrl/oracle.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "scrl/errors.hpp"

namespace scrl::oracle {

TabularPolicy TabularPolicy::uniform(size_t num_states, size_t num_actions) {
  return {num_states, num_actions,
          std::vector<double>(num_states * num_actions, 1.0 / static_cast<double>(num_actions))};
}

void TabularPolicy::validate() const {
  if (probs.size() != num_states * num_actions) throw InvalidArgument("policy: wrong size");
  for (size_t s = 0; s < num_states; ++s) {
    double sum = 0;
    for (size_t a = 0; a < num_actions; ++a) sum += probs[s * num_actions + a];
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("policy: row does not sum to 1");
  }
}

namespace {

void check_inputs(const env::GoalProcess& process, const TabularPolicy& policy, double gamma) {
  if (!process.is_tabular()) {
    throw UnsupportedOperation("occupancy oracle needs a tabular process, got " + process.id());
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must be in [0, 1)");
  policy.validate();
  if (policy.num_states != process.num_states() || policy.num_actions != process.num_actions()) {
    throw InvalidArgument("policy shape does not match process");
  }
}

}  // namespace

OccupancyTable dp_occupancy(const env::GoalProcess& process, const TabularPolicy& policy,
                            double gamma) {
  check_inputs(process, policy, gamma);
  const size_t ns = process.num_states(), na = process.num_actions();
  const auto& P = process.transition_matrix();

  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(ns, ns);
  Eigen::MatrixXd p_sa(ns * na, ns);
  for (size_t s = 0; s < ns; ++s) {
    for (size_t a = 0; a < na; ++a) {
      for (size_t j = 0; j < ns; ++j) {
        const double p = P[(s * na + a) * ns + j];
        p_sa(s * na + a, j) = p;
        p_pi(s, j) += policy(s, a) * p;
      }
    }
  }
  // occ = (1 - gamma) P_sa (I - gamma P_pi)^-1, solved on the transpose.
  const Eigen::MatrixXd resolvent_t =
      (Eigen::MatrixXd::Identity(ns, ns) - gamma * p_pi).transpose();
  const Eigen::MatrixXd occ_t = resolvent_t.partialPivLu().solve((1.0 - gamma) * p_sa.transpose());

  OccupancyTable out{gamma, ns, na, std::vector<double>(ns * na * ns)};
  for (size_t row = 0; row < ns * na; ++row) {
    for (size_t j = 0; j < ns; ++j) out.values[row * ns + j] = occ_t(j, row);
  }
  return out;
}

OccupancyTable mc_occupancy(const env::GoalProcess& process, const TabularPolicy& policy,
                            double gamma, size_t num_samples, uint64_t seed) {
  check_inputs(process, policy, gamma);
  if (num_samples < 1) throw InvalidArgument("mc_occupancy: num_samples must be >= 1");
  const size_t ns = process.num_states(), na = process.num_actions();
  OccupancyTable out{gamma, ns, na, std::vector<double>(ns * na * ns, 0.0)};

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t row = 0; row < static_cast<std::int64_t>(ns * na); ++row) {
    const size_t s0 = static_cast<size_t>(row) / na, a0 = static_cast<size_t>(row) % na;
    Rng rng = make_rng(seed, static_cast<uint64_t>(row));
    std::geometric_distribution<long> extra_steps(1.0 - gamma);
    double* counts = &out.values[static_cast<size_t>(row) * ns];
    for (size_t n = 0; n < num_samples; ++n) {
      const long k = 1 + extra_steps(rng);
      size_t s = env::sample_next_index(process, s0, a0, rng);
      for (long t = 1; t < k; ++t) {
        const double u = uniform01(rng);
        size_t a = na - 1;
        double cum = 0;
        for (size_t b = 0; b < na; ++b) {
          cum += policy(s, b);
          if (u < cum) {
            a = b;
            break;
          }
        }
        s = env::sample_next_index(process, s, a, rng);
      }
      counts[s] += 1.0;
    }
    for (size_t j = 0; j < ns; ++j) counts[j] /= static_cast<double>(num_samples);
  }
  return out;
}

double critic_to_occupancy_ratio(double logit) {
  if (!std::isfinite(logit)) throw InvalidArgument("critic_to_occupancy_ratio: non-finite logit");
  return std::exp(logit);
}

MarginalTable marginal(const OccupancyTable& occupancy, std::span<const double> sa_weights) {
  const size_t ns = occupancy.num_states, na = occupancy.num_actions;
  if (sa_weights.size() != ns * na) throw InvalidArgument("marginal: weight shape mismatch");
  double total = 0;
  for (double w : sa_weights) total += w;
  if (!(total > 0.0)) throw InvalidArgument("marginal: weights sum to zero");
  MarginalTable out{std::vector<double>(ns, 0.0)};
  for (size_t row = 0; row < ns * na; ++row) {
    const double w = sa_weights[row] / total;
    if (w == 0.0) continue;
    for (size_t j = 0; j < ns; ++j) out.probs[j] += w * occupancy.values[row * ns + j];
  }
  return out;
}

void write_csv(const OccupancyTable& table, std::ostream& out) {
  out << "state,action,future_state,probability\n";
  char buf[64];
  for (size_t s = 0; s < table.num_states; ++s) {
    for (size_t a = 0; a < table.num_actions; ++a) {
      for (size_t j = 0; j < table.num_states; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", table(s, a, j));
        out << s << ',' << a << ',' << j << ',' << buf << '\n';
      }
    }
  }
}

}  // namespace scrl::oracle
