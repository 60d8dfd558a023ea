#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "scrl/env.hpp"

namespace scrl::oracle {

// pi(a | s) for a tabular process, row-major [s, a].
struct TabularPolicy {
  size_t num_states = 0, num_actions = 0;
  std::vector<double> probs;

  static TabularPolicy uniform(size_t num_states, size_t num_actions);
  double operator()(size_t s, size_t a) const { return probs[s * num_actions + a]; }
  void validate() const;
};

// Discounted occupancy p(s_f | s, a) under the next-state convention:
// (1 - gamma) * sum_{k >= 1} gamma^(k-1) * P(s_k = s_f | s_0 = s, a_0 = a).
struct OccupancyTable {
  double gamma = 0.0;
  size_t num_states = 0, num_actions = 0;
  std::vector<double> values;  // [s, a, s_f]

  double operator()(size_t s, size_t a, size_t sf) const {
    return values[(s * num_actions + a) * num_states + sf];
  }
  std::span<const double> row(size_t s, size_t a) const {
    return {values.data() + (s * num_actions + a) * num_states, num_states};
  }
};

struct MarginalTable {
  std::vector<double> probs;
};

OccupancyTable dp_occupancy(const env::GoalProcess& process, const TabularPolicy& policy,
                            double gamma);

// Draws k ~ Geometric(1 - gamma) on {1, 2, ...} and rolls out k steps,
// `num_samples` times for every (s, a).
OccupancyTable mc_occupancy(const env::GoalProcess& process, const TabularPolicy& policy,
                            double gamma, size_t num_samples, uint64_t seed);

// sigma(f) / (1 - sigma(f)) == exp(f).
double critic_to_occupancy_ratio(double logit);

// p(s_f) = sum_{s,a} weight(s, a) p(s_f | s, a); weights are normalized here.
MarginalTable marginal(const OccupancyTable& occupancy, std::span<const double> sa_weights);

// CSV: state,action,future_state,probability
void write_csv(const OccupancyTable& table, std::ostream& out);

}  // namespace scrl::oracle
