#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scrl/random.hpp"

namespace scrl::gradcheck {

inline constexpr double kStep = 1e-3;
inline constexpr double kTolerance = 1e-4;

struct Check {
  std::string name;
  double rel_error = 0;
  size_t num_values = 0;
  size_t attempts = 0;  // instances drawn before a kink-free one was found
  bool passed = false;
};

// ||a - b|| / max(||a||, ||b||), and 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

// Central differences of `loss` with respect to every coordinate of `xs`
// (perturbed in place and restored).
std::vector<double> numeric_gradient(const std::function<double()>& loss,
                                     const std::vector<std::span<double>>& xs, double h);

// A differentiable scalar with its analytic gradient, both over `values`.
struct Problem {
  std::shared_ptr<void> owner;  // keeps networks and inputs alive
  std::vector<std::span<double>> values;
  std::function<double()> loss;
  std::function<std::vector<double>()> analytic;
};

// Draws instances until central differences at h and h/2 agree (no ReLU kink
// or clamp boundary inside the stencil), then compares against the analytic
// gradient. Gives up after `max_attempts` instances.
Check run_check(const std::string& name, const std::function<Problem(Rng&)>& make, uint64_t seed,
                size_t max_attempts = 50);

// Every layer type, composed encoders, both critic losses, and the actor
// loss, plus the closed-form hard-negative gradient against the engine.
std::vector<Check> run_suite(uint64_t seed = 0);

}  // namespace scrl::gradcheck
