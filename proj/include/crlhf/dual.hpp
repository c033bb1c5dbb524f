#pragma once

// The dual function g(lambda) = max_pi L(pi, lambda) of the constrained
// problem, evaluated exactly on the finite table.

#include <span>
#include <vector>

#include "crlhf/core.hpp"

namespace crlhf {

struct DualEval {
  std::vector<double> lambda;
  double value = 0.0;
  std::vector<double> gradient;  // E_pi[r_k] - J_k
  // (1/eta) E_x Cov_pi(r_j, r_k), m x m row-major. KL only; empty otherwise.
  std::vector<double> curvature;
  Policy policy;
};

class DualProblem {
 public:
  DualProblem(ProblemSpec spec, Policy pi0, std::vector<double> prompt_dist, RewardTables rewards);

  static DualProblem from_thetas(const ProblemSpec& spec, const Policy& pi0,
                                 const FeatureTable& table, std::span<const double> target_theta,
                                 const std::vector<std::vector<double>>& constraint_thetas);

  const ProblemSpec& spec() const { return spec_; }
  const Policy& reference() const { return pi0_; }
  std::span<const double> prompt_dist() const { return prompt_dist_; }
  const RewardTables& rewards() const { return rewards_; }
  std::size_t num_constraints() const { return spec_.num_constraints(); }

  // Maximizing policy for the combined reward r_target + sum_k lambda_k r_k.
  Policy policy_at(std::span<const double> lambda) const;

  DualEval evaluate(std::span<const double> lambda, bool with_curvature = true) const;
  double value(std::span<const double> lambda) const;

  // J(pi) = E_pi[r_target] - eta D(pi || pi0).
  double objective(const Policy& pi) const;
  // E_pi[r_k] for constrained oracle k.
  double constraint_reward(const Policy& pi, std::size_t k) const;

  // max_{x,a} |r_k(x, a)| over constrained oracles, the reward bound used for
  // the Lipschitz constant of g'.
  double constraint_reward_bound() const;

 private:
  ProblemSpec spec_;
  Policy pi0_;
  std::vector<double> prompt_dist_;
  RewardTables rewards_;
  std::vector<double> log_pi0_;
};

DualEval eval_dual(const ProblemSpec& spec, const Policy& pi0, const FeatureTable& table,
                   std::span<const double> target_theta,
                   const std::vector<std::vector<double>>& constraint_thetas,
                   std::span<const double> lambda);

// L = B^2 / eta.
double lipschitz_constant(double bound_b, double eta);

struct ModulusResult {
  double modulus = 0.0;            // minimum over the grid
  std::vector<double> argmin;      // grid point attaining it
  std::size_t evaluations = 0;
  bool degenerate = false;         // modulus is zero
};

// Grid approximation of (1/eta) inf_{lambda in [0, Lambda]^m} of the smallest
// eigenvalue of E_x Cov(r_1..r_m) under the Gibbs policy. grid_size points
// per axis, endpoints included. KL only.
ModulusResult strong_convexity_modulus(const DualProblem& problem, double radius,
                                       std::size_t grid_size = 64);

}  // namespace crlhf
