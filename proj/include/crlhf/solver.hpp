#pragma once

// Projected gradient descent on the dual with iterate averaging, over the box
// [0, R]^m, with either the fixed step eta / (m B^2) or an adaptive step.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "crlhf/dual.hpp"

namespace crlhf {

enum class StepMode { fixed, adaptive };

std::string to_string(StepMode mode);

struct SolverConfig {
  double radius = 100.0;        // R
  StepMode mode = StepMode::fixed;
  double alpha = 0.0;           // fixed step; <= 0 means eta / (m B^2)
  std::size_t iterations = 1000;
  double bound_b = 0.0;         // <= 0 means max |r_k| of the problem's constraint tables
  // Adaptive step: multiplier interpolates [m_lo, m_hi] over gaps in [0, gap_cap].
  double multiplier_lo = 100.0;
  double multiplier_hi = 1e4;
  double gap_cap = 1.0;
  double epsilon = 1e-8;
  double alpha_max = 1.0;

  void validate() const;
};

struct SolverStep {
  std::size_t t = 0;
  std::vector<double> lambda;
  std::vector<double> gradient;
  std::vector<double> alpha;  // one step per coordinate
  double dual_value = 0.0;
};

struct SolverTrace {
  std::vector<SolverStep> steps;
  std::vector<double> lambda_bar;  // mean of lambda_0 .. lambda_{T-1}
  double bound_b = 0.0;
  Policy policy;                   // maximizing policy at lambda_bar

  // Header t, lambda_k, grad_k, alpha_k, dual_value.
  std::string to_csv() const;
};

// Multiplier m(gap): affine from [0, gap_cap] onto [m_lo, m_hi], clipped.
double gap_multiplier(double gap, const SolverConfig& config);

// min{eta m(gap) / (B^2 sqrt(eps + energy)), alpha_max}; energy is the sum of
// squared gradients up to and including the current one.
double adaptive_step(double grad_energy, double gap, double eta, double bound_b,
                     const SolverConfig& config);

SolverTrace solve_dual(const DualProblem& problem, const SolverConfig& config);

struct SolutionMetrics {
  // On the true-reward policy pi*_{lambda_bar}.
  double dual_gap = 0.0;               // g(lambda_bar) - g(lambda*)
  std::vector<double> violation;       // (J_k - E[r_k*])_+
  std::vector<double> signed_violation;
  double primal_gap = 0.0;             // J(pi*) - J(pi*_{lambda_bar})
  // On the deployed policy pi_hat_{lambda_bar} (estimated rewards).
  std::vector<double> deployed_violation;
  double deployed_primal_gap = 0.0;
};

// truth holds the true rewards; lambda_star is the oracle minimizer of g.
SolutionMetrics evaluate_solution(const SolverTrace& trace, const DualProblem& truth,
                                  std::span<const double> lambda_star);

}  // namespace crlhf
