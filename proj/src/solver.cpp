#include "crlhf/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "crlhf/error.hpp"

namespace crlhf {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(StepMode mode) { return mode == StepMode::fixed ? "fixed" : "adaptive"; }

void SolverConfig::validate() const {
  require(radius > 0.0 && std::isfinite(radius), ErrorKind::validation, "R must be positive");
  require(iterations >= 1, ErrorKind::validation, "T must be at least 1");
  require(std::isfinite(alpha), ErrorKind::validation, "step must be finite");
  require(multiplier_lo > 0.0 && multiplier_hi >= multiplier_lo, ErrorKind::validation,
          "multiplier range must satisfy 0 < m_lo <= m_hi");
  require(gap_cap > 0.0 && epsilon > 0.0 && alpha_max > 0.0, ErrorKind::validation,
          "gap cap, epsilon and alpha_max must be positive");
}

double gap_multiplier(double gap, const SolverConfig& config) {
  const double s = std::clamp(std::abs(gap) / config.gap_cap, 0.0, 1.0);
  return config.multiplier_lo + s * (config.multiplier_hi - config.multiplier_lo);
}

double adaptive_step(double grad_energy, double gap, double eta, double bound_b,
                     const SolverConfig& config) {
  const double raw = eta * gap_multiplier(gap, config) /
                     (bound_b * bound_b * std::sqrt(config.epsilon + grad_energy));
  return std::min(raw, config.alpha_max);
}

SolverTrace solve_dual(const DualProblem& problem, const SolverConfig& config) {
  config.validate();
  const std::size_t m = problem.num_constraints();
  const double eta = problem.spec().eta;
  const double b = config.bound_b > 0.0 ? config.bound_b : problem.constraint_reward_bound();
  require(b > 0.0, ErrorKind::domain, "constraint rewards are identically zero; B is zero");
  const double fixed_alpha =
      config.alpha > 0.0 ? config.alpha : eta / (static_cast<double>(m) * b * b);

  std::vector<double> lambda(m, 0.0);
  std::vector<double> sum(m, 0.0);
  std::vector<double> energy(m, 0.0);
  std::vector<SolverStep> steps;
  steps.reserve(config.iterations);
  for (std::size_t t = 0; t < config.iterations; ++t) {
    const auto eval = problem.evaluate(lambda, false);
    SolverStep step{t, lambda, eval.gradient, std::vector<double>(m), eval.value};
    for (std::size_t k = 0; k < m; ++k) {
      const double g = eval.gradient[k];
      double alpha = fixed_alpha;
      if (config.mode == StepMode::adaptive) {
        energy[k] += g * g;
        // |J_k - E[r_k]| is |g'_k|.
        alpha = adaptive_step(energy[k], g, eta, b, config);
      }
      step.alpha[k] = alpha;
      sum[k] += lambda[k];
      lambda[k] = std::clamp(lambda[k] - alpha * g, 0.0, config.radius);
    }
    steps.push_back(std::move(step));
  }
  std::vector<double> bar(m);
  for (std::size_t k = 0; k < m; ++k) {
    bar[k] = std::clamp(sum[k] / static_cast<double>(config.iterations), 0.0, config.radius);
  }
  Policy policy = problem.policy_at(bar);
  return {std::move(steps), std::move(bar), b, std::move(policy)};
}

std::string SolverTrace::to_csv() const {
  std::ostringstream os;
  const std::size_t m = lambda_bar.size();
  os << "t";
  for (std::size_t k = 1; k <= m; ++k) os << ",lambda_" << k;
  for (std::size_t k = 1; k <= m; ++k) os << ",grad_" << k;
  for (std::size_t k = 1; k <= m; ++k) os << ",alpha_" << k;
  os << ",dual_value\n";
  for (const auto& s : steps) {
    os << s.t;
    for (double v : s.lambda) os << ',' << num(v);
    for (double v : s.gradient) os << ',' << num(v);
    for (double v : s.alpha) os << ',' << num(v);
    os << ',' << num(s.dual_value) << '\n';
  }
  return os.str();
}

SolutionMetrics evaluate_solution(const SolverTrace& trace, const DualProblem& truth,
                                  std::span<const double> lambda_star) {
  const std::size_t m = truth.num_constraints();
  require(trace.lambda_bar.size() == m && lambda_star.size() == m, ErrorKind::shape,
          "multiplier vectors do not match the problem");
  SolutionMetrics out;
  const auto at_bar = truth.evaluate(trace.lambda_bar, false);
  const auto at_star = truth.evaluate(lambda_star, false);
  out.dual_gap = at_bar.value - at_star.value;
  const double j_star = truth.objective(at_star.policy);
  out.primal_gap = j_star - truth.objective(at_bar.policy);
  out.deployed_primal_gap = j_star - truth.objective(trace.policy);
  for (std::size_t k = 0; k < m; ++k) {
    const double signed_v = -at_bar.gradient[k];
    out.signed_violation.push_back(signed_v);
    out.violation.push_back(std::max(0.0, signed_v));
    const double deployed = truth.spec().j_min[k] - truth.constraint_reward(trace.policy, k);
    out.deployed_violation.push_back(std::max(0.0, deployed));
  }
  return out;
}

}  // namespace crlhf
