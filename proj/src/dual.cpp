#include "crlhf/dual.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "crlhf/error.hpp"
#include "crlhf/gibbs.hpp"
#include "crlhf/kernels.hpp"

namespace crlhf {
namespace {

void check_lambda(std::span<const double> lambda, std::size_t m) {
  require(lambda.size() == m, ErrorKind::shape, "multiplier vector has the wrong length");
  for (double l : lambda) {
    require(l >= 0.0 && std::isfinite(l), ErrorKind::domain, "multipliers must be finite and >= 0");
  }
}

double min_eigenvalue(const std::vector<double>& m, std::size_t n) {
  if (n == 1) return m[0];
  Eigen::MatrixXd mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i * n + j];
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(mat, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

}  // namespace

DualProblem::DualProblem(ProblemSpec spec, Policy pi0, std::vector<double> prompt_dist,
                         RewardTables rewards)
    : spec_(std::move(spec)),
      pi0_(std::move(pi0)),
      prompt_dist_(std::move(prompt_dist)),
      rewards_(std::move(rewards)) {
  spec_.validate();
  pi0_.require_full_support();
  const std::size_t n = pi0_.num_prompts() * pi0_.num_actions();
  require(prompt_dist_.size() == pi0_.num_prompts(), ErrorKind::shape,
          "prompt distribution does not match reference policy");
  require(rewards_.target.size() == n, ErrorKind::shape, "target reward table has the wrong size");
  require(rewards_.num_constraints() == spec_.num_constraints(), ErrorKind::shape,
          "one reward table per constraint threshold is required");
  for (const auto& r : rewards_.constraints) {
    require(r.size() == n, ErrorKind::shape, "constraint reward table has the wrong size");
  }
  log_pi0_.resize(n);
  for (std::size_t i = 0; i < n; ++i) log_pi0_[i] = std::log(pi0_.probs()[i]);
}

DualProblem DualProblem::from_thetas(const ProblemSpec& spec, const Policy& pi0,
                                     const FeatureTable& table,
                                     std::span<const double> target_theta,
                                     const std::vector<std::vector<double>>& constraint_thetas) {
  require(pi0.num_prompts() == table.num_prompts() && pi0.num_actions() == table.num_actions(),
          ErrorKind::shape, "reference policy does not match feature table");
  return DualProblem(spec, pi0, {table.prompt_dist().begin(), table.prompt_dist().end()},
                     RewardTables::from_thetas(table, target_theta, constraint_thetas));
}

Policy DualProblem::policy_at(std::span<const double> lambda) const {
  check_lambda(lambda, num_constraints());
  const auto r = combine_rewards(rewards_, lambda);
  if (spec_.divergence.kind() == Divergence::Kind::kl) {
    return gibbs_from_log_reference(pi0_, log_pi0_, r, spec_.eta);
  }
  return f_divergence_policy_from_rewards(pi0_, r, spec_.eta, spec_.divergence).policy;
}

double DualProblem::objective(const Policy& pi) const {
  return expected_reward(pi, rewards_.target, prompt_dist_) -
         spec_.eta * divergence_value(pi, pi0_, prompt_dist_, spec_.divergence);
}

double DualProblem::constraint_reward(const Policy& pi, std::size_t k) const {
  require(k < num_constraints(), ErrorKind::domain, "constraint index out of range");
  return expected_reward(pi, rewards_.constraints[k], prompt_dist_);
}

double DualProblem::constraint_reward_bound() const {
  double b = 0.0;
  for (const auto& r : rewards_.constraints) {
    for (double v : r) b = std::max(b, std::abs(v));
  }
  return b;
}

DualEval DualProblem::evaluate(std::span<const double> lambda, bool with_curvature) const {
  check_lambda(lambda, num_constraints());
  const std::size_t m = num_constraints();
  const std::size_t rows = pi0_.num_prompts();
  const std::size_t cols = pi0_.num_actions();
  const double eta = spec_.eta;
  const auto r = combine_rewards(rewards_, lambda);
  const bool kl = spec_.divergence.kind() == Divergence::Kind::kl;

  DualEval out{{lambda.begin(), lambda.end()}, 0.0, std::vector<double>(m), {}, policy_at(lambda)};
  const Policy& pi = out.policy;

  double penalty = 0.0;
  for (std::size_t k = 0; k < m; ++k) penalty += lambda[k] * spec_.j_min[k];

  if (kl) {
    // eta E_x log sum_a pi0 exp(r / eta): the maximized Lagrangian without the
    // sampling error of E_pi[r] - eta KL.
    double total = 0.0;
    std::vector<double> scratch(cols);
    std::vector<double> logits(cols);
    for (std::size_t x = 0; x < rows; ++x) {
      for (std::size_t a = 0; a < cols; ++a) {
        logits[a] = log_pi0_[x * cols + a] + r[x * cols + a] / eta;
      }
      const double peak = *std::max_element(logits.begin(), logits.end());
      const double sum = kernels::active().exp_shifted(logits.data(), peak, scratch.data(), cols);
      total += prompt_dist_[x] * eta * (peak + std::log(sum));
    }
    out.value = total - penalty;
  } else {
    out.value = expected_reward(pi, r, prompt_dist_) -
                eta * divergence_value(pi, pi0_, prompt_dist_, spec_.divergence) - penalty;
  }

  for (std::size_t k = 0; k < m; ++k) {
    out.gradient[k] = expected_reward(pi, rewards_.constraints[k], prompt_dist_) - spec_.j_min[k];
  }

  if (with_curvature && kl) {
    out.curvature.assign(m * m, 0.0);
    std::vector<double> mean(m);
    for (std::size_t x = 0; x < rows; ++x) {
      const auto p = pi.row(x);
      for (std::size_t k = 0; k < m; ++k) {
        mean[k] = kernels::active().dot(p.data(), rewards_.constraints[k].data() + x * cols, cols);
      }
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = j; k < m; ++k) {
          const double* rj = rewards_.constraints[j].data() + x * cols;
          const double* rk = rewards_.constraints[k].data() + x * cols;
          // Centered products avoid cancellation in E[r_j r_k] - E[r_j] E[r_k].
          double cov = 0.0;
          for (std::size_t a = 0; a < cols; ++a) cov += p[a] * (rj[a] - mean[j]) * (rk[a] - mean[k]);
          out.curvature[j * m + k] += prompt_dist_[x] * cov / eta;
        }
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < j; ++k) out.curvature[j * m + k] = out.curvature[k * m + j];
    }
  }
  return out;
}

double DualProblem::value(std::span<const double> lambda) const {
  return evaluate(lambda, false).value;
}

DualEval eval_dual(const ProblemSpec& spec, const Policy& pi0, const FeatureTable& table,
                   std::span<const double> target_theta,
                   const std::vector<std::vector<double>>& constraint_thetas,
                   std::span<const double> lambda) {
  return DualProblem::from_thetas(spec, pi0, table, target_theta, constraint_thetas)
      .evaluate(lambda);
}

double lipschitz_constant(double bound_b, double eta) {
  require(eta > 0.0, ErrorKind::domain, "eta must be positive");
  require(bound_b >= 0.0, ErrorKind::domain, "B must be nonnegative");
  return bound_b * bound_b / eta;
}

ModulusResult strong_convexity_modulus(const DualProblem& problem, double radius,
                                       std::size_t grid_size) {
  require(grid_size >= 2, ErrorKind::domain, "grid needs at least 2 points");
  require(radius > 0.0 && std::isfinite(radius), ErrorKind::domain, "radius must be positive");
  require(problem.spec().divergence.kind() == Divergence::Kind::kl, ErrorKind::domain,
          "the variance formula for the modulus holds for KL regularization");
  const std::size_t m = problem.num_constraints();
  double total = 1.0;
  for (std::size_t k = 0; k < m; ++k) total *= static_cast<double>(grid_size);
  require(total <= 1e6, ErrorKind::domain, "modulus grid is too large");

  ModulusResult out;
  out.modulus = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(m, 0);
  std::vector<double> lambda(m);
  const double step = radius / static_cast<double>(grid_size - 1);
  while (true) {
    for (std::size_t k = 0; k < m; ++k) lambda[k] = step * static_cast<double>(idx[k]);
    const auto eval = problem.evaluate(lambda, true);
    const double mu = min_eigenvalue(eval.curvature, m);
    ++out.evaluations;
    if (mu < out.modulus) {
      out.modulus = mu;
      out.argmin = lambda;
    }
    std::size_t k = 0;
    while (k < m && ++idx[k] == grid_size) idx[k++] = 0;
    if (k == m) break;
  }
  // Rounding leaves a residue of order 1e-17 when the rewards are constant.
  out.degenerate = out.modulus <= 1e-14;
  if (out.degenerate) out.modulus = 0.0;
  return out;
}

}  // namespace crlhf
