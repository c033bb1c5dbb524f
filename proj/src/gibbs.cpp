#include "crlhf/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "crlhf/error.hpp"
#include "crlhf/kernels.hpp"

namespace crlhf {
namespace {

constexpr int kBisectionCap = 200;
constexpr double kRowSumTolerance = 1e-10;

void check_eta(double eta) {
  require(eta > 0.0 && std::isfinite(eta), ErrorKind::domain, "eta must be positive and finite");
}

void check_rewards(const Policy& pi0, std::span<const double> rewards) {
  require(rewards.size() == pi0.num_prompts() * pi0.num_actions(), ErrorKind::shape,
          "reward table does not match reference policy");
}

bool constant_row(std::span<const double> r) {
  return std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
}

// Row mass sum_a pi0(a) ratio((r_a - tau) / eta); nonincreasing in tau.
double row_mass(std::span<const double> p0, std::span<const double> r, double tau, double eta,
                const Divergence& div) {
  double total = 0.0;
  for (std::size_t a = 0; a < r.size(); ++a) {
    total += p0[a] * div.ratio_from_slope((r[a] - tau) / eta);
  }
  return total;
}

}  // namespace

CombinedReward combine(std::span<const double> theta_target,
                       const std::vector<std::vector<double>>& theta_constraints,
                       std::span<const double> lambda) {
  require(lambda.size() == theta_constraints.size(), ErrorKind::shape,
          "one multiplier per constrained oracle is required");
  CombinedReward out{{theta_target.begin(), theta_target.end()}, {lambda.begin(), lambda.end()}};
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    require(lambda[k] >= 0.0, ErrorKind::domain, "multipliers must be nonnegative");
    require(theta_constraints[k].size() == out.theta.size(), ErrorKind::shape,
            "constraint parameter dimension mismatch");
    kernels::active().axpy(lambda[k], theta_constraints[k].data(), out.theta.data(),
                           out.theta.size());
  }
  return out;
}

std::vector<double> combine_rewards(const RewardTables& tables, std::span<const double> lambda) {
  require(lambda.size() == tables.num_constraints(), ErrorKind::shape,
          "one multiplier per constrained oracle is required");
  std::vector<double> out = tables.target;
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    require(lambda[k] >= 0.0, ErrorKind::domain, "multipliers must be nonnegative");
    if (lambda[k] == 0.0) continue;
    kernels::active().axpy(lambda[k], tables.constraints[k].data(), out.data(), out.size());
  }
  return out;
}

Policy gibbs_from_log_reference(const Policy& pi0, std::span<const double> log_pi0,
                                std::span<const double> rewards, double eta) {
  check_eta(eta);
  check_rewards(pi0, rewards);
  const std::size_t rows = pi0.num_prompts();
  const std::size_t cols = pi0.num_actions();
  std::vector<double> logits(rows * cols);
  const double inv_eta = 1.0 / eta;
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = log_pi0[i] + rewards[i] * inv_eta;
  std::vector<double> probs(rows * cols);
  kernels::active().softmax_rows(logits.data(), rows, cols, probs.data());
  for (std::size_t x = 0; x < rows; ++x) {
    const auto r = rewards.subspan(x * cols, cols);
    if (constant_row(r)) {
      const auto p0 = pi0.row(x);
      std::copy(p0.begin(), p0.end(), probs.begin() + static_cast<std::ptrdiff_t>(x * cols));
    }
  }
  return Policy(rows, cols, std::move(probs));
}

Policy gibbs_policy_from_rewards(const Policy& pi0, std::span<const double> rewards, double eta) {
  pi0.require_full_support();
  std::vector<double> log_pi0(pi0.probs().size());
  for (std::size_t i = 0; i < log_pi0.size(); ++i) log_pi0[i] = std::log(pi0.probs()[i]);
  return gibbs_from_log_reference(pi0, log_pi0, rewards, eta);
}

Policy gibbs_policy(const Policy& pi0, const FeatureTable& table, std::span<const double> theta,
                    double eta) {
  check_eta(eta);
  require(pi0.num_prompts() == table.num_prompts() && pi0.num_actions() == table.num_actions(),
          ErrorKind::shape, "reference policy does not match feature table");
  return gibbs_policy_from_rewards(pi0, table.rewards(theta), eta);
}

ThresholdPolicy f_divergence_policy_from_rewards(const Policy& pi0, std::span<const double> rewards,
                                                 double eta, const Divergence& divergence) {
  check_eta(eta);
  check_rewards(pi0, rewards);
  require(divergence.kind() != Divergence::Kind::kl, ErrorKind::domain,
          "KL uses the Gibbs closed form");
  pi0.require_full_support();
  const std::size_t rows = pi0.num_prompts();
  const std::size_t cols = pi0.num_actions();
  std::vector<double> probs(rows * cols);
  std::vector<double> thresholds(rows);

  for (std::size_t x = 0; x < rows; ++x) {
    const auto r = rewards.subspan(x * cols, cols);
    const auto p0 = pi0.row(x);
    // At tau = max r every ratio is at most 1 and at tau = min r at least 1,
    // so the root lies in between.
    double lo = *std::min_element(r.begin(), r.end());
    double hi = *std::max_element(r.begin(), r.end());
    double tau = hi;
    if (lo < hi) {
      require(row_mass(p0, r, lo, eta, divergence) >= 1.0 &&
                  row_mass(p0, r, hi, eta, divergence) <= 1.0,
              ErrorKind::numerical, "threshold bracket does not enclose the root at prompt " +
                                        std::to_string(x));
      for (int it = 0; it < kBisectionCap; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (row_mass(p0, r, mid, eta, divergence) > 1.0) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      // Pick the endpoint with the smaller residual; mass is finite at hi.
      const double mass_lo = row_mass(p0, r, lo, eta, divergence);
      const double mass_hi = row_mass(p0, r, hi, eta, divergence);
      tau = std::abs(mass_lo - 1.0) < std::abs(mass_hi - 1.0) ? lo : hi;
    }
    double mass = 0.0;
    for (std::size_t a = 0; a < cols; ++a) {
      const double v = p0[a] * divergence.ratio_from_slope((r[a] - tau) / eta);
      probs[x * cols + a] = v;
      mass += v;
    }
    require(std::isfinite(mass) && std::abs(mass - 1.0) <= kRowSumTolerance, ErrorKind::numerical,
            "threshold search left row mass " + std::to_string(mass) + " at prompt " +
                std::to_string(x));
    for (std::size_t a = 0; a < cols; ++a) probs[x * cols + a] /= mass;
    thresholds[x] = tau;
  }
  return {Policy(rows, cols, std::move(probs)), std::move(thresholds)};
}

Policy f_divergence_policy(const Policy& pi0, const FeatureTable& table,
                           std::span<const double> theta, double eta,
                           const Divergence& divergence) {
  require(pi0.num_prompts() == table.num_prompts() && pi0.num_actions() == table.num_actions(),
          ErrorKind::shape, "reference policy does not match feature table");
  return f_divergence_policy_from_rewards(pi0, table.rewards(theta), eta, divergence).policy;
}

Policy regularized_policy(const Policy& pi0, std::span<const double> rewards, double eta,
                          const Divergence& divergence) {
  if (divergence.kind() == Divergence::Kind::kl) {
    return gibbs_policy_from_rewards(pi0, rewards, eta);
  }
  return f_divergence_policy_from_rewards(pi0, rewards, eta, divergence).policy;
}

}  // namespace crlhf
