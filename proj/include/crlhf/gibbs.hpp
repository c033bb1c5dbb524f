#pragma once

// Closed-form maximizers of the regularized Lagrangian: the Gibbs tilt of pi0
// for KL, and the clipped inverse-link form with a per-prompt threshold for
// chi-square and alpha divergences.

#include <span>
#include <vector>

#include "crlhf/core.hpp"

namespace crlhf {

// theta_target + sum_k lambda_k theta_k.
struct CombinedReward {
  std::vector<double> theta;
  std::vector<double> lambda;
};

CombinedReward combine(std::span<const double> theta_target,
                       const std::vector<std::vector<double>>& theta_constraints,
                       std::span<const double> lambda);

// r_target + sum_k lambda_k r_k on the flat table.
std::vector<double> combine_rewards(const RewardTables& tables, std::span<const double> lambda);

// pi(a|x) proportional to pi0(a|x) exp(<theta, phi(x, a)> / eta).
Policy gibbs_policy(const Policy& pi0, const FeatureTable& table, std::span<const double> theta,
                    double eta);

// Same tilt from a flat reward table. Rows with constant reward return the
// pi0 row unchanged.
Policy gibbs_policy_from_rewards(const Policy& pi0, std::span<const double> rewards, double eta);

// Gibbs tilt when log pi0 is already tabulated (hot loop of the solver).
Policy gibbs_from_log_reference(const Policy& pi0, std::span<const double> log_pi0,
                                std::span<const double> rewards, double eta);

struct ThresholdPolicy {
  Policy policy;
  std::vector<double> thresholds;  // tau_x per prompt
};

// pi(a|x) = pi0(a|x) [ (f')^{-1}((r - tau_x) / eta) ]_+ with tau_x found by
// bisection so each row sums to one. Chi-square and alpha only.
ThresholdPolicy f_divergence_policy_from_rewards(const Policy& pi0, std::span<const double> rewards,
                                                 double eta, const Divergence& divergence);
Policy f_divergence_policy(const Policy& pi0, const FeatureTable& table,
                           std::span<const double> theta, double eta,
                           const Divergence& divergence);

// Dispatches to the Gibbs fast path for KL.
Policy regularized_policy(const Policy& pi0, std::span<const double> rewards, double eta,
                          const Divergence& divergence);

}  // namespace crlhf
