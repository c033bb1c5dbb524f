#include "crlhf/certificates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "crlhf/error.hpp"

namespace crlhf {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_delta(double delta) {
  require(delta > 0.0 && delta < 1.0, ErrorKind::domain, "delta must lie in (0, 1)");
}

double max_abs_reward(const FeatureTable& table, std::span<const double> theta) {
  double b = 0.0;
  for (double r : table.rewards(theta)) b = std::max(b, std::abs(r));
  return b;
}

}  // namespace

std::string to_string(EnvelopeMode mode) {
  return mode == EnvelopeMode::data_dependent ? "data_dependent" : "data_independent";
}

std::string to_string(BoundMode mode) {
  return mode == BoundMode::deterministic ? "deterministic" : "data_driven";
}

NormFactors change_of_norm_factors(double pop_min_eig, double pop_max_eig, double lambda_reg,
                                   std::size_t n, std::size_t dim, double delta, double ck2) {
  check_delta(delta);
  require(n >= 1, ErrorKind::domain, "N must be at least 1");
  require(pop_min_eig > 0.0 && pop_max_eig >= pop_min_eig, ErrorKind::domain,
          "population eigenvalues must satisfy 0 < min <= max");
  require(lambda_reg >= 0.0 && ck2 > 0.0, ErrorKind::domain, "constants must be positive");
  const double ratio = (static_cast<double>(dim) + std::log(2.0 / delta)) / static_cast<double>(n);
  NormFactors out;
  out.eps_upper = ck2 * (std::sqrt(ratio) + ratio);
  out.eps_lower = pop_max_eig / pop_min_eig * out.eps_upper;
  out.degenerate = out.eps_lower >= 1.0;
  out.zeta_max = std::sqrt((1.0 + out.eps_upper) * pop_max_eig + lambda_reg);
  out.zeta_min = std::sqrt(std::max(0.0, 1.0 - out.eps_lower) * pop_min_eig + lambda_reg);
  return out;
}

Envelopes dual_envelopes(double lambda, double beta, double denominator, double bound_b,
                         double eta) {
  require(denominator > 0.0, ErrorKind::domain, "envelope denominator must be positive");
  require(lambda >= 0.0 && beta >= 0.0 && eta > 0.0, ErrorKind::domain,
          "envelopes need lambda >= 0, beta >= 0, eta > 0");
  const double scale = beta / denominator;
  return {(1.0 + lambda) * scale, (1.0 + bound_b * (1.0 + lambda) / eta) * scale};
}

UniformEnvelopes uniform_envelopes(double radius, double beta, double denominator, double bound_b,
                                   double eta, std::size_t net_points) {
  require(net_points >= 1, ErrorKind::domain, "epsilon-net needs at least one interval");
  require(radius >= 0.0, ErrorKind::domain, "radius must be nonnegative");
  UniformEnvelopes out;
  out.at_radius = dual_envelopes(radius, beta, denominator, bound_b, eta);
  out.net_spacing = radius / static_cast<double>(net_points);
  out.net_slack = lipschitz_constant(bound_b, eta) * out.net_spacing;
  out.uniform = {out.at_radius.value + out.net_slack, out.at_radius.derivative + out.net_slack};
  return out;
}

Policy greedy_policy(const FeatureTable& table, std::span<const double> theta) {
  const auto r = table.rewards(theta);
  const std::size_t cols = table.num_actions();
  std::vector<double> probs(r.size(), 0.0);
  for (std::size_t x = 0; x < table.num_prompts(); ++x) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < cols; ++a) {
      if (r[x * cols + a] > r[x * cols + best]) best = a;
    }
    probs[x * cols + best] = 1.0;
  }
  return Policy(table.num_prompts(), cols, std::move(probs));
}

SlaterCertificate slater_slack(const FeatureTable& table, std::span<const double> theta_hat,
                               double j_min, double beta, double min_eig) {
  require(min_eig > 0.0, ErrorKind::domain, "smallest eigenvalue must be positive");
  Policy greedy = greedy_policy(table, theta_hat);
  const double reward = expected_reward(greedy, table.rewards(theta_hat), table.prompt_dist());
  const double correction = beta / std::sqrt(min_eig);
  const double rho = 0.5 * (reward - correction - j_min);
  return {rho, rho > 0.0, reward, correction, std::move(greedy)};
}

LambdaBound lambda_star_bound(BoundMode mode, const LambdaBoundInputs& in) {
  require(in.slack > 0.0, ErrorKind::infeasible,
          "Slater slack " + num(in.slack) + " is not positive; the dual radius cannot be bounded");
  LambdaBound out;
  out.mode = mode;
  const bool data = mode == BoundMode::data_driven;
  out.radius = (in.bound_b + (data ? in.correction : 0.0) - in.objective_tilde) / in.slack;
  require(out.radius >= 0.0, ErrorKind::domain,
          "dual radius is negative; B does not bound the objective");
  out.numerator = std::max(0.0, -in.gprime0 + (data ? in.envelope_gprime0 : 0.0));
  out.modulus = in.modulus ? in.modulus(out.radius) : 0.0;
  if (out.numerator == 0.0) {
    out.refined = 0.0;
  } else if (out.modulus > 0.0) {
    out.refined = out.numerator / out.modulus;
  } else {
    out.refined = std::numeric_limits<double>::infinity();
  }
  out.curvature_branch = out.refined < out.radius;
  out.bound = std::min(out.radius, out.refined);
  return out;
}

PerformanceBounds performance_bounds(double envelope_value_r, double envelope_derivative_r,
                                     double bound_b, double eta, double radius, std::size_t t,
                                     std::size_t num_constraints) {
  require(t >= 1, ErrorKind::domain, "T must be at least 1");
  require(radius > 0.0, ErrorKind::domain, "R must be positive");
  require(eta > 0.0, ErrorKind::domain, "eta must be positive");
  require(num_constraints >= 1, ErrorKind::domain, "at least one constraint");
  const double m = static_cast<double>(num_constraints);
  const double lip = m * bound_b * bound_b / eta;
  const double diam = std::sqrt(m) * radius;
  const double tt = static_cast<double>(t);
  PerformanceBounds out;
  out.dual_gap = 2.0 * envelope_value_r + lip * diam * diam / (2.0 * tt);
  out.violation = envelope_derivative_r + lip * diam / std::sqrt(tt);
  out.primal_gap = out.dual_gap + diam * envelope_derivative_r + lip * diam * diam / std::sqrt(tt);
  return out;
}

std::vector<std::pair<double, Envelopes>> CertificateReport::envelope_table(
    std::size_t points) const {
  std::vector<std::pair<double, Envelopes>> out;
  if (points < 2 || envelope_denominator <= 0.0) return out;
  for (std::size_t i = 0; i < points; ++i) {
    const double l = radius * static_cast<double>(i) / static_cast<double>(points - 1);
    out.emplace_back(l, dual_envelopes(l, beta_n, envelope_denominator, bound_b, eta));
  }
  return out;
}

std::string CertificateReport::to_key_value() const {
  std::ostringstream os;
  os << "delta=" << num(delta) << '\n'
     << "budget=" << budget << '\n'
     << "mode=" << to_string(mode) << '\n'
     << "constant_c=" << num(c) << '\n'
     << "constant_ck2=" << num(ck2) << '\n'
     << "n=" << n << '\n'
     << "dim=" << dim << '\n'
     << "lambda_reg=" << num(lambda_reg) << '\n'
     << "bound_b=" << num(bound_b) << '\n'
     << "eta=" << num(eta) << '\n'
     << "gamma=" << num(gamma) << '\n'
     << "beta_n=" << num(beta_n) << '\n'
     << "sample_min_eig=" << num(sample_min_eig) << '\n'
     << "sample_max_eig=" << num(sample_max_eig) << '\n';
  if (zeta) {
    os << "zeta_min=" << num(zeta->zeta_min) << '\n'
       << "zeta_max=" << num(zeta->zeta_max) << '\n'
       << "zeta_eps_upper=" << num(zeta->eps_upper) << '\n'
       << "zeta_eps_lower=" << num(zeta->eps_lower) << '\n'
       << "zeta_degenerate=" << (zeta->degenerate ? 1 : 0) << '\n'
       << "zeta_from_sample=" << (zeta_from_sample ? 1 : 0) << '\n';
  } else {
    os << "zeta_min=absent\nzeta_max=absent\n";
  }
  os << "envelope_denominator=" << num(envelope_denominator) << '\n';
  for (std::size_t k = 0; k < slater.size(); ++k) {
    const auto& s = slater[k];
    os << "slater_" << k + 1 << "_rho_hat=" << num(s.rho_hat) << '\n'
       << "slater_" << k + 1 << "_certified=" << (s.certified ? 1 : 0) << '\n'
       << "slater_" << k + 1 << "_greedy_reward=" << num(s.greedy_reward) << '\n'
       << "slater_" << k + 1 << "_correction=" << num(s.correction) << '\n';
  }
  os << "slack_rho_hat=" << num(joint_rho_hat) << '\n'
     << "slack_policy=" << joint_policy + 1 << '\n'
     << "objective_tilde=" << num(objective_tilde) << '\n';
  if (lambda_bound) {
    os << "lambda_mode=" << to_string(lambda_bound->mode) << '\n'
       << "Lambda=" << num(lambda_bound->radius) << '\n'
       << "lambda_numerator=" << num(lambda_bound->numerator) << '\n'
       << "lambda_modulus=" << num(lambda_bound->modulus) << '\n'
       << "lambda_refined=" << num(lambda_bound->refined) << '\n'
       << "lambda_star_bound=" << num(lambda_bound->bound) << '\n'
       << "lambda_branch=" << (lambda_bound->curvature_branch ? "curvature" : "radius") << '\n';
  } else {
    os << "Lambda=absent\nlambda_star_bound=absent\n";
  }
  os << "modulus_hat=" << num(modulus_hat) << '\n'
     << "radius=" << num(radius) << '\n'
     << "radius_fallback=" << (radius_fallback ? 1 : 0) << '\n'
     << "envelope_g_at_radius=" << num(envelopes.at_radius.value) << '\n'
     << "envelope_gprime_at_radius=" << num(envelopes.at_radius.derivative) << '\n'
     << "net_spacing=" << num(envelopes.net_spacing) << '\n'
     << "net_slack=" << num(envelopes.net_slack) << '\n'
     << "envelope_g_uniform=" << num(envelopes.uniform.value) << '\n'
     << "envelope_gprime_uniform=" << num(envelopes.uniform.derivative) << '\n'
     << "iterations=" << iterations << '\n'
     << "bound_dual_gap=" << num(bounds.dual_gap) << '\n'
     << "bound_violation=" << num(bounds.violation) << '\n'
     << "bound_primal_gap=" << num(bounds.primal_gap) << '\n';
  for (const auto& [l, e] : envelope_table()) {
    os << "envelope_at_" << num(l) << "=" << num(e.value) << "," << num(e.derivative) << '\n';
  }
  return os.str();
}

CertificateReport certify(const CertificateInputs& in, const CertificateConfig& config,
                          double fallback_radius) {
  require(in.table != nullptr && in.pi0 != nullptr && in.covariance != nullptr,
          ErrorKind::validation, "certificate inputs are incomplete");
  check_delta(config.delta);
  const FeatureTable& table = *in.table;
  const std::size_t m = in.spec.num_constraints();
  require(in.theta_hats.size() == m + 1, ErrorKind::shape,
          "need one fitted parameter per oracle, target first");
  const std::vector<std::vector<double>> constraint_thetas(in.theta_hats.begin() + 1,
                                                           in.theta_hats.end());

  CertificateReport rep;
  rep.delta = config.delta;
  rep.c = config.c;
  rep.ck2 = config.ck2;
  rep.n = in.n;
  rep.dim = table.dim();
  rep.lambda_reg = config.lambda_reg;
  rep.eta = in.spec.eta;
  rep.mode = config.mode;
  rep.iterations = config.iterations;
  if (config.bound_b > 0.0) {
    rep.bound_b = config.bound_b;
  } else {
    for (const auto& th : constraint_thetas) rep.bound_b = std::max(rep.bound_b, max_abs_reward(table, th));
  }
  require(rep.bound_b > 0.0, ErrorKind::domain, "reward bound B is zero");
  rep.gamma = logistic_curvature(rep.bound_b);
  rep.beta_n = beta_n(config.delta, in.n, table.dim(), config.lambda_reg, rep.bound_b, config.c);
  rep.sample_min_eig = in.covariance->min_eig;
  rep.sample_max_eig = in.covariance->max_eig;

  // Sigma_infinity eigenvalues; without them the sample ones stand in.
  EigenRange pop{rep.sample_min_eig - config.lambda_reg, rep.sample_max_eig - config.lambda_reg};
  rep.zeta_from_sample = !in.population_eigs.has_value();
  if (in.population_eigs) pop = *in.population_eigs;
  if (pop.min > 0.0) {
    rep.zeta = change_of_norm_factors(pop.min, pop.max, config.lambda_reg, in.n, table.dim(),
                                      config.delta, config.ck2);
  }
  if (config.mode == EnvelopeMode::data_dependent) {
    rep.envelope_denominator = std::sqrt(rep.sample_min_eig);
  } else {
    require(rep.zeta.has_value(), ErrorKind::numerical,
            "data-independent envelopes need a positive population eigenvalue");
    rep.envelope_denominator = rep.zeta->zeta_min;
  }
  const int extra_events = config.mode == EnvelopeMode::data_independent ? 1 : 0;
  rep.budget = "1-" + std::to_string(static_cast<int>(m) + 2 + extra_events) + "delta";

  const DualProblem estimated =
      DualProblem::from_thetas(in.spec, *in.pi0, table, in.theta_hats[0], constraint_thetas);
  const double correction = rep.beta_n / std::sqrt(rep.sample_min_eig);

  // Per-constraint greedy certificates, then the greedy policy whose worst
  // slack across all constraints is largest.
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m; ++k) {
    rep.slater.push_back(slater_slack(table, constraint_thetas[k], in.spec.j_min[k], rep.beta_n,
                                      rep.sample_min_eig));
    const Policy& candidate = rep.slater.back().greedy;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double rj = estimated.constraint_reward(candidate, j);
      worst = std::min(worst, 0.5 * (rj - correction - in.spec.j_min[j]));
    }
    if (worst > best) {
      best = worst;
      rep.joint_policy = k;
    }
  }
  rep.joint_rho_hat = best;
  rep.objective_tilde = estimated.objective(rep.slater[rep.joint_policy].greedy);

  const std::vector<double> zero(m, 0.0);
  const auto at_zero = estimated.evaluate(zero, false);
  const double env0 = dual_envelopes(0.0, rep.beta_n, rep.envelope_denominator, rep.bound_b,
                                     rep.eta).derivative;
  double numer_sq = 0.0;
  for (double gk : at_zero.gradient) numer_sq += std::pow(std::max(0.0, -gk + env0), 2);
  rep.gprime0_norm = std::sqrt(numer_sq);

  LambdaBoundInputs lb;
  lb.bound_b = rep.bound_b;
  lb.slack = rep.joint_rho_hat;
  lb.objective_tilde = rep.objective_tilde;
  lb.correction = correction;
  // With one constraint this is exactly [-g'(0) + E_g'(0)]_+; with several the
  // norm of the coordinatewise positive parts bounds ||lambda*||.
  lb.gprime0 = m == 1 ? at_zero.gradient[0] : -rep.gprime0_norm;
  lb.envelope_gprime0 = m == 1 ? env0 : 0.0;
  const bool kl = in.spec.divergence.kind() == Divergence::Kind::kl;
  lb.modulus = [&](double radius) {
    if (!kl || radius <= 0.0) return 0.0;
    const auto res = strong_convexity_modulus(estimated, radius, config.modulus_grid);
    rep.modulus_hat = res.modulus;
    return res.modulus;
  };

  if (rep.joint_rho_hat > 0.0) {
    rep.lambda_bound = lambda_star_bound(BoundMode::data_driven, lb);
  }
  if (config.radius) {
    rep.radius = *config.radius;
  } else if (rep.lambda_bound && rep.lambda_bound->radius > 0.0) {
    rep.radius = rep.lambda_bound->radius;
  } else {
    rep.radius = fallback_radius;
    rep.radius_fallback = true;
  }
  const double span = static_cast<double>(m) * rep.radius;
  rep.envelopes = uniform_envelopes(span, rep.beta_n, rep.envelope_denominator, rep.bound_b,
                                    rep.eta, config.net_points);
  rep.bounds = performance_bounds(rep.envelopes.uniform.value, rep.envelopes.uniform.derivative,
                                  rep.bound_b, rep.eta, rep.radius, config.iterations, m);
  return rep;
}

}  // namespace crlhf
