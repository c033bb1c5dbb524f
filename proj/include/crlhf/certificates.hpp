#pragma once

// High-probability certificates: change-of-norm factors, dual envelopes,
// data-driven Slater slack, dual-radius bounds and the performance bounds of
// the averaged projected-gradient solver.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crlhf/core.hpp"
#include "crlhf/dual.hpp"
#include "crlhf/mle.hpp"

namespace crlhf {

enum class EnvelopeMode {
  data_dependent,    // denominator sqrt(lambda_min(Sigma_reg))
  data_independent,  // denominator zeta_min
};

std::string to_string(EnvelopeMode mode);

struct NormFactors {
  double zeta_min = 0.0;
  double zeta_max = 0.0;
  double eps_upper = 0.0;  // relative deviation of the top eigenvalue
  double eps_lower = 0.0;  // of the bottom eigenvalue
  bool degenerate = false; // eps_lower >= 1, lower factor clamped
};

// ck2 is the product C K^2 of the concentration constants.
NormFactors change_of_norm_factors(double pop_min_eig, double pop_max_eig, double lambda_reg,
                                   std::size_t n, std::size_t dim, double delta, double ck2 = 1.0);

struct Envelopes {
  double value = 0.0;       // E_g(lambda)
  double derivative = 0.0;  // E_g'(lambda)
};

// denominator is zeta_min or sqrt(lambda_min(Sigma_reg)).
Envelopes dual_envelopes(double lambda, double beta, double denominator, double bound_b,
                         double eta);

struct UniformEnvelopes {
  Envelopes at_radius;  // pointwise envelope at Lambda
  double net_spacing = 0.0;
  double net_slack = 0.0;  // L * spacing, added to both envelopes
  Envelopes uniform;
};

// Envelopes valid over [0, Lambda]: pointwise value at Lambda plus L times
// the spacing of an epsilon-net with net_points intervals.
UniformEnvelopes uniform_envelopes(double radius, double beta, double denominator, double bound_b,
                                   double eta, std::size_t net_points = 256);

// Per-prompt argmax of <theta, phi>; ties go to the lowest action index.
Policy greedy_policy(const FeatureTable& table, std::span<const double> theta);

struct SlaterCertificate {
  double rho_hat = 0.0;
  bool certified = false;     // rho_hat > 0
  double greedy_reward = 0.0; // E_greedy[r_hat]
  double correction = 0.0;    // beta / sqrt(lambda_min)
  Policy greedy;
};

SlaterCertificate slater_slack(const FeatureTable& table, std::span<const double> theta_hat,
                               double j_min, double beta, double min_eig);

enum class BoundMode { deterministic, data_driven };
std::string to_string(BoundMode mode);

struct LambdaBoundInputs {
  double bound_b = 1.0;
  double slack = 0.0;          // rho or rho_hat
  double objective_tilde = 0.0;// J(pi_tilde) or J_hat(pi_tilde)
  double correction = 0.0;     // beta / sqrt(lambda_min); data-driven only
  double gprime0 = 0.0;        // g'(0) or g_hat'(0)
  double envelope_gprime0 = 0.0;// E_g'(0); data-driven only
  // m_g(Lambda) for a given Lambda.
  std::function<double(double)> modulus;
};

struct LambdaBound {
  BoundMode mode = BoundMode::deterministic;
  double radius = 0.0;     // Lambda
  double numerator = 0.0;  // [-g'(0) (+ E_g'(0))]_+
  double modulus = 0.0;    // m_g(Lambda)
  double refined = 0.0;    // numerator / modulus, +inf when the modulus is 0
  double bound = 0.0;      // min(Lambda, refined)
  bool curvature_branch = false;  // refined < Lambda
};

// Throws ErrorKind::infeasible when the slack is not positive.
LambdaBound lambda_star_bound(BoundMode mode, const LambdaBoundInputs& in);

struct PerformanceBounds {
  double dual_gap = 0.0;
  double violation = 0.0;
  double primal_gap = 0.0;
};

// Bounds for the averaged iterate after T steps with step eta / (m B^2) on
// the box [0, R]^m. For m > 1 the optimization terms use the Lipschitz bound
// m B^2 / eta and the box diameter sqrt(m) R; the envelopes passed in should
// be evaluated at ||lambda||_1 = m R.
PerformanceBounds performance_bounds(double envelope_value_r, double envelope_derivative_r,
                                     double bound_b, double eta, double radius, std::size_t t,
                                     std::size_t num_constraints = 1);

struct CertificateConfig {
  double delta = 0.05;
  double c = 1.0;       // constant in beta_N
  double ck2 = 1.0;     // C K^2 in the change-of-norm deviation
  double lambda_reg = 0.01;
  double bound_b = 0.0; // <= 0 means max_{x,a} |<theta_hat_constraint, phi>|
  EnvelopeMode mode = EnvelopeMode::data_dependent;
  std::size_t modulus_grid = 64;
  std::size_t net_points = 256;
  std::size_t iterations = 1000;
  std::optional<double> radius;  // overrides the computed Lambda for the bounds
};

struct CertificateReport {
  double delta = 0.0;
  double c = 0.0;
  double ck2 = 0.0;
  std::size_t n = 0;
  std::size_t dim = 0;
  double lambda_reg = 0.0;
  double bound_b = 0.0;
  double eta = 0.0;
  EnvelopeMode mode = EnvelopeMode::data_dependent;
  double beta_n = 0.0;
  double gamma = 0.0;
  double sample_min_eig = 0.0;
  double sample_max_eig = 0.0;
  std::optional<NormFactors> zeta;  // present when population eigenvalues are known
  bool zeta_from_sample = false;    // population eigenvalues replaced by sample ones
  double envelope_denominator = 0.0;
  std::vector<SlaterCertificate> slater;  // one per constraint
  // Slack of the greedy policy that certifies every constraint at once, and
  // which constraint's greedy policy it is. Equals slater[0] when m = 1.
  double joint_rho_hat = 0.0;
  std::size_t joint_policy = 0;
  double objective_tilde = 0.0;  // J_hat of that policy
  double gprime0_norm = 0.0;     // ||[-g_hat'(0) + E_g'(0)]_+||
  std::optional<LambdaBound> lambda_bound;
  double radius = 0.0;        // R used for the performance bounds
  bool radius_fallback = false;
  UniformEnvelopes envelopes;
  PerformanceBounds bounds;
  std::size_t iterations = 0;
  double modulus_hat = 0.0;   // m_g_hat on [0, Lambda] for the estimated dual
  // Union-bound budget, e.g. "1-3delta".
  std::string budget;

  // Envelope values on a grid over [0, radius].
  std::vector<std::pair<double, Envelopes>> envelope_table(std::size_t points = 11) const;

  // One key=value pair per line.
  std::string to_key_value() const;
};

struct CertificateInputs {
  const FeatureTable* table = nullptr;
  const Policy* pi0 = nullptr;
  ProblemSpec spec;
  std::vector<std::vector<double>> theta_hats;  // target first
  const CovarianceBundle* covariance = nullptr;
  std::size_t n = 0;
  std::optional<EigenRange> population_eigs;  // of Sigma_infinity, synthetic mode
};

// Assembles every certificate for a fitted problem. The fallback radius is
// used when Slater slack cannot be certified.
CertificateReport certify(const CertificateInputs& in, const CertificateConfig& config,
                          double fallback_radius = 100.0);

}  // namespace crlhf
