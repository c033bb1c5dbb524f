#pragma once

// Synthetic environment with known ground truth, the reference oracles used to
// audit the solver (dense dual minimization and a direct primal solver), and
// the convergence sweep over dataset size.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crlhf/certificates.hpp"
#include "crlhf/core.hpp"
#include "crlhf/dual.hpp"
#include "crlhf/solver.hpp"

namespace crlhf {

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t num_prompts = 100;
  std::size_t num_actions = 10;
  std::size_t dim = 8;
  std::size_t num_constraints = 1;
  double w = 0.6;     // theta_0 = w theta_target + (1 - w) mean(theta_constraints)
  double eta0 = 1.0;  // reference policy temperature
  std::size_t n_max = 3000;
  double frac = 0.7;
  double lambda_hi = 5.0;
  std::size_t calibration_samples = 10000;

  void validate() const;
};

struct SyntheticInstance {
  FeatureTable table;
  std::vector<std::vector<double>> thetas;  // target first, unit norm
  std::vector<double> theta0;
  Policy pi0;
};

SyntheticInstance generate_instance(const SyntheticConfig& config);

// N i.i.d. comparisons: x uniform, a and a' from pi0(.|x), one Bradley-Terry
// label per oracle. Record i depends only on (seed, i).
PreferenceDataset sample_dataset(const SyntheticInstance& instance, std::size_t n,
                                 std::uint64_t seed);

// Problem with the true rewards.
DualProblem true_problem(const SyntheticInstance& instance, const ProblemSpec& spec);

enum class CalibrationMode { exact, sampled };

struct Calibration {
  double j_min = 0.0;
  double e0 = 0.0;   // constraint reward at lambda = 0
  double e_hi = 0.0; // at lambda_hi on this constraint's coordinate
  CalibrationMode mode = CalibrationMode::exact;
};

// J_min = E0 + frac (E_hi - E0) for constrained oracle k.
Calibration calibrate_jmin(const SyntheticInstance& instance, double eta, double frac,
                           double lambda_hi, std::size_t constraint = 0,
                           CalibrationMode mode = CalibrationMode::exact,
                           std::size_t samples = 10000, std::uint64_t seed = 0);

struct OracleSolution {
  std::vector<double> lambda;
  double value = 0.0;
  std::vector<double> gradient;
  Policy policy;
  std::size_t evaluations = 0;
};

// Single-constraint dual minimizer: golden-section search on [0, upper] and a
// bisection polish on g'. upper <= 0 means find a bracket by doubling.
OracleSolution oracle_lambda_star(const DualProblem& problem, double upper = 0.0);

// Coarse-to-fine grid minimization of g over [0, upper]^m down to the given
// spacing. The last level is a dense grid of that spacing around the best cell.
OracleSolution grid_oracle(const DualProblem& problem, double upper, double spacing);

struct PrimalSolution {
  Policy policy;
  double objective = 0.0;
  std::vector<double> constraint_rewards;
  std::size_t restarts = 0;
  std::size_t newton_steps = 0;
};

// Direct maximization of the constrained primal over the product of simplices
// by a log-barrier interior-point method, from several feasible starts.
// Throws ErrorKind::infeasible when no strictly feasible policy exists.
PrimalSolution brute_force_primal(const DualProblem& problem, std::size_t restarts = 3,
                                  std::uint64_t seed = 0);

struct SweepConfig {
  SyntheticConfig base;
  std::vector<double> w_values{0.3, 0.6, 0.9};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::size_t> sizes{300, 600, 900, 1200, 1500, 1800, 2100, 2400, 2700, 3000};
  double eta = 0.05;
  std::size_t iterations = 1000;
  StepMode step = StepMode::fixed;
  double lambda_reg = 0.01;
  CalibrationMode calibration = CalibrationMode::exact;
  CertificateConfig certificates;
  std::optional<double> radius;  // otherwise Lambda, or the fallback
  double fallback_radius = 100.0;
  std::size_t threads = 1;

  void validate() const;
};

struct SweepCell {
  double w = 0.0;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double j_min = 0.0;
  double lambda_star = 0.0;
  double lambda_bar = 0.0;
  double suboptimality = 0.0;   // J(pi*) - J(pi*_{lambda_bar})
  double violation = 0.0;       // largest positive-part violation of pi*_{lambda_bar}
  double dual_gap = 0.0;
  double deployed_suboptimality = 0.0;
  double deployed_violation = 0.0;
  double theta_error_target = 0.0;      // ||theta_hat - theta*||_2
  double theta_error_constraint = 0.0;  // largest over constraints
  double beta_n = 0.0;
  bool event_holds = false;  // every ||theta_hat_k - theta*_k||_{Sigma_reg} <= beta_N
  double radius = 0.0;
  bool radius_fallback = false;
  double bound_b = 0.0;
  PerformanceBounds bounds;
  double delta = 0.0;
  std::string budget;
};

struct SweepSummaryRow {
  double w = 0.0;
  std::size_t n = 0;
  double mean_suboptimality = 0.0;
  double se_suboptimality = 0.0;
  double mean_violation = 0.0;
  double se_violation = 0.0;
  double median_theta_error = 0.0;
};

struct SweepReport {
  std::vector<SweepCell> cells;  // ordered by w, seed, N

  std::vector<SweepSummaryRow> summary() const;
  std::string to_csv() const;
  std::string to_long_csv() const;
  std::string summary_csv() const;
};

SweepReport run_sweep(const SweepConfig& config);

}  // namespace crlhf
