#pragma once

// Ridge-regularized Bradley-Terry maximum likelihood per oracle, and the
// covariance objects the certificates are stated in.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "crlhf/core.hpp"

namespace crlhf {

// Rows Delta_i = phi(x_i, a1_i) - phi(x_i, a2_i), row-major N x d.
class DifferenceMatrix {
 public:
  DifferenceMatrix(std::size_t size, std::size_t dim, std::vector<double> deltas);

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> data() const { return deltas_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(deltas_).subspan(i * dim_, dim_);
  }

 private:
  std::size_t size_;
  std::size_t dim_;
  std::vector<double> deltas_;
};

DifferenceMatrix build_differences(const PreferenceDataset& dataset, const FeatureTable& table);

// log sigma(z) without overflow for any finite z.
double log_sigmoid(double z);
double sigmoid(double z);

// sum_i y_i log sigma(<theta, D_i>) + (1 - y_i) log sigma(-<theta, D_i>)
double log_likelihood(std::span<const double> theta, const DifferenceMatrix& deltas,
                      std::span<const std::uint8_t> labels);

struct LikelihoodDerivatives {
  double value;
  Eigen::VectorXd gradient;  // sum_i (y_i - sigma_i) D_i
  Eigen::MatrixXd hessian;   // -sum_i sigma_i (1 - sigma_i) D_i D_i^T
};

LikelihoodDerivatives log_likelihood_derivatives(std::span<const double> theta,
                                                 const DifferenceMatrix& deltas,
                                                 std::span<const std::uint8_t> labels);

struct CovarianceBundle {
  Eigen::MatrixXd sigma_n;    // (1/N) sum_i D_i D_i^T
  Eigen::MatrixXd sigma_reg;  // sigma_n + lambda_reg I
  double lambda_reg = 0.0;
  double min_eig = 0.0;  // of sigma_reg
  double max_eig = 0.0;

  // ||v||_{sigma_reg} = sqrt(v^T sigma_reg v)
  double norm(std::span<const double> v) const;
};

CovarianceBundle covariance_bundle(const DifferenceMatrix& deltas, double lambda_reg);

// Population covariance of Delta when x ~ d0 and a, a' ~ pi0(.|x) are drawn
// independently: 2 sum_x d0(x) Cov_{pi0(.|x)}(phi).
Eigen::MatrixXd population_difference_covariance(const FeatureTable& table, const Policy& pi0);

struct EigenRange {
  double min = 0.0;
  double max = 0.0;
};
EigenRange eigen_range(const Eigen::MatrixXd& symmetric);

struct MleOptions {
  double lambda_reg = 0.01;
  double tolerance = 1e-8;  // on the penalized gradient norm
  int max_iterations = 100;
  // Only checked after fitting; the fit itself is not projected.
  double bound = std::numeric_limits<double>::infinity();
};

struct MleFit {
  std::vector<double> theta_hat;
  double neg_loglik = 0.0;  // penalized objective at the solution
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
  bool exceeds_bound = false;
};

// Maximizes l(theta) - (N lambda_reg / 2) ||theta||^2 by damped Newton.
// Throws ErrorKind::numerical when the tolerance is not reached.
MleFit fit_mle(const DifferenceMatrix& deltas, std::span<const std::uint8_t> labels,
               const MleOptions& options = {});
MleFit fit_mle(const PreferenceDataset& dataset, const FeatureTable& table, std::size_t oracle,
               const MleOptions& options = {});

// gamma = 1 / (2 + e^{-B} + e^{B}), the logistic curvature floor on |z| <= B.
double logistic_curvature(double bound_b);

// C sqrt((d + log(1/delta)) / (gamma^2 N) + lambda_reg B^2)
double beta_n(double delta, std::size_t n, std::size_t dim, double lambda_reg, double bound_b,
              double c = 1.0);

}  // namespace crlhf
