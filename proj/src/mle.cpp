#include "crlhf/mle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "crlhf/error.hpp"
#include "crlhf/kernels.hpp"

namespace crlhf {
namespace {

// Feature differences are bounded by 2 in norm; allow rounding.
constexpr double kDeltaNormCap = 2.0 + 1e-9;

void check_labels(const DifferenceMatrix& deltas, std::span<const std::uint8_t> labels) {
  require(labels.size() == deltas.size(), ErrorKind::shape,
          "label count " + std::to_string(labels.size()) + " does not match " +
              std::to_string(deltas.size()) + " comparisons");
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_matrix(
    const DifferenceMatrix& deltas) {
  return {deltas.data().data(), static_cast<Eigen::Index>(deltas.size()),
          static_cast<Eigen::Index>(deltas.dim())};
}

std::vector<double> margins(std::span<const double> theta, const DifferenceMatrix& deltas) {
  require(theta.size() == deltas.dim(), ErrorKind::shape, "parameter dimension mismatch");
  std::vector<double> z(deltas.size());
  kernels::active().matvec(deltas.data().data(), deltas.size(), deltas.dim(), theta.data(),
                           z.data());
  return z;
}

struct Penalized {
  double value;  // negative log-likelihood plus ridge
  Eigen::VectorXd gradient;
};

Penalized penalized(const Eigen::VectorXd& theta, const DifferenceMatrix& deltas,
                    std::span<const std::uint8_t> labels, double ridge) {
  const std::span<const double> t(theta.data(), static_cast<std::size_t>(theta.size()));
  const auto z = margins(t, deltas);
  double value = 0.0;
  Eigen::VectorXd residual(static_cast<Eigen::Index>(deltas.size()));
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = labels[i];
    value -= y * log_sigmoid(z[i]) + (1.0 - y) * log_sigmoid(-z[i]);
    residual[static_cast<Eigen::Index>(i)] = y - sigmoid(z[i]);
  }
  value += 0.5 * ridge * theta.squaredNorm();
  Eigen::VectorXd grad = -(as_matrix(deltas).transpose() * residual) + ridge * theta;
  return {value, std::move(grad)};
}

}  // namespace

DifferenceMatrix::DifferenceMatrix(std::size_t size, std::size_t dim, std::vector<double> deltas)
    : size_(size), dim_(dim), deltas_(std::move(deltas)) {
  require(size_ >= 1 && dim_ >= 1, ErrorKind::validation, "empty difference matrix");
  require(deltas_.size() == size_ * dim_, ErrorKind::shape, "difference array has the wrong size");
  for (std::size_t i = 0; i < size_; ++i) {
    const auto r = row(i);
    const double n = std::sqrt(kernels::scalar().dot(r.data(), r.data(), dim_));
    require(n <= kDeltaNormCap, ErrorKind::validation,
            "feature difference " + std::to_string(i) + " has norm above 2");
  }
}

DifferenceMatrix build_differences(const PreferenceDataset& dataset, const FeatureTable& table) {
  dataset.check_against(table);
  const std::size_t d = table.dim();
  std::vector<double> out(dataset.size() * d);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& rec = dataset.records()[i];
    const auto f1 = table.feature(rec.prompt, rec.action1);
    const auto f2 = table.feature(rec.prompt, rec.action2);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = f1[j] - f2[j];
  }
  return DifferenceMatrix(dataset.size(), d, std::move(out));
}

double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_likelihood(std::span<const double> theta, const DifferenceMatrix& deltas,
                      std::span<const std::uint8_t> labels) {
  check_labels(deltas, labels);
  const auto z = margins(theta, deltas);
  double value = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    value += labels[i] != 0 ? log_sigmoid(z[i]) : log_sigmoid(-z[i]);
  }
  return value;
}

LikelihoodDerivatives log_likelihood_derivatives(std::span<const double> theta,
                                                 const DifferenceMatrix& deltas,
                                                 std::span<const std::uint8_t> labels) {
  check_labels(deltas, labels);
  const auto z = margins(theta, deltas);
  const auto n = static_cast<Eigen::Index>(deltas.size());
  Eigen::VectorXd residual(n);
  Eigen::VectorXd weight(n);
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double zi = z[static_cast<std::size_t>(i)];
    const bool y = labels[static_cast<std::size_t>(i)] != 0;
    value += y ? log_sigmoid(zi) : log_sigmoid(-zi);
    const double s = sigmoid(zi);
    residual[i] = (y ? 1.0 : 0.0) - s;
    weight[i] = s * sigmoid(-zi);
  }
  const auto d = as_matrix(deltas);
  LikelihoodDerivatives out;
  out.value = value;
  out.gradient = d.transpose() * residual;
  out.hessian = -(d.transpose() * weight.asDiagonal() * d);
  return out;
}

double CovarianceBundle::norm(std::span<const double> v) const {
  require(static_cast<Eigen::Index>(v.size()) == sigma_reg.rows(), ErrorKind::shape,
          "vector dimension does not match covariance");
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  return std::sqrt(std::max(0.0, x.dot(sigma_reg * x)));
}

EigenRange eigen_range(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
  require(solver.info() == Eigen::Success, ErrorKind::numerical, "eigenvalue solver failed");
  const auto& ev = solver.eigenvalues();
  return {ev.minCoeff(), ev.maxCoeff()};
}

CovarianceBundle covariance_bundle(const DifferenceMatrix& deltas, double lambda_reg) {
  require(lambda_reg > 0.0, ErrorKind::domain, "lambda_reg must be positive");
  const auto d = as_matrix(deltas);
  CovarianceBundle out;
  out.sigma_n = (d.transpose() * d) / static_cast<double>(deltas.size());
  out.sigma_n = 0.5 * (out.sigma_n + out.sigma_n.transpose());
  out.lambda_reg = lambda_reg;
  out.sigma_reg = out.sigma_n;
  out.sigma_reg.diagonal().array() += lambda_reg;
  const auto range = eigen_range(out.sigma_reg);
  out.min_eig = range.min;
  out.max_eig = range.max;
  return out;
}

Eigen::MatrixXd population_difference_covariance(const FeatureTable& table, const Policy& pi0) {
  require(pi0.num_prompts() == table.num_prompts() && pi0.num_actions() == table.num_actions(),
          ErrorKind::shape, "reference policy does not match feature table");
  const auto dim = static_cast<Eigen::Index>(table.dim());
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t x = 0; x < table.num_prompts(); ++x) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t a = 0; a < table.num_actions(); ++a) {
      const auto f = table.feature(x, a);
      const Eigen::Map<const Eigen::VectorXd> phi(f.data(), dim);
      mean += pi0(x, a) * phi;
      second += pi0(x, a) * phi * phi.transpose();
    }
    total += table.prompt_dist()[x] * (second - mean * mean.transpose());
  }
  Eigen::MatrixXd out = 2.0 * total;
  return 0.5 * (out + out.transpose());
}

MleFit fit_mle(const DifferenceMatrix& deltas, std::span<const std::uint8_t> labels,
               const MleOptions& options) {
  check_labels(deltas, labels);
  require(options.lambda_reg >= 0.0, ErrorKind::domain, "lambda_reg must be nonnegative");
  const auto dim = static_cast<Eigen::Index>(deltas.dim());
  const double ridge = static_cast<double>(deltas.size()) * options.lambda_reg;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  Penalized cur = penalized(theta, deltas, labels, ridge);
  MleFit fit;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (cur.gradient.norm() <= options.tolerance) break;
    // Curvature of the negative penalized log-likelihood.
    const std::span<const double> t(theta.data(), static_cast<std::size_t>(dim));
    Eigen::MatrixXd h = -log_likelihood_derivatives(t, deltas, labels).hessian;
    h.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    Eigen::VectorXd step = -ldlt.solve(cur.gradient);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = -cur.gradient;

    const double slope = cur.gradient.dot(step);
    double t_step = 1.0;
    Penalized next = penalized(theta + step, deltas, labels, ridge);
    // Near the optimum the value stalls at rounding level; a full step that
    // shrinks the gradient is accepted even if Armijo cannot see progress.
    const bool full_ok = next.gradient.norm() < 0.5 * cur.gradient.norm();
    while (!full_ok && next.value > cur.value + 1e-4 * t_step * slope && t_step > 1e-12) {
      t_step *= 0.5;
      next = penalized(theta + t_step * step, deltas, labels, ridge);
    }
    if (!full_ok && next.value > cur.value && next.gradient.norm() >= cur.gradient.norm()) break;
    theta += t_step * step;
    cur = std::move(next);
  }

  fit.theta_hat.assign(theta.data(), theta.data() + dim);
  fit.neg_loglik = cur.value;
  fit.grad_norm = cur.gradient.norm();
  fit.iterations = it;
  fit.converged = fit.grad_norm <= options.tolerance;
  fit.exceeds_bound = theta.norm() > options.bound;
  require(fit.converged, ErrorKind::numerical,
          "Bradley-Terry fit did not converge: gradient norm " + std::to_string(fit.grad_norm) +
              " after " + std::to_string(it) + " iterations");
  return fit;
}

MleFit fit_mle(const PreferenceDataset& dataset, const FeatureTable& table, std::size_t oracle,
               const MleOptions& options) {
  const auto deltas = build_differences(dataset, table);
  const auto labels = dataset.labels_for(oracle);
  return fit_mle(deltas, labels, options);
}

double logistic_curvature(double bound_b) {
  require(bound_b >= 0.0 && std::isfinite(bound_b), ErrorKind::domain, "B must be finite and >= 0");
  return 1.0 / (2.0 + std::exp(-bound_b) + std::exp(bound_b));
}

double beta_n(double delta, std::size_t n, std::size_t dim, double lambda_reg, double bound_b,
              double c) {
  require(delta > 0.0 && delta < 1.0, ErrorKind::domain, "delta must lie in (0, 1)");
  require(n >= 1, ErrorKind::domain, "N must be at least 1");
  require(c > 0.0, ErrorKind::domain, "C must be positive");
  require(lambda_reg >= 0.0, ErrorKind::domain, "lambda_reg must be nonnegative");
  const double gamma = logistic_curvature(bound_b);
  const double stat = (static_cast<double>(dim) + std::log(1.0 / delta)) /
                      (gamma * gamma * static_cast<double>(n));
  return c * std::sqrt(stat + lambda_reg * bound_b * bound_b);
}

}  // namespace crlhf
