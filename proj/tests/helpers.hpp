#pragma once

// Test-side reference computations. These are written directly from the
// definitions with long double accumulation and share no code with the
// library's kernels, Gibbs or dual routines.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "crlhf/core.hpp"

namespace testing_ref {

using crlhf::FeatureTable;
using crlhf::Policy;

inline std::vector<double> random_unit_features(std::mt19937_64& rng, std::size_t x,
                                                std::size_t a, std::size_t d) {
  std::normal_distribution<double> n01;
  std::vector<double> f(x * a * d);
  for (std::size_t e = 0; e < x * a; ++e) {
    long double sq = 0;
    for (std::size_t j = 0; j < d; ++j) {
      f[e * d + j] = n01(rng);
      sq += static_cast<long double>(f[e * d + j]) * f[e * d + j];
    }
    const double nrm = static_cast<double>(std::sqrt(sq));
    for (std::size_t j = 0; j < d; ++j) f[e * d + j] /= nrm;
  }
  return f;
}

inline std::vector<double> random_unit_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n01;
  std::vector<double> v(d);
  long double sq = 0;
  for (auto& x : v) {
    x = n01(rng);
    sq += static_cast<long double>(x) * x;
  }
  for (auto& x : v) x /= static_cast<double>(std::sqrt(sq));
  return v;
}

inline Policy random_policy(std::mt19937_64& rng, std::size_t x, std::size_t a,
                            double floor = 0.05) {
  std::uniform_real_distribution<double> u(floor, 1.0);
  std::vector<double> p(x * a);
  for (std::size_t i = 0; i < x; ++i) {
    long double total = 0;
    for (std::size_t j = 0; j < a; ++j) {
      p[i * a + j] = u(rng);
      total += p[i * a + j];
    }
    for (std::size_t j = 0; j < a; ++j) p[i * a + j] = static_cast<double>(p[i * a + j] / total);
  }
  // Force exact row sums by placing the rounding residue on the last entry.
  for (std::size_t i = 0; i < x; ++i) {
    long double s = 0;
    for (std::size_t j = 0; j + 1 < a; ++j) s += p[i * a + j];
    p[i * a + a - 1] = static_cast<double>(1.0L - s);
  }
  return Policy(x, a, std::move(p));
}

inline std::vector<double> rewards(const FeatureTable& t, const std::vector<double>& theta) {
  std::vector<double> r(t.num_entries());
  for (std::size_t x = 0; x < t.num_prompts(); ++x) {
    for (std::size_t a = 0; a < t.num_actions(); ++a) {
      long double s = 0;
      const auto f = t.feature(x, a);
      for (std::size_t j = 0; j < t.dim(); ++j) s += static_cast<long double>(f[j]) * theta[j];
      r[x * t.num_actions() + a] = static_cast<double>(s);
    }
  }
  return r;
}

// pi0 exp(r / eta) normalized per row, in long double.
inline std::vector<long double> gibbs(const Policy& pi0, const std::vector<double>& r, double eta) {
  const std::size_t rows = pi0.num_prompts();
  const std::size_t cols = pi0.num_actions();
  std::vector<long double> p(rows * cols);
  for (std::size_t x = 0; x < rows; ++x) {
    long double mx = -INFINITY;
    for (std::size_t a = 0; a < cols; ++a) mx = std::max(mx, static_cast<long double>(r[x * cols + a]) / eta);
    long double z = 0;
    for (std::size_t a = 0; a < cols; ++a) {
      p[x * cols + a] = pi0(x, a) * std::exp(static_cast<long double>(r[x * cols + a]) / eta - mx);
      z += p[x * cols + a];
    }
    for (std::size_t a = 0; a < cols; ++a) p[x * cols + a] /= z;
  }
  return p;
}

// eta sum_x d0 log sum_a pi0 exp(r_lambda / eta) - sum_k lambda_k J_k.
inline long double dual_value(const Policy& pi0, const std::vector<double>& d0,
                              const std::vector<double>& r_target,
                              const std::vector<std::vector<double>>& r_cons,
                              const std::vector<double>& lambda, const std::vector<double>& jmin,
                              double eta) {
  const std::size_t rows = pi0.num_prompts();
  const std::size_t cols = pi0.num_actions();
  long double total = 0;
  for (std::size_t x = 0; x < rows; ++x) {
    std::vector<long double> z(cols);
    long double mx = -INFINITY;
    for (std::size_t a = 0; a < cols; ++a) {
      long double r = r_target[x * cols + a];
      for (std::size_t k = 0; k < lambda.size(); ++k) r += lambda[k] * static_cast<long double>(r_cons[k][x * cols + a]);
      z[a] = r / eta;
      mx = std::max(mx, z[a]);
    }
    long double s = 0;
    for (std::size_t a = 0; a < cols; ++a) s += pi0(x, a) * std::exp(z[a] - mx);
    total += d0[x] * eta * (mx + std::log(s));
  }
  for (std::size_t k = 0; k < lambda.size(); ++k) total -= lambda[k] * static_cast<long double>(jmin[k]);
  return total;
}

inline long double expected(const std::vector<long double>& p, const std::vector<double>& r,
                            const std::vector<double>& d0, std::size_t cols) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += d0[i / cols] * p[i] * r[i];
  return s;
}

inline long double kl(const std::vector<long double>& p, const Policy& pi0,
                      const std::vector<double>& d0) {
  const std::size_t cols = pi0.num_actions();
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) s += d0[i / cols] * p[i] * std::log(p[i] / pi0.probs()[i]);
  }
  return s;
}

}  // namespace testing_ref
