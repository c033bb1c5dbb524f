#include "crlhf/synthetic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "crlhf/error.hpp"
#include "crlhf/gibbs.hpp"
#include "crlhf/kernels.hpp"
#include "crlhf/mle.hpp"
#include "crlhf/rng.hpp"

namespace crlhf {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void normalize(std::span<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  require(n > 0.0, ErrorKind::numerical, "cannot normalize a zero vector");
  for (double& x : v) x /= n;
}

std::size_t sample_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return a;
  }
  return probs.size() - 1;
}

// ---- Interior-point machinery for the direct primal solver ----------------

// maximize f(z) subject to ineq z > ineq_rhs over an affine set. Steps move
// along the columns of `basis`, which span the null space of the equality
// constraints, so a feasible start stays feasible without a KKT solve (whose
// conditioning collapses once barrier curvatures reach 1/mu).
struct BarrierProblem {
  Eigen::MatrixXd basis;
  Eigen::MatrixXd ineq;
  Eigen::VectorXd ineq_rhs;
  std::function<double(const Eigen::VectorXd&)> f;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> hess_diag;  // f has diagonal Hessian
};

double barrier_value(const BarrierProblem& bp, const Eigen::VectorXd& z, double mu) {
  const Eigen::VectorXd s = bp.ineq * z - bp.ineq_rhs;
  if ((s.array() <= 0.0).any()) return -std::numeric_limits<double>::infinity();
  return bp.f(z) + mu * s.array().log().sum();
}

// Newton centering at fixed mu; returns the number of Newton steps.
std::size_t center(const BarrierProblem& bp, Eigen::VectorXd& z, double mu) {
  std::size_t steps = 0;
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd s = bp.ineq * z - bp.ineq_rhs;
    const Eigen::VectorXd inv = s.cwiseInverse();
    const Eigen::VectorXd g = bp.grad(z) + mu * (bp.ineq.transpose() * inv);
    Eigen::MatrixXd h = -(bp.ineq.transpose() * inv.cwiseAbs2().asDiagonal() * bp.ineq) * mu;
    h.diagonal() += bp.hess_diag(z);

    const Eigen::VectorXd gy = bp.basis.transpose() * g;
    const Eigen::MatrixXd hy = -(bp.basis.transpose() * h * bp.basis);
    Eigen::VectorXd dy = hy.ldlt().solve(gy);
    if (!dy.allFinite()) dy = hy.fullPivLu().solve(gy);
    const Eigen::VectorXd dz = bp.basis * dy;
    const double decrement = gy.dot(dy);
    ++steps;
    if (!(decrement > 1e-18)) break;

    double t = 1.0;
    const Eigen::VectorXd ds = bp.ineq * dz;
    for (Eigen::Index j = 0; j < ds.size(); ++j) {
      if (ds[j] < 0.0) t = std::min(t, -0.99 * s[j] / ds[j]);
    }
    const double phi0 = barrier_value(bp, z, mu);
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = z + t * dz;
      const double phi = barrier_value(bp, cand, mu);
      // Near the optimum the Armijo test drowns in rounding; any feasible
      // point then suffices.
      if (phi >= phi0 + 0.25 * t * decrement || (decrement < 1e-10 && std::isfinite(phi))) {
        z = cand;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved || decrement < 1e-16) break;
  }
  return steps;
}

std::size_t barrier_solve(const BarrierProblem& bp, Eigen::VectorXd& z, double mu0,
                          double mu_end) {
  std::size_t steps = 0;
  for (double mu = mu0; mu >= mu_end; mu *= 0.1) steps += center(bp, z, mu);
  return steps;
}

double divergence_second(const Divergence& div, double t) {
  switch (div.kind()) {
    case Divergence::Kind::kl: return 1.0 / t;
    case Divergence::Kind::chi_square: return 2.0;
    case Divergence::Kind::alpha: return std::pow(t, div.alpha_value() - 2.0);
  }
  return 0.0;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

void SyntheticConfig::validate() const {
  require(num_prompts >= 1 && num_actions >= 2 && dim >= 1, ErrorKind::validation,
          "synthetic environment needs prompts, at least two actions and a dimension");
  require(num_constraints >= 1, ErrorKind::validation, "at least one constraint");
  require(w >= 0.0 && w <= 1.0, ErrorKind::validation, "w must lie in [0, 1]");
  require(eta0 > 0.0, ErrorKind::validation, "eta0 must be positive");
  require(frac >= 0.0 && frac <= 1.0, ErrorKind::validation, "frac must lie in [0, 1]");
  require(lambda_hi > 0.0, ErrorKind::validation, "lambda_hi must be positive");
  require(n_max >= 1, ErrorKind::validation, "N_max must be at least 1");
}

SyntheticInstance generate_instance(const SyntheticConfig& config) {
  config.validate();
  const std::size_t x_count = config.num_prompts;
  const std::size_t a_count = config.num_actions;
  const std::size_t d = config.dim;

  const CounterRng feat_rng(config.seed, Stream::features);
  std::vector<double> features(x_count * a_count * d);
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = feat_rng.normal(i);
  for (std::size_t e = 0; e < x_count * a_count; ++e) {
    normalize(std::span<double>(features).subspan(e * d, d));
  }
  FeatureTable table(x_count, a_count, d, std::move(features));

  std::vector<std::vector<double>> thetas;
  for (std::size_t k = 0; k <= config.num_constraints; ++k) {
    const CounterRng rng(config.seed, Stream::thetas, k);
    std::vector<double> th(d);
    for (std::size_t j = 0; j < d; ++j) th[j] = rng.normal(j);
    normalize(th);
    thetas.push_back(std::move(th));
  }

  std::vector<double> theta0(d, 0.0);
  const double share = (1.0 - config.w) / static_cast<double>(config.num_constraints);
  for (std::size_t j = 0; j < d; ++j) {
    theta0[j] = config.w * thetas[0][j];
    for (std::size_t k = 1; k <= config.num_constraints; ++k) theta0[j] += share * thetas[k][j];
  }
  Policy pi0 = gibbs_policy_from_rewards(Policy::uniform(x_count, a_count), table.rewards(theta0),
                                         config.eta0);
  require(pi0.has_full_support(), ErrorKind::numerical,
          "reference policy underflowed; increase eta0");
  return {std::move(table), std::move(thetas), std::move(theta0), std::move(pi0)};
}

PreferenceDataset sample_dataset(const SyntheticInstance& instance, std::size_t n,
                                 std::uint64_t seed) {
  require(n >= 1, ErrorKind::domain, "N must be at least 1");
  const auto& table = instance.table;
  const std::size_t k_count = instance.thetas.size();
  std::vector<std::vector<double>> rewards;
  for (const auto& th : instance.thetas) rewards.push_back(table.rewards(th));

  const CounterRng rng(seed, Stream::dataset);
  const std::uint64_t stride = 3 + k_count;
  std::vector<Comparison> records(n);
  std::vector<std::uint8_t> labels(n * k_count);
  const std::size_t cols = table.num_actions();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t base = i * stride;
    const auto x = std::min(table.num_prompts() - 1,
                            static_cast<std::size_t>(rng.uniform(base) *
                                                     static_cast<double>(table.num_prompts())));
    const auto row = instance.pi0.row(x);
    const std::size_t a1 = sample_index(row, rng.uniform(base + 1));
    const std::size_t a2 = sample_index(row, rng.uniform(base + 2));
    records[i] = {static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(a1),
                  static_cast<std::uint32_t>(a2)};
    for (std::size_t k = 0; k < k_count; ++k) {
      const double margin = rewards[k][x * cols + a1] - rewards[k][x * cols + a2];
      labels[i * k_count + k] = rng.uniform(base + 3 + k) < sigmoid(margin) ? 1 : 0;
    }
  }
  return PreferenceDataset(k_count, std::move(records), std::move(labels));
}

DualProblem true_problem(const SyntheticInstance& instance, const ProblemSpec& spec) {
  const std::vector<std::vector<double>> constraints(instance.thetas.begin() + 1,
                                                     instance.thetas.end());
  return DualProblem::from_thetas(spec, instance.pi0, instance.table, instance.thetas[0],
                                  constraints);
}

Calibration calibrate_jmin(const SyntheticInstance& instance, double eta, double frac,
                           double lambda_hi, std::size_t constraint, CalibrationMode mode,
                           std::size_t samples, std::uint64_t seed) {
  require(frac >= 0.0 && frac <= 1.0, ErrorKind::domain, "frac must lie in [0, 1]");
  const std::size_t m = instance.thetas.size() - 1;
  require(constraint < m, ErrorKind::domain, "constraint index out of range");
  ProblemSpec spec{eta, std::vector<double>(m, 0.0), Divergence::kl()};
  const DualProblem problem = true_problem(instance, spec);
  std::vector<double> lambda(m, 0.0);
  const Policy at_zero = problem.policy_at(lambda);
  lambda[constraint] = lambda_hi;
  const Policy at_hi = problem.policy_at(lambda);

  Calibration out;
  out.mode = mode;
  if (mode == CalibrationMode::exact) {
    out.e0 = problem.constraint_reward(at_zero, constraint);
    out.e_hi = problem.constraint_reward(at_hi, constraint);
  } else {
    require(samples >= 1, ErrorKind::domain, "calibration needs at least one sample");
    const auto& r = problem.rewards().constraints[constraint];
    const std::size_t cols = instance.table.num_actions();
    const std::size_t rows = instance.table.num_prompts();
    auto estimate = [&](const Policy& pi, std::uint64_t sub) {
      const CounterRng rng(seed, Stream::calibration, 2 * constraint + sub);
      double total = 0.0;
      for (std::size_t i = 0; i < samples; ++i) {
        const auto x = std::min(rows - 1, static_cast<std::size_t>(rng.uniform(2 * i) *
                                                                   static_cast<double>(rows)));
        const std::size_t a = sample_index(pi.row(x), rng.uniform(2 * i + 1));
        total += r[x * cols + a];
      }
      return total / static_cast<double>(samples);
    };
    out.e0 = estimate(at_zero, 0);
    out.e_hi = estimate(at_hi, 1);
  }
  out.j_min = (1.0 - frac) * out.e0 + frac * out.e_hi;  // exact at both ends
  return out;
}

OracleSolution oracle_lambda_star(const DualProblem& problem, double upper) {
  require(problem.num_constraints() == 1, ErrorKind::domain,
          "the golden-section oracle handles one constraint; use grid_oracle");
  std::size_t evals = 0;
  auto eval = [&](double l) {
    ++evals;
    return problem.evaluate(std::span<const double>(&l, 1), false);
  };
  auto finish = [&](double l) {
    auto e = eval(l);
    return OracleSolution{{l}, e.value, e.gradient, std::move(e.policy), evals};
  };

  if (eval(0.0).gradient[0] >= 0.0) return finish(0.0);

  double hi = upper;
  if (hi <= 0.0) {
    hi = 1.0;
    while (eval(hi).gradient[0] < 0.0) {
      hi *= 2.0;
      require(hi < 1e9, ErrorKind::infeasible, "dual has no minimizer below 1e9; constraint infeasible");
    }
  } else {
    require(eval(hi).gradient[0] >= 0.0, ErrorKind::numerical,
            "g' is still negative at the upper end; bracket does not contain the minimizer");
  }

  // Golden section on g.
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0;
  double b = hi;
  double c = b - ratio * (b - a);
  double d = a + ratio * (b - a);
  double fc = eval(c).value;
  double fd = eval(d).value;
  while (b - a > 1e-6 * std::max(1.0, b)) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = eval(c).value;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = eval(d).value;
    }
  }

  // Bisection polish on the monotone derivative from a verified bracket.
  double lo = a;
  double up = b;
  while (lo > 0.0 && eval(lo).gradient[0] > 0.0) lo = std::max(0.0, lo - 2.0 * (b - a));
  while (eval(up).gradient[0] < 0.0) up = std::min(hi, up + 2.0 * (b - a));
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + up);
    if (mid <= lo || mid >= up) break;
    const double g = eval(mid).gradient[0];
    if (std::abs(g) <= 1e-13) {
      lo = up = mid;
      break;
    }
    if (g < 0.0) {
      lo = mid;
    } else {
      up = mid;
    }
  }
  const double glo = eval(lo).gradient[0];
  const double gup = eval(up).gradient[0];
  return finish(std::abs(glo) <= std::abs(gup) ? lo : up);
}

OracleSolution grid_oracle(const DualProblem& problem, double upper, double spacing) {
  require(upper > 0.0 && spacing > 0.0, ErrorKind::domain, "grid needs positive extent and spacing");
  const std::size_t m = problem.num_constraints();
  std::size_t evals = 0;
  std::vector<double> lo(m, 0.0);
  std::vector<double> hi(m, upper);
  std::vector<double> best(m, 0.0);
  double best_value = std::numeric_limits<double>::infinity();
  double h = upper / 32.0;

  while (true) {
    const bool last = h <= spacing;
    if (last) h = spacing;
    std::vector<std::size_t> count(m);
    for (std::size_t k = 0; k < m; ++k) {
      count[k] = static_cast<std::size_t>(std::floor((hi[k] - lo[k]) / h + 1e-9)) + 1;
    }
    std::vector<std::size_t> idx(m, 0);
    std::vector<double> lambda(m);
    while (true) {
      for (std::size_t k = 0; k < m; ++k) lambda[k] = std::min(upper, lo[k] + h * static_cast<double>(idx[k]));
      const double v = problem.value(lambda);
      ++evals;
      if (v < best_value) {
        best_value = v;
        best = lambda;
      }
      std::size_t k = 0;
      while (k < m && ++idx[k] == count[k]) idx[k++] = 0;
      if (k == m) break;
    }
    if (last) break;
    // Zoom on +-4 cells around the incumbent; convexity keeps the minimizer there.
    for (std::size_t k = 0; k < m; ++k) {
      lo[k] = std::max(0.0, best[k] - 4.0 * h);
      hi[k] = std::min(upper, best[k] + 4.0 * h);
    }
    h /= 8.0;
  }
  auto e = problem.evaluate(best, false);
  return {best, e.value, e.gradient, std::move(e.policy), evals};
}

PrimalSolution brute_force_primal(const DualProblem& problem, std::size_t restarts,
                                  std::uint64_t seed) {
  const Policy& pi0 = problem.reference();
  const std::size_t rows = pi0.num_prompts();
  const std::size_t cols = pi0.num_actions();
  const auto n = static_cast<Eigen::Index>(rows * cols);
  const auto& spec = problem.spec();
  const auto dist = problem.prompt_dist();
  const auto& rw = problem.rewards();

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < spec.num_constraints(); ++k) {
    if (std::isfinite(spec.j_min[k])) active.push_back(k);
  }
  const auto kc = static_cast<Eigen::Index>(active.size());

  // Weighted reward rows c_k(i) = d0(x) r_k(x, a).
  Eigen::MatrixXd c(kc, n);
  Eigen::VectorXd jk(kc);
  for (Eigen::Index j = 0; j < kc; ++j) {
    const auto k = active[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < n; ++i) {
      c(j, i) = dist[static_cast<std::size_t>(i) / cols] * rw.constraints[k][static_cast<std::size_t>(i)];
    }
    jk[j] = spec.j_min[k];
  }
  // Directions e_(x,a) - e_(x,last) keep every row sum fixed.
  const auto free_dims = static_cast<Eigen::Index>(rows * (cols - 1));
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(n, free_dims);
  for (std::size_t x = 0; x < rows; ++x) {
    for (std::size_t a = 0; a + 1 < cols; ++a) {
      const auto col = static_cast<Eigen::Index>(x * (cols - 1) + a);
      basis(static_cast<Eigen::Index>(x * cols + a), col) = 1.0;
      basis(static_cast<Eigen::Index>(x * cols + cols - 1), col) = -1.0;
    }
  }

  // Phase I: maximize t subject to c_k p - t > J_k and p > 0.
  BarrierProblem phase1;
  phase1.basis = Eigen::MatrixXd::Zero(n + 1, free_dims + 1);
  phase1.basis.topLeftCorner(n, free_dims) = basis;
  phase1.basis(n, free_dims) = 1.0;
  phase1.ineq = Eigen::MatrixXd::Zero(n + kc, n + 1);
  phase1.ineq.topLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  phase1.ineq.bottomLeftCorner(kc, n) = c;
  phase1.ineq.bottomRightCorner(kc, 1) = -Eigen::VectorXd::Ones(kc);
  phase1.ineq_rhs = Eigen::VectorXd::Zero(n + kc);
  phase1.ineq_rhs.tail(kc) = jk;
  phase1.f = [n](const Eigen::VectorXd& z) { return z[n]; };
  phase1.grad = [n](const Eigen::VectorXd& z) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
    g[n] = 1.0;
    return g;
  };
  phase1.hess_diag = [](const Eigen::VectorXd& z) { return Eigen::VectorXd::Zero(z.size()); };

  Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(cols));
  std::size_t newton = 0;
  double margin = std::numeric_limits<double>::infinity();
  if (kc > 0) {
    Eigen::VectorXd z(n + 1);
    z.head(n) = p;
    z[n] = (c * p - jk).minCoeff() - 1.0;
    newton += barrier_solve(phase1, z, 1e-2, 1e-10);
    p = z.head(n);
    margin = (c * p - jk).minCoeff();
    require(margin > 1e-12, ErrorKind::infeasible,
            "no policy satisfies every constraint strictly (best margin " + num(margin) + ")");
  }

  // Phase II: maximize J(p) = sum d0 [p r - eta pi0 f(p / pi0)].
  const Divergence div = spec.divergence;
  const double eta = spec.eta;
  Eigen::VectorXd w(n);
  Eigen::VectorXd r1(n);
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = dist[static_cast<std::size_t>(i) / cols];
    r1[i] = rw.target[static_cast<std::size_t>(i)];
    q[i] = pi0.probs()[static_cast<std::size_t>(i)];
  }
  BarrierProblem phase2;
  phase2.basis = basis;
  phase2.ineq = Eigen::MatrixXd::Zero(n + kc, n);
  phase2.ineq.topRows(n) = Eigen::MatrixXd::Identity(n, n);
  phase2.ineq.bottomRows(kc) = c;
  phase2.ineq_rhs = Eigen::VectorXd::Zero(n + kc);
  phase2.ineq_rhs.tail(kc) = jk;
  phase2.f = [&](const Eigen::VectorXd& z) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) v += w[i] * (z[i] * r1[i] - eta * q[i] * div.f(z[i] / q[i]));
    return v;
  };
  phase2.grad = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = w[i] * (r1[i] - eta * div.f_prime(z[i] / q[i]));
    return g;
  };
  phase2.hess_diag = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd h(n);
    for (Eigen::Index i = 0; i < n; ++i) h[i] = -w[i] * eta * divergence_second(div, z[i] / q[i]) / q[i];
    return h;
  };

  const CounterRng rng(seed, Stream::restarts);
  std::optional<PrimalSolution> best;
  const std::size_t runs = std::max<std::size_t>(1, restarts);
  for (std::size_t run = 0; run < runs; ++run) {
    Eigen::VectorXd z = p;
    if (run > 0) {
      Eigen::VectorXd rnd(n);
      for (std::size_t x = 0; x < rows; ++x) {
        double total = 0.0;
        for (std::size_t a = 0; a < cols; ++a) {
          const auto i = static_cast<Eigen::Index>(x * cols + a);
          rnd[i] = 0.05 + rng.uniform(run * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(i));
          total += rnd[i];
        }
        for (std::size_t a = 0; a < cols; ++a) rnd[static_cast<Eigen::Index>(x * cols + a)] /= total;
      }
      double theta = 0.5;
      while (theta > 1e-12) {
        z = (1.0 - theta) * p + theta * rnd;
        if (kc == 0 || (c * z - jk).minCoeff() > 0.0) break;
        theta *= 0.5;
      }
    }
    // The barrier gap is (n + k) mu. Below mu ~ 1e-11 the active slacks drop
    // to the rounding level of c_k p - J_k and Newton starts to drift.
    newton += barrier_solve(phase2, z, 1e-2, 1e-11);
    std::vector<double> probs(z.data(), z.data() + n);
    // Clean rounding so each row is an exact simplex point.
    for (std::size_t x = 0; x < rows; ++x) {
      double total = 0.0;
      for (std::size_t a = 0; a < cols; ++a) {
        probs[x * cols + a] = std::max(0.0, probs[x * cols + a]);
        total += probs[x * cols + a];
      }
      for (std::size_t a = 0; a < cols; ++a) probs[x * cols + a] /= total;
    }
    Policy pol(rows, cols, std::move(probs));
    const double obj = problem.objective(pol);
    if (!best || obj > best->objective) {
      std::vector<double> cr;
      for (std::size_t k = 0; k < spec.num_constraints(); ++k) cr.push_back(problem.constraint_reward(pol, k));
      best = PrimalSolution{std::move(pol), obj, std::move(cr), run + 1, 0};
    }
  }
  best->restarts = runs;
  best->newton_steps = newton;
  return std::move(*best);
}

// ---- Sweep ----------------------------------------------------------------

void SweepConfig::validate() const {
  base.validate();
  require(!w_values.empty() && !seeds.empty() && !sizes.empty(), ErrorKind::validation,
          "sweep grid is empty");
  for (double w : w_values) require(w >= 0.0 && w <= 1.0, ErrorKind::validation, "w must lie in [0, 1]");
  for (std::size_t n : sizes) {
    require(n >= 1 && n <= base.n_max, ErrorKind::validation, "sweep sizes must lie in [1, N_max]");
  }
  require(eta > 0.0 && iterations >= 1 && lambda_reg > 0.0, ErrorKind::validation,
          "eta, T and lambda_reg must be positive");
}

namespace {

std::vector<SweepCell> run_group(const SweepConfig& config, double w, std::uint64_t seed) {
  SyntheticConfig sc = config.base;
  sc.w = w;
  sc.seed = seed;
  const SyntheticInstance inst = generate_instance(sc);
  const std::size_t m = sc.num_constraints;

  ProblemSpec spec{config.eta, std::vector<double>(m), Divergence::kl()};
  for (std::size_t k = 0; k < m; ++k) {
    spec.j_min[k] = calibrate_jmin(inst, config.eta, sc.frac, sc.lambda_hi, k, config.calibration,
                                   sc.calibration_samples, seed)
                        .j_min;
  }
  const DualProblem truth = true_problem(inst, spec);
  const OracleSolution star =
      m == 1 ? oracle_lambda_star(truth) : grid_oracle(truth, 4.0 * sc.lambda_hi, 1e-3);
  const PreferenceDataset full = sample_dataset(inst, sc.n_max, seed);
  const auto pop = eigen_range(population_difference_covariance(inst.table, inst.pi0));

  std::vector<SweepCell> cells;
  for (std::size_t n : config.sizes) {
    const PreferenceDataset data = full.prefix(n);
    const DifferenceMatrix deltas = build_differences(data, inst.table);
    const CovarianceBundle cov = covariance_bundle(deltas, config.lambda_reg);
    MleOptions opts;
    opts.lambda_reg = config.lambda_reg;
    std::vector<std::vector<double>> hats;
    for (std::size_t k = 0; k <= m; ++k) hats.push_back(fit_mle(deltas, data.labels_for(k), opts).theta_hat);

    CertificateConfig cc = config.certificates;
    cc.lambda_reg = config.lambda_reg;
    cc.iterations = config.iterations;
    cc.radius = config.radius;
    CertificateInputs ci{&inst.table, &inst.pi0, spec, hats, &cov, n, pop};
    const CertificateReport rep = certify(ci, cc, config.fallback_radius);

    const std::vector<std::vector<double>> constraint_hats(hats.begin() + 1, hats.end());
    const DualProblem est = DualProblem::from_thetas(spec, inst.pi0, inst.table, hats[0], constraint_hats);
    SolverConfig solver;
    solver.radius = rep.radius;
    solver.mode = config.step;
    solver.iterations = config.iterations;
    const SolverTrace trace = solve_dual(est, solver);
    const SolutionMetrics met = evaluate_solution(trace, truth, star.lambda);

    SweepCell cell;
    cell.w = w;
    cell.seed = seed;
    cell.n = n;
    cell.j_min = spec.j_min[0];
    cell.lambda_star = star.lambda[0];
    cell.lambda_bar = trace.lambda_bar[0];
    cell.suboptimality = met.primal_gap;
    cell.violation = *std::max_element(met.violation.begin(), met.violation.end());
    cell.dual_gap = met.dual_gap;
    cell.deployed_suboptimality = met.deployed_primal_gap;
    cell.deployed_violation =
        *std::max_element(met.deployed_violation.begin(), met.deployed_violation.end());
    cell.beta_n = rep.beta_n;
    cell.event_holds = true;
    for (std::size_t k = 0; k <= m; ++k) {
      std::vector<double> diff(hats[k].size());
      for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = hats[k][j] - inst.thetas[k][j];
      const double e2 = std::sqrt(std::inner_product(diff.begin(), diff.end(), diff.begin(), 0.0));
      if (k == 0) {
        cell.theta_error_target = e2;
      } else {
        cell.theta_error_constraint = std::max(cell.theta_error_constraint, e2);
      }
      if (cov.norm(diff) > rep.beta_n) cell.event_holds = false;
    }
    cell.radius = rep.radius;
    cell.radius_fallback = rep.radius_fallback;
    cell.bound_b = rep.bound_b;
    cell.bounds = rep.bounds;
    cell.delta = rep.delta;
    cell.budget = rep.budget;
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace

SweepReport run_sweep(const SweepConfig& config) {
  config.validate();
  struct Job {
    double w;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double w : config.w_values) {
    for (std::uint64_t s : config.seeds) jobs.push_back({w, s});
  }
  std::vector<std::vector<SweepCell>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_group(config, jobs[i].w, jobs[i].seed);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    require(errors[i].empty(), ErrorKind::numerical,
            "sweep cell w=" + num(jobs[i].w) + " seed=" + std::to_string(jobs[i].seed) +
                " failed: " + errors[i]);
  }
  SweepReport report;
  for (auto& r : results) {
    for (auto& c : r) report.cells.push_back(std::move(c));
  }
  return report;
}

std::vector<SweepSummaryRow> SweepReport::summary() const {
  std::vector<SweepSummaryRow> rows;
  std::vector<std::pair<double, std::size_t>> keys;
  for (const auto& c : cells) {
    const std::pair<double, std::size_t> key{c.w, c.n};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [w, n] : keys) {
    std::vector<double> sub;
    std::vector<double> vio;
    std::vector<double> err;
    for (const auto& c : cells) {
      if (c.w != w || c.n != n) continue;
      sub.push_back(c.suboptimality);
      vio.push_back(c.violation);
      err.push_back(c.theta_error_target);
      err.push_back(c.theta_error_constraint);
    }
    auto mean_se = [](const std::vector<double>& v) {
      const double k = static_cast<double>(v.size());
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / k;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double se = v.size() > 1 ? std::sqrt(ss / (k - 1.0)) / std::sqrt(k) : 0.0;
      return std::pair{mean, se};
    };
    const auto [ms, ss] = mean_se(sub);
    const auto [mv, sv] = mean_se(vio);
    rows.push_back({w, n, ms, ss, mv, sv, median(err)});
  }
  return rows;
}

std::string SweepReport::to_csv() const {
  std::ostringstream os;
  os << "w,seed,N,j_min,lambda_star,lambda_bar,suboptimality,violation,dual_gap,"
        "deployed_suboptimality,deployed_violation,theta_error_target,theta_error_constraint,"
        "beta_n,event_holds,radius,radius_fallback,bound_b,bound_dual_gap,bound_violation,"
        "bound_primal_gap,delta,budget\n";
  for (const auto& c : cells) {
    os << num(c.w) << ',' << c.seed << ',' << c.n << ',' << num(c.j_min) << ','
       << num(c.lambda_star) << ',' << num(c.lambda_bar) << ',' << num(c.suboptimality) << ','
       << num(c.violation) << ',' << num(c.dual_gap) << ',' << num(c.deployed_suboptimality)
       << ',' << num(c.deployed_violation) << ',' << num(c.theta_error_target) << ','
       << num(c.theta_error_constraint) << ',' << num(c.beta_n) << ',' << (c.event_holds ? 1 : 0)
       << ',' << num(c.radius) << ',' << (c.radius_fallback ? 1 : 0) << ',' << num(c.bound_b)
       << ',' << num(c.bounds.dual_gap) << ',' << num(c.bounds.violation) << ','
       << num(c.bounds.primal_gap) << ',' << num(c.delta) << ',' << c.budget << '\n';
  }
  return os.str();
}

std::string SweepReport::to_long_csv() const {
  std::ostringstream os;
  os << "w,seed,N,metric,value\n";
  for (const auto& c : cells) {
    const std::pair<const char*, double> metrics[] = {
        {"suboptimality", c.suboptimality},
        {"violation", c.violation},
        {"dual_gap", c.dual_gap},
        {"deployed_suboptimality", c.deployed_suboptimality},
        {"deployed_violation", c.deployed_violation},
        {"lambda_bar", c.lambda_bar},
        {"theta_error_target", c.theta_error_target},
        {"theta_error_constraint", c.theta_error_constraint},
    };
    for (const auto& [name, v] : metrics) {
      os << num(c.w) << ',' << c.seed << ',' << c.n << ',' << name << ',' << num(v) << '\n';
    }
  }
  return os.str();
}

std::string SweepReport::summary_csv() const {
  std::ostringstream os;
  os << "w,N,mean_suboptimality,se_suboptimality,mean_violation,se_violation,median_theta_error\n";
  for (const auto& r : summary()) {
    os << num(r.w) << ',' << r.n << ',' << num(r.mean_suboptimality) << ','
       << num(r.se_suboptimality) << ',' << num(r.mean_violation) << ',' << num(r.se_violation)
       << ',' << num(r.median_theta_error) << '\n';
  }
  return os.str();
}

}  // namespace crlhf
