#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "crlhf/dual.hpp"
#include "crlhf/error.hpp"
#include "helpers.hpp"

using namespace crlhf;

namespace {

struct Instance {
  FeatureTable table;
  Policy pi0;
  std::vector<double> target;
  std::vector<std::vector<double>> cons;
};

Instance make(std::mt19937_64& rng, std::size_t x, std::size_t a, std::size_t d, std::size_t m) {
  FeatureTable t(x, a, d, testing_ref::random_unit_features(rng, x, a, d));
  Policy pi0 = testing_ref::random_policy(rng, x, a);
  auto target = testing_ref::random_unit_vector(rng, d);
  std::vector<std::vector<double>> cons;
  for (std::size_t k = 0; k < m; ++k) cons.push_back(testing_ref::random_unit_vector(rng, d));
  return {std::move(t), std::move(pi0), std::move(target), std::move(cons)};
}

DualProblem problem(const Instance& in, double eta, std::vector<double> jmin,
                    Divergence div = Divergence::kl()) {
  return DualProblem::from_thetas({eta, std::move(jmin), div}, in.pi0, in.table, in.target, in.cons);
}

}  // namespace

TEST_CASE("dual value equals the log-partition formula and the Lagrangian at the tilt") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + rep % 2;
    const Instance in = make(rng, 3, 4, 3, m);
    const double eta = 0.05 + 0.05 * rep;
    const std::vector<double> jmin(m, 0.1);
    const DualProblem p = problem(in, eta, jmin);
    std::vector<double> lam(m);
    for (std::size_t k = 0; k < m; ++k) lam[k] = 0.3 * (rep + 1) * (k + 1);
    const auto ev = p.evaluate(lam);
    const std::vector<double> d0(in.table.prompt_dist().begin(), in.table.prompt_dist().end());
    std::vector<std::vector<double>> rc;
    for (const auto& c : in.cons) rc.push_back(testing_ref::rewards(in.table, c));
    const auto rt = testing_ref::rewards(in.table, in.target);
    const long double ref = testing_ref::dual_value(in.pi0, d0, rt, rc, lam, jmin, eta);
    CHECK(ev.value == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
    // Same value through the primal: J(pi_lambda) + sum lambda_k (E r_k - J_k).
    double lagr = p.objective(ev.policy);
    for (std::size_t k = 0; k < m; ++k) lagr += lam[k] * (p.constraint_reward(ev.policy, k) - jmin[k]);
    CHECK(ev.value == doctest::Approx(lagr).epsilon(1e-11));
    CHECK(p.value(lam) == ev.value);
  }
}

TEST_CASE("gradient matches central differences for KL and chi-square") {
  std::mt19937_64 rng(32);
  for (const auto& div : {Divergence::kl(), Divergence::chi_square(), Divergence::alpha(3.0)}) {
    CAPTURE(div.name());
    for (int rep = 0; rep < 10; ++rep) {
      const Instance in = make(rng, 3, 3, 2, 2);
      const DualProblem p = problem(in, 0.3, {0.05, -0.1}, div);
      const std::vector<double> lam{0.4 + 0.1 * rep, 0.7};
      const auto ev = p.evaluate(lam, false);
      const double h = 1e-6;
      for (std::size_t k = 0; k < 2; ++k) {
        auto up = lam;
        auto dn = lam;
        up[k] += h;
        dn[k] -= h;
        const double fd = (p.value(up) - p.value(dn)) / (2 * h);
        CHECK(ev.gradient[k] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("curvature equals the covariance formula and differences of the gradient") {
  std::mt19937_64 rng(33);
  const Instance in = make(rng, 4, 5, 3, 2);
  const double eta = 0.2;
  const DualProblem p = problem(in, eta, {0.0, 0.0});
  const std::vector<double> lam{0.8, 0.3};
  const auto ev = p.evaluate(lam, true);
  REQUIRE(ev.curvature.size() == 4);
  // (1/eta) sum_x d0 Cov(r_j, r_k) under the long-double Gibbs policy.
  std::vector<std::vector<double>> rc;
  for (const auto& c : in.cons) rc.push_back(testing_ref::rewards(in.table, c));
  std::vector<double> comb = testing_ref::rewards(in.table, in.target);
  for (std::size_t i = 0; i < comb.size(); ++i) comb[i] += lam[0] * rc[0][i] + lam[1] * rc[1][i];
  const auto pol = testing_ref::gibbs(in.pi0, comb, eta);
  const std::size_t cols = 5;
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 2; ++k) {
      long double total = 0;
      for (std::size_t x = 0; x < 4; ++x) {
        long double mj = 0, mk = 0, mjk = 0;
        for (std::size_t a = 0; a < cols; ++a) {
          const auto i = x * cols + a;
          mj += pol[i] * rc[j][i];
          mk += pol[i] * rc[k][i];
          mjk += pol[i] * rc[j][i] * rc[k][i];
        }
        total += in.table.prompt_dist()[x] * (mjk - mj * mk);
      }
      CHECK(ev.curvature[j * 2 + k] == doctest::Approx(static_cast<double>(total / eta)).epsilon(1e-10));
      auto up = lam;
      auto dn = lam;
      const double h = 1e-5;
      up[k] += h;
      dn[k] -= h;
      const double fd = (p.evaluate(up, false).gradient[j] - p.evaluate(dn, false).gradient[j]) / (2 * h);
      CHECK(ev.curvature[j * 2 + k] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("g' is monotone and B^2/eta Lipschitz on sampled pairs") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int rep = 0; rep < 5; ++rep) {
    const Instance in = make(rng, 5, 4, 3, 1);
    const double eta = 0.1;
    const DualProblem p = problem(in, eta, {0.2});
    const double lip = lipschitz_constant(p.constraint_reward_bound(), eta);
    for (int k = 0; k < 200; ++k) {
      const double a = u(rng);
      const double b = u(rng);
      if (a == b) continue;
      const double ga = p.evaluate(std::span<const double>(&a, 1), false).gradient[0];
      const double gb = p.evaluate(std::span<const double>(&b, 1), false).gradient[0];
      CHECK(std::abs(ga - gb) / std::abs(a - b) <= lip + 1e-9);
      CHECK((ga - gb) * (a - b) >= -1e-15);
    }
  }
  CHECK(lipschitz_constant(2.0, 0.5) == 8.0);
}

TEST_CASE("dual is convex along segments") {
  std::mt19937_64 rng(35);
  const Instance in = make(rng, 3, 4, 3, 2);
  const DualProblem p = problem(in, 0.15, {0.1, 0.1});
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int k = 0; k < 100; ++k) {
    const std::vector<double> a{u(rng), u(rng)};
    const std::vector<double> b{u(rng), u(rng)};
    const std::vector<double> mid{0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])};
    CHECK(p.value(mid) <= 0.5 * (p.value(a) + p.value(b)) + 1e-12);
  }
}

TEST_CASE("weak duality holds for arbitrary feasible policies") {
  std::mt19937_64 rng(36);
  const Instance in = make(rng, 2, 3, 2, 1);
  const DualProblem p = problem(in, 0.2, {-0.5});
  for (int k = 0; k < 200; ++k) {
    const Policy pi = testing_ref::random_policy(rng, 2, 3, 0.01);
    if (p.constraint_reward(pi, 0) < -0.5) continue;
    for (double l : {0.0, 0.5, 3.0}) CHECK(p.value(std::span<const double>(&l, 1)) >= p.objective(pi) - 1e-12);
  }
}

TEST_CASE("strong convexity modulus on the grid") {
  std::mt19937_64 rng(37);
  const Instance in = make(rng, 4, 4, 3, 1);
  const DualProblem p = problem(in, 0.2, {0.0});
  const auto res = strong_convexity_modulus(p, 4.0, 17);
  CHECK(res.evaluations == 17);
  CHECK_FALSE(res.degenerate);
  double lowest = INFINITY;
  for (int i = 0; i < 17; ++i) {
    const double l = 4.0 * i / 16.0;
    lowest = std::min(lowest, p.evaluate(std::span<const double>(&l, 1)).curvature[0]);
  }
  CHECK(res.modulus == doctest::Approx(lowest).epsilon(1e-12));

  // Two identical constraint oracles give a singular curvature matrix.
  Instance twin = make(rng, 3, 3, 2, 1);
  twin.cons.push_back(twin.cons[0]);
  const DualProblem q = problem(twin, 0.3, {0.0, 0.0});
  const auto deg = strong_convexity_modulus(q, 2.0, 5);
  CHECK(deg.degenerate);
  CHECK(deg.modulus == 0.0);
  CHECK_THROWS_AS(strong_convexity_modulus(problem(in, 0.2, {0.0}, Divergence::chi_square()), 1.0), Error);
}

TEST_CASE("input validation") {
  std::mt19937_64 rng(38);
  const Instance in = make(rng, 2, 2, 2, 1);
  const DualProblem p = problem(in, 0.2, {0.0});
  const std::vector<double> bad{-1.0};
  CHECK_THROWS_AS(p.evaluate(bad), Error);
  const std::vector<double> two{1.0, 1.0};
  CHECK_THROWS_AS(p.evaluate(two), Error);
  const Policy gap(2, 2, {1.0, 0.0, 0.5, 0.5});
  CHECK_THROWS_AS(DualProblem::from_thetas({0.2, {0.0}, Divergence::kl()}, gap, in.table, in.target, in.cons),
                  Error);
  const auto ev = eval_dual({0.2, {0.0}, Divergence::kl()}, in.pi0, in.table, in.target, in.cons,
                            std::vector<double>{0.5});
  CHECK(ev.value == doctest::Approx(p.value(std::vector<double>{0.5})).epsilon(1e-15));
}
