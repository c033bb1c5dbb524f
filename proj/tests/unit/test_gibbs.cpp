#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crlhf/error.hpp"
#include "crlhf/gibbs.hpp"
#include "helpers.hpp"

using namespace crlhf;

namespace {

// Chi-square maximizer by sorting: the support is a top-k set of rewards and
// tau solves the linear mass equation on it.
std::vector<double> chi_square_water_fill(std::span<const double> p0, std::span<const double> r,
                                          double eta) {
  const std::size_t n = r.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return r[i] > r[j]; });
  for (std::size_t k = 1; k <= n; ++k) {
    long double mass = 0;
    long double weighted = 0;
    for (std::size_t i = 0; i < k; ++i) {
      mass += p0[order[i]];
      weighted += p0[order[i]] * (1.0L + r[order[i]] / (2.0L * eta));
    }
    const long double tau = (weighted - 1.0L) * 2.0L * eta / mass;
    const bool inside = 1.0L + (r[order[k - 1]] - tau) / (2.0L * eta) > 0;
    const bool outside = k == n || 1.0L + (r[order[k]] - tau) / (2.0L * eta) <= 0;
    if (inside && outside) {
      std::vector<double> out(n);
      for (std::size_t a = 0; a < n; ++a) {
        out[a] = static_cast<double>(p0[a] * std::max(0.0L, 1.0L + (r[a] - tau) / (2.0L * eta)));
      }
      return out;
    }
  }
  return {};
}

}  // namespace

TEST_CASE("Gibbs policy matches the direct exponential tilt") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t x = 1 + rep % 4;
    const std::size_t a = 2 + rep % 9;
    const std::size_t d = 3;
    FeatureTable t(x, a, d, testing_ref::random_unit_features(rng, x, a, d));
    const auto th = testing_ref::random_unit_vector(rng, d);
    const auto pi0 = testing_ref::random_policy(rng, x, a);
    const double eta = 0.02 + 0.1 * rep;
    const Policy p = gibbs_policy(pi0, t, th, eta);
    const auto ref = testing_ref::gibbs(pi0, testing_ref::rewards(t, th), eta);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(p.probs()[i] - ref[i]) <= 1e-13 * ref[i] + 1e-300);
    }
  }
}

TEST_CASE("constant reward rows return the reference row exactly") {
  const Policy pi0(2, 3, {0.2, 0.3, 0.5, 0.1, 0.1, 0.8});
  const std::vector<double> r{0.7, 0.7, 0.7, 1.0, -1.0, 0.0};
  const Policy p = gibbs_policy_from_rewards(pi0, r, 0.01);
  for (std::size_t a = 0; a < 3; ++a) CHECK(p(0, a) == pi0(0, a));
  CHECK(p(1, 0) > 0.999);
}

TEST_CASE("temperature limits") {
  const Policy pi0(1, 3, {0.2, 0.3, 0.5});
  const std::vector<double> r{1.0, 0.0, -1.0};
  const Policy hot = gibbs_policy_from_rewards(pi0, r, 1e8);
  for (std::size_t a = 0; a < 3; ++a) CHECK(hot(0, a) == doctest::Approx(pi0(0, a)).epsilon(1e-7));
  const Policy cold = gibbs_policy_from_rewards(pi0, r, 1e-4);
  CHECK(cold(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(gibbs_policy_from_rewards(pi0, r, 0.0), Error);
}

TEST_CASE("Gibbs tilt maximizes E[r] - eta KL against random competitors") {
  std::mt19937_64 rng(2);
  const Policy pi0 = testing_ref::random_policy(rng, 2, 5);
  std::normal_distribution<double> n01;
  std::vector<double> r(10);
  for (auto& v : r) v = n01(rng);
  const double eta = 0.3;
  const std::vector<double> d0{0.5, 0.5};
  const Policy best = gibbs_policy_from_rewards(pi0, r, eta);
  const double top = expected_reward(best, r, d0) - eta * kl_divergence(best, pi0, d0);
  for (int k = 0; k < 200; ++k) {
    const Policy other = testing_ref::random_policy(rng, 2, 5, 0.0);
    CHECK(expected_reward(other, r, d0) - eta * kl_divergence(other, pi0, d0) <= top + 1e-14);
  }
}

TEST_CASE("combined reward is linear in the multipliers") {
  const std::vector<double> t0{1.0, 0.0};
  const std::vector<std::vector<double>> cons{{0.0, 1.0}, {1.0, 1.0}};
  const std::vector<double> lam{2.0, 0.5};
  const auto c = combine(t0, cons, lam);
  CHECK(c.theta == std::vector<double>{1.5, 2.5});
  const std::vector<double> neg{-1.0, 0.0};
  CHECK_THROWS_AS(combine(t0, cons, neg), Error);
  const std::vector<double> short_lam{1.0};
  CHECK_THROWS_AS(combine(t0, cons, short_lam), Error);

  RewardTables tables{{1.0, 2.0}, {{0.5, 0.0}, {0.0, -1.0}}};
  const auto r = combine_rewards(tables, lam);
  CHECK(r == std::vector<double>{2.0, 1.5});
}

TEST_CASE("chi-square policy equals the water-filling solution") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t a = 2 + rep % 8;
    const Policy pi0 = testing_ref::random_policy(rng, 1, a);
    std::vector<double> r(a);
    for (auto& v : r) v = n01(rng);
    const double eta = 0.05 + 0.01 * (rep % 30);
    const auto out = f_divergence_policy_from_rewards(pi0, r, eta, Divergence::chi_square());
    const auto ref = chi_square_water_fill(pi0.row(0), r, eta);
    REQUIRE(ref.size() == a);
    for (std::size_t i = 0; i < a; ++i) CHECK(out.policy(0, i) == doctest::Approx(ref[i]).epsilon(1e-9));
  }
}

TEST_CASE("f-divergence policies satisfy the per-prompt KKT system") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  const Divergence divs[] = {Divergence::chi_square(), Divergence::alpha(0.5), Divergence::alpha(2.0),
                             Divergence::alpha(3.0)};
  for (const auto& div : divs) {
    CAPTURE(div.name());
    CAPTURE(div.alpha_value());
    const std::size_t rows = 50;
    const std::size_t cols = 6;
    const Policy pi0 = testing_ref::random_policy(rng, rows, cols);
    std::vector<double> r(rows * cols);
    for (auto& v : r) v = n01(rng);
    const double eta = 0.2;
    const auto out = f_divergence_policy_from_rewards(pi0, r, eta, div);
    for (std::size_t x = 0; x < rows; ++x) {
      double mass = 0;
      for (std::size_t a = 0; a < cols; ++a) {
        const double p = out.policy(x, a);
        mass += p;
        const double u = (r[x * cols + a] - out.thresholds[x]) / eta;
        if (p > 0) {
          CHECK(std::abs(div.f_prime(p / pi0(x, a)) - u) <= 1e-8 * std::max(1.0, std::abs(u)));
        } else {
          CHECK(u <= div.slope_at_zero() + 1e-8);
        }
      }
      CHECK(std::abs(mass - 1.0) <= 1e-10);
    }
  }
}

TEST_CASE("alpha = 2 at temperature 2 eta reproduces chi-square at eta") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01;
  const Policy pi0 = testing_ref::random_policy(rng, 20, 5);
  std::vector<double> r(100);
  for (auto& v : r) v = n01(rng);
  const auto a = f_divergence_policy_from_rewards(pi0, r, 0.4, Divergence::alpha(2.0));
  const auto c = f_divergence_policy_from_rewards(pi0, r, 0.2, Divergence::chi_square());
  for (std::size_t i = 0; i < 100; ++i) CHECK(std::abs(a.policy.probs()[i] - c.policy.probs()[i]) <= 1e-9);
}

TEST_CASE("regularized policy dispatch and domain checks") {
  const Policy pi0(1, 2, {0.5, 0.5});
  const std::vector<double> r{1.0, 0.0};
  const Policy kl = regularized_policy(pi0, r, 1.0, Divergence::kl());
  CHECK(kl(0, 0) == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-15));
  CHECK_THROWS_AS(f_divergence_policy_from_rewards(pi0, r, 1.0, Divergence::kl()), Error);
  const Policy gap(1, 2, {1.0, 0.0});
  CHECK_THROWS_AS(f_divergence_policy_from_rewards(gap, r, 1.0, Divergence::chi_square()), Error);
  // A large gap under chi-square puts all mass on the better action.
  const std::vector<double> wide{10.0, 0.0};
  const Policy sharp = regularized_policy(pi0, wide, 0.1, Divergence::chi_square());
  CHECK(sharp(0, 1) == 0.0);
  CHECK(sharp(0, 0) == 1.0);
}
