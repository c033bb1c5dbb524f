#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "crlhf/core.hpp"
#include "crlhf/error.hpp"
#include "crlhf/kernels.hpp"
#include "helpers.hpp"

using namespace crlhf;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("feature table validates shape and norms") {
  CHECK(kind_of([] { FeatureTable(2, 2, 2, std::vector<double>(7, 0.1)); }) == ErrorKind::shape);
  CHECK(kind_of([] { FeatureTable(1, 2, 2, {1.0, 0.1, 0.0, 0.0}); }) == ErrorKind::validation);
  CHECK(kind_of([] { FeatureTable(1, 2, 1, {0.5, 0.5}, {0.3}); }) == ErrorKind::validation);
  FeatureTable t(2, 2, 2, {1.0, 0.0, 0.0, 1.0, 0.6, 0.8, -1.0, 0.0});
  CHECK(t.num_entries() == 4);
  CHECK(t.prompt_dist()[0] == 0.5);
  CHECK(t.feature(1, 0)[1] == 0.8);
  const std::vector<double> th{2.0, -1.0};
  const auto r = t.rewards(th);
  const double want[] = {2.0, -1.0, 0.4, -2.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == doctest::Approx(want[i]).epsilon(1e-15));
}

TEST_CASE("policy validates the simplex and support") {
  CHECK(kind_of([] { Policy(1, 2, {0.5, 0.49}); }) == ErrorKind::validation);
  CHECK(kind_of([] { Policy(1, 2, {1.5, -0.5}); }) == ErrorKind::validation);
  CHECK(kind_of([] { Policy(1, 2, {0.5}); }) == ErrorKind::shape);
  Policy p(2, 2, {1.0, 0.0, 0.25, 0.75});
  CHECK_FALSE(p.has_full_support());
  CHECK(kind_of([&] { p.require_full_support(); }) == ErrorKind::support);
  const auto u = Policy::uniform(3, 4);
  CHECK(u(2, 3) == 0.25);
  CHECK(u.has_full_support());
}

TEST_CASE("preference dataset prefix and bounds checks") {
  std::vector<Comparison> rec{{0, 0, 1}, {1, 1, 0}, {0, 1, 1}};
  std::vector<std::uint8_t> lab{1, 0, 0, 1, 1, 1};
  CHECK(kind_of([&] { PreferenceDataset(1, rec, {1, 0, 1}); }) == ErrorKind::validation);
  PreferenceDataset d(2, rec, lab);
  CHECK(d.label(1, 1) == 1);
  CHECK(d.labels_for(0) == std::vector<std::uint8_t>{1, 0, 1});
  const auto p = d.prefix(2);
  CHECK(p.size() == 2);
  CHECK(p.records()[1] == rec[1]);
  CHECK(p.label(1, 0) == 0);
  FeatureTable small(1, 2, 1, {1.0, -1.0});
  CHECK(kind_of([&] { d.check_against(small); }) == ErrorKind::validation);
}

TEST_CASE("divergence generators and their inverse links") {
  const Divergence divs[] = {Divergence::kl(), Divergence::chi_square(), Divergence::alpha(0.5),
                             Divergence::alpha(2.0), Divergence::alpha(3.0)};
  for (const auto& d : divs) {
    CAPTURE(d.name());
    CHECK(d.f(1.0) == doctest::Approx(0.0).epsilon(1e-15));
    // t log t has slope 1 at t = 1; the other generators are centered.
    const double slope_at_one = d.kind() == Divergence::Kind::kl ? 1.0 : 0.0;
    CHECK(std::abs(d.f_prime(1.0) - slope_at_one) <= 1e-15);
    for (double t : {0.1, 0.5, 2.0, 4.0}) {
      const double u = d.f_prime(t);
      CHECK(d.ratio_from_slope(u) == doctest::Approx(t).epsilon(1e-12));
      // Derivative by central differences.
      const double h = 1e-6;
      CHECK(d.f_prime(t) == doctest::Approx((d.f(t + h) - d.f(t - h)) / (2 * h)).epsilon(1e-7));
    }
  }
  CHECK(Divergence::chi_square().ratio_from_slope(-5.0) == 0.0);
  CHECK(Divergence::kl().slope_at_zero() == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(Divergence::alpha(1.0), Error);
  // alpha = 2 generator is half the chi-square generator.
  for (double t : {0.0, 0.3, 1.7}) {
    CHECK(Divergence::alpha(2.0).f(t) == doctest::Approx(0.5 * Divergence::chi_square().f(t)));
  }
}

TEST_CASE("expectations and divergences match direct sums") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t x = 1 + rep % 5;
    const std::size_t a = 2 + rep % 7;
    const std::size_t d = 3;
    FeatureTable t(x, a, d, testing_ref::random_unit_features(rng, x, a, d));
    const auto th = testing_ref::random_unit_vector(rng, d);
    const auto pi = testing_ref::random_policy(rng, x, a);
    const auto pi0 = testing_ref::random_policy(rng, x, a);
    const auto r = testing_ref::rewards(t, th);
    std::vector<long double> p(pi.probs().begin(), pi.probs().end());
    const std::vector<double> d0(t.prompt_dist().begin(), t.prompt_dist().end());
    CHECK(expected_reward(pi, r, t.prompt_dist()) ==
          doctest::Approx(static_cast<double>(testing_ref::expected(p, r, d0, a))).epsilon(1e-13));
    CHECK(expected_reward(pi, RewardModel(th), t) ==
          doctest::Approx(static_cast<double>(testing_ref::expected(p, r, d0, a))).epsilon(1e-13));
    CHECK(kl_divergence(pi, pi0, t.prompt_dist()) ==
          doctest::Approx(static_cast<double>(testing_ref::kl(p, pi0, d0))).epsilon(1e-12));
    CHECK(divergence_value(pi, pi0, t.prompt_dist(), Divergence::kl()) ==
          doctest::Approx(kl_divergence(pi, pi0, t.prompt_dist())).epsilon(1e-12));
    // Chi-square by its definition sum pi0 (pi/pi0 - 1)^2.
    long double chi = 0;
    for (std::size_t i = 0; i < x * a; ++i) {
      const long double ratio = static_cast<long double>(pi.probs()[i]) / pi0.probs()[i];
      chi += d0[i / a] * pi0.probs()[i] * (ratio - 1) * (ratio - 1);
    }
    CHECK(divergence_value(pi, pi0, t.prompt_dist(), Divergence::chi_square()) ==
          doctest::Approx(static_cast<double>(chi)).epsilon(1e-12));
  }
}

TEST_CASE("KL needs support of pi0 wherever pi has mass") {
  Policy pi(1, 2, {0.5, 0.5});
  Policy pi0(1, 2, {1.0, 0.0});
  const std::vector<double> d0{1.0};
  CHECK(kind_of([&] { kl_divergence(pi, pi0, d0); }) == ErrorKind::support);
  CHECK(kl_divergence(pi0, pi, d0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("primal objective and constraint value") {
  FeatureTable t(1, 2, 1, {1.0, -1.0});
  const Policy pi0 = Policy::uniform(1, 2);
  const Policy pi(1, 2, {0.75, 0.25});
  ProblemSpec spec{0.5, {0.1}, Divergence::kl()};
  const RewardModel target(std::vector<double>{1.0});
  const double kl = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(primal_objective(pi, spec, target, t, pi0) == doctest::Approx(0.5 - 0.5 * kl).epsilon(1e-15));
  CHECK(constraint_value(pi, spec, 0, target, t) == doctest::Approx(0.1 - 0.5));
  CHECK(total_variation(pi, pi0) == doctest::Approx(0.25));
}

TEST_CASE("problem spec validation") {
  CHECK_THROWS_AS((ProblemSpec{0.0, {0.1}, Divergence::kl()}.validate()), Error);
  CHECK_THROWS_AS((ProblemSpec{1.0, {}, Divergence::kl()}.validate()), Error);
  CHECK_THROWS_AS((ProblemSpec{1.0, {std::nan("")}, Divergence::kl()}.validate()), Error);
  CHECK_NOTHROW((ProblemSpec{1.0, {-std::numeric_limits<double>::infinity()}, Divergence::kl()}.validate()));
}

TEST_CASE("active kernel set is reported") {
  MESSAGE("active kernels: " << kernels::active().name);
  CHECK(!kernels::active().name.empty());
}
