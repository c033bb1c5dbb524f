#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "crlhf/error.hpp"
#include "crlhf/kernels.hpp"

using namespace crlhf;

namespace {

std::vector<double> randn(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Tolerance relative to the magnitude of the summands, so cancellation in
// the exact result does not make the check meaningless.
void check_close(double got, long double ref, long double magnitude, double rel = 1e-14) {
  CHECK(std::abs(static_cast<long double>(got) - ref) <= rel * magnitude + 1e-300L);
}

}  // namespace

TEST_CASE("every available kernel set matches long-double references on all tail lengths") {
  std::mt19937_64 rng(7);
  for (const auto* ks : kernels::available()) {
    CAPTURE(ks->name);
    for (std::size_t n = 1; n <= 37; ++n) {
      CAPTURE(n);
      const auto a = randn(rng, n);
      const auto b = randn(rng, n);
      long double ref = 0;
      long double mag = 0;
      for (std::size_t i = 0; i < n; ++i) {
        ref += static_cast<long double>(a[i]) * b[i];
        mag += std::abs(static_cast<long double>(a[i]) * b[i]);
      }
      check_close(ks->dot(a.data(), b.data(), n), ref, mag);

      auto y = b;
      ks->axpy(0.37, a.data(), y.data(), n);
      for (std::size_t i = 0; i < n; ++i) {
        const long double r = b[i] + 0.37L * a[i];
        check_close(y[i], r, std::abs(b[i]) + std::abs(0.37L * a[i]), 1e-15);
      }

      const std::size_t dim = 1 + n % 9;
      const auto rows = randn(rng, n * dim);
      const auto v = randn(rng, dim);
      std::vector<double> out(n);
      ks->matvec(rows.data(), n, dim, v.data(), out.data());
      for (std::size_t i = 0; i < n; ++i) {
        long double r = 0;
        long double m = 0;
        for (std::size_t j = 0; j < dim; ++j) {
          r += static_cast<long double>(rows[i * dim + j]) * v[j];
          m += std::abs(static_cast<long double>(rows[i * dim + j]) * v[j]);
        }
        check_close(out[i], r, m);
      }

      const auto x = randn(rng, n, 30.0);
      std::vector<double> ex(n);
      const double shift = 5.0;
      const double sum = ks->exp_shifted(x.data(), shift, ex.data(), n);
      long double sref = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const long double e = x[i] - shift < -708.0 ? 0.0L : std::exp(static_cast<long double>(x[i]) - shift);
        check_close(ex[i], e, e, 1e-14);
        sref += e;
      }
      check_close(sum, sref, sref, 1e-14);

      const std::size_t r_count = 3;
      const auto logits = randn(rng, r_count * n, 10.0);
      std::vector<double> sm(r_count * n);
      ks->softmax_rows(logits.data(), r_count, n, sm.data());
      for (std::size_t r = 0; r < r_count; ++r) {
        long double mx = -INFINITY;
        for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, static_cast<long double>(logits[r * n + c]));
        long double z = 0;
        for (std::size_t c = 0; c < n; ++c) z += std::exp(logits[r * n + c] - mx);
        long double rowsum = 0;
        for (std::size_t c = 0; c < n; ++c) {
          const long double p = std::exp(logits[r * n + c] - mx) / z;
          check_close(sm[r * n + c], p, p, 1e-14);
          rowsum += sm[r * n + c];
        }
        CHECK(std::abs(rowsum - 1.0L) <= 1e-14L);
      }

      std::vector<double> rd(r_count);
      ks->row_dot(logits.data(), sm.data(), r_count, n, rd.data());
      for (std::size_t r = 0; r < r_count; ++r) {
        long double ref2 = 0;
        long double m2 = 0;
        for (std::size_t c = 0; c < n; ++c) {
          ref2 += static_cast<long double>(logits[r * n + c]) * sm[r * n + c];
          m2 += std::abs(static_cast<long double>(logits[r * n + c]) * sm[r * n + c]);
        }
        check_close(rd[r], ref2, m2);
      }
    }
  }
}

TEST_CASE("vectorized exp keeps relative error below 1e-14 over the full range") {
  for (const auto* ks : kernels::available()) {
    CAPTURE(ks->name);
    const std::size_t n = 20001;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = -708.0 + 1416.0 * static_cast<double>(i) / (n - 1);
    std::vector<double> out(n);
    ks->exp_shifted(x.data(), 0.0, out.data(), n);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double ref = std::exp(static_cast<long double>(x[i]));
      worst = std::max(worst, static_cast<double>(std::abs(out[i] - ref) / ref));
    }
    CHECK(worst <= 1e-14);
  }
}

TEST_CASE("exp flushes below the underflow threshold and handles -inf") {
  for (const auto* ks : kernels::available()) {
    const double x[5] = {-800.0, -709.0, -std::numeric_limits<double>::infinity(), 0.0, -1.0};
    double out[5];
    const double sum = ks->exp_shifted(x, 0.0, out, 5);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 0.0);
    CHECK(out[3] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sum == doctest::Approx(1.0 + std::exp(-1.0)).epsilon(1e-15));
  }
}

TEST_CASE("AVX2 and scalar kernels agree to 1e-14 relative") {
  const auto* v = kernels::avx2();
  if (v == nullptr) {
    MESSAGE("AVX2 kernels unavailable on this machine; equivalence check skipped");
    return;
  }
  const auto& s = kernels::scalar();
  std::mt19937_64 rng(11);
  for (std::size_t n = 1; n <= 37; ++n) {
    const auto a = randn(rng, n, 3.0);
    std::vector<double> o1(n);
    std::vector<double> o2(n);
    const double s1 = s.exp_shifted(a.data(), 1.0, o1.data(), n);
    const double s2 = v->exp_shifted(a.data(), 1.0, o2.data(), n);
    CHECK(std::abs(s1 - s2) <= 1e-14 * s1);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-14 * o1[i]);
    s.softmax_rows(a.data(), 1, n, o1.data());
    v->softmax_rows(a.data(), 1, n, o2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-14 * o1[i]);
  }
}

TEST_CASE("kernel selection") {
  CHECK(kernels::available().front()->name == "scalar");
  kernels::select("scalar");
  CHECK(kernels::active().name == "scalar");
  kernels::select("auto");
  CHECK_THROWS_AS(kernels::select("neon"), Error);
  if (kernels::avx2() != nullptr) {
    kernels::select("avx2");
    CHECK(kernels::active().name == "avx2");
  }
  kernels::select("auto");
}
