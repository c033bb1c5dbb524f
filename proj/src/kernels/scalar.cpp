#include "kernels_internal.hpp"

#include <algorithm>
#include <cmath>

namespace crlhf::kernels::detail {
namespace {

void matvec(const double* rows, std::size_t n, std::size_t dim, const double* v,
            double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = rows + i * dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double exp_shifted(const double* x, double shift, double* out, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = x[i] - shift;
    out[i] = z < kExpUnderflow ? 0.0 : std::exp(z);
    sum += out[i];
  }
  return sum;
}

void softmax_rows(const double* logits, std::size_t rows, std::size_t cols,
                  double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits + r * cols;
    double* dst = out + r * cols;
    const double peak = *std::max_element(in, in + cols);
    const double inv = 1.0 / exp_shifted(in, peak, dst, cols);
    for (std::size_t c = 0; c < cols; ++c) dst[c] *= inv;
  }
}

void row_dot(const double* a, const double* b, std::size_t rows,
             std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = dot(a + r * cols, b + r * cols, cols);
}

}  // namespace

const KernelSet kScalarKernels{
    "scalar", matvec, dot, axpy, exp_shifted, softmax_rows, row_dot,
};

}  // namespace crlhf::kernels::detail
