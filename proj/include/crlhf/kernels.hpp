#pragma once

// Data-parallel inner loops used by the reward, policy and dual code.
//
// Every kernel has a portable scalar reference implementation and, on x86-64
// builds with AVX2+FMA available, a vectorized variant. The variant is picked
// once at runtime from the CPU feature flags; CRLHF_KERNELS=scalar|avx2|auto
// overrides the choice. Both variants are deterministic, but they do not
// round identically (lane-wise reductions, fused multiply-add), so results
// are reproducible per kernel set, not across kernel sets.

#include <cstddef>
#include <string_view>
#include <vector>

namespace crlhf::kernels {

struct KernelSet {
  std::string_view name;

  // out[i] = sum_j rows[i * dim + j] * v[j]
  void (*matvec)(const double* rows, std::size_t n, std::size_t dim,
                 const double* v, double* out);

  double (*dot)(const double* a, const double* b, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // out[i] = exp(x[i] - shift); returns the sum of out.
  // Inputs below -708 relative to shift flush to zero.
  double (*exp_shifted)(const double* x, double shift, double* out,
                        std::size_t n);

  // Row-wise stable softmax of a rows x cols block.
  void (*softmax_rows)(const double* logits, std::size_t rows,
                       std::size_t cols, double* out);

  // out[r] = sum_c a[r, c] * b[r, c]
  void (*row_dot)(const double* a, const double* b, std::size_t rows,
                  std::size_t cols, double* out);
};

const KernelSet& scalar();

// nullptr when the build has no AVX2 path or the CPU lacks AVX2/FMA.
const KernelSet* avx2();

// Kernel set used by the library. Selected on first use.
const KernelSet& active();

// "scalar", "avx2" or "auto". Unknown names and unavailable sets throw.
void select(std::string_view name);

// Every kernel set usable on this machine, scalar first.
std::vector<const KernelSet*> available();

}  // namespace crlhf::kernels
