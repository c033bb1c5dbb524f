#pragma once

#include "crlhf/kernels.hpp"

namespace crlhf::kernels::detail {

// exp(-708) is the last normal double; smaller arguments flush to zero.
inline constexpr double kExpUnderflow = -708.0;

extern const KernelSet kScalarKernels;

#if defined(CRLHF_HAVE_AVX2)
extern const KernelSet kAvx2Kernels;
#endif

}  // namespace crlhf::kernels::detail
