#include <atomic>
#include <cstdlib>
#include <string>

#include "crlhf/error.hpp"
#include "kernels_internal.hpp"

namespace crlhf::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(CRLHF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelSet* resolve(std::string_view name) {
  if (name == "scalar") return &scalar();
  if (name == "avx2") {
    const KernelSet* set = avx2();
    require(set != nullptr, ErrorKind::domain, "avx2 kernels are not available on this machine");
    return set;
  }
  if (name == "auto" || name.empty()) {
    const KernelSet* set = avx2();
    return set != nullptr ? set : &scalar();
  }
  fail(ErrorKind::domain, "unknown kernel set '" + std::string(name) + "'");
}

const KernelSet* initial() {
  const char* env = std::getenv("CRLHF_KERNELS");
  return resolve(env != nullptr ? std::string_view(env) : std::string_view("auto"));
}

std::atomic<const KernelSet*>& current() {
  static std::atomic<const KernelSet*> set{initial()};
  return set;
}

}  // namespace

const KernelSet& scalar() { return detail::kScalarKernels; }

const KernelSet* avx2() {
#if defined(CRLHF_HAVE_AVX2)
  static const bool supported = cpu_has_avx2();
  return supported ? &detail::kAvx2Kernels : nullptr;
#else
  return nullptr;
#endif
}

const KernelSet& active() { return *current().load(std::memory_order_acquire); }

void select(std::string_view name) { current().store(resolve(name), std::memory_order_release); }

std::vector<const KernelSet*> available() {
  std::vector<const KernelSet*> sets{&scalar()};
  if (const KernelSet* set = avx2()) sets.push_back(set);
  return sets;
}

}  // namespace crlhf::kernels
