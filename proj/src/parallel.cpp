#include "heatlab/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace heatlab {

namespace {

std::atomic<int> g_max_threads{0};
std::once_flag g_env_once;

void apply_env_override() {
  std::call_once(g_env_once, [] {
    const char* env = std::getenv("HEATLAB_THREADS");
    if (env != nullptr) {
      const int n = std::atoi(env);
      if (n > 0) g_max_threads.store(n);
    }
  });
}

}  // namespace

void set_max_threads(int n) {
  apply_env_override();
  const char* env = std::getenv("HEATLAB_THREADS");
  if (env == nullptr) g_max_threads.store(n < 0 ? 0 : n);
}

int max_threads() {
  apply_env_override();
  return g_max_threads.load();
}

bool parallel_enabled() {
#ifdef _OPENMP
  return max_threads() != 1;
#else
  return false;
#endif
}

void serial_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
#ifdef _OPENMP
  if (parallel_enabled()) {
    const int requested = max_threads();
    const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(n);
    if (requested > 0) {
#pragma omp parallel for schedule(dynamic) num_threads(requested)
      for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
    } else {
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  serial_for(n, fn);
}

}  // namespace heatlab
