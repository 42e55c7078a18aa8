#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace ccr {

// 64-byte aligned storage. Eigen's vectorized reductions peel up to the first
// aligned element, so summation order follows the buffer address; fixing the
// alignment keeps results bit-identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

}  // namespace ccr
