#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "camid/error.hpp"

namespace camid::nn {

using Shape = std::vector<int>;

/// 64-byte aligned storage. Vectorized kernels peel loops by pointer
/// alignment, so a fixed alignment keeps their summation order, and with it
/// every result bit, independent of where the allocator puts a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor. Activations use (batch, channels, height, width).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    values_.assign(shape_numel(shape_), fill);
  }
  Tensor(Shape shape, const std::vector<T>& values)
      : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (values_.size() != shape_numel(shape_)) {
      throw Error(Errc::ShapeMismatch, "tensor " + shape_string(shape_) + " given " +
                                           std::to_string(values_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const noexcept { return values_.size(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& at(int n, int c, int y, int x) { return values_[offset4(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return values_[offset4(n, c, y, x)]; }
  T& at(int i, int j) { return values_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j) const { return values_[static_cast<std::size_t>(i) * shape_[1] + j]; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    for (const T& v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(values_.begin(), values_.end(), out.data());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset4(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_;
  AlignedVector<T> values_;
};

inline void require_rank(const Shape& shape, int rank, const char* what) {
  if (static_cast<int>(shape.size()) != rank) {
    throw Error(Errc::ShapeMismatch, std::string(what) + " expects rank " + std::to_string(rank) +
                                         ", got " + shape_string(shape));
  }
}

}  // namespace camid::nn
