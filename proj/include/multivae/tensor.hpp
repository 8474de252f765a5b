#pragma once

#include <Eigen/Core>

#include <cmath>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace multivae {

using Index = std::int64_t;

/// 64-byte-aligned allocator. With AVX-512 enabled, Eigen picks vector kernels
/// (and thus summation order) from runtime pointer alignment; pinning every
/// tensor buffer to one alignment keeps results bitwise reproducible across
/// runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(kAlign)); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

/// Dense row-major double tensor, rank 0..4. Rank 0 is a scalar with numel 1.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<Index> shape, const std::vector<double>& data) : shape_(std::move(shape)) {
    if (count(shape_) != static_cast<Index>(data.size()))
      throw std::invalid_argument("tensor: shape/data size mismatch");
    data_.assign(data.begin(), data.end());
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_.assign(1, v);
    return t;
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index numel() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  double item() const {
    if (numel() != 1) throw std::logic_error("tensor: item() on non-scalar");
    return data_[0];
  }

  /// Flat elementwise view.
  ArrMap arr() { return ArrMap(data(), numel()); }
  ConstArrMap arr() const { return ConstArrMap(data(), numel()); }

  /// Rank-2 view; rank-1 tensors map to a single row.
  MatMap mat() {
    auto [r, c] = rc();
    return MatMap(data(), r, c);
  }
  ConstMatMap mat() const {
    auto [r, c] = rc();
    return ConstMatMap(data(), r, c);
  }

  /// View with the leading dims folded into rows and the last dim as columns.
  MatMap mat_lastdim() {
    Index c = rank() == 0 ? 1 : shape_.back();
    return MatMap(data(), numel() / c, c);
  }
  ConstMatMap mat_lastdim() const {
    Index c = rank() == 0 ? 1 : shape_.back();
    return ConstMatMap(data(), numel() / c, c);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void reshape(std::vector<Index> shape) {
    if (count(shape) != numel()) throw std::invalid_argument("tensor: reshape numel mismatch");
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Index count(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim");
      n *= d;
    }
    return n;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::pair<Index, Index> rc() const {
    if (rank() == 2) return {shape_[0], shape_[1]};
    if (rank() <= 1) return {1, numel()};
    throw std::logic_error("tensor: mat() needs rank <= 2, have " + shape_str());
  }

  std::vector<Index> shape_;
  AlignedDoubles data_;
};

}  // namespace multivae
