#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "animlab/common.hpp"

namespace animlab {

using Shape = std::vector<int64_t>;

namespace detail {

// 64-byte-aligned storage for all tensor data. Eigen's kernels round
// differently depending on the cache-line phase of their operands, so pinning
// every buffer to a fixed phase makes results a function of shape alone.
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t n) { ::operator delete(p, n * sizeof(T), kAlign); }

  friend bool operator==(const AlignedAlloc&, const AlignedAlloc&) { return true; }
  friend bool operator!=(const AlignedAlloc&, const AlignedAlloc&) { return false; }
};

}  // namespace detail

using DataVec = std::vector<double, detail::AlignedAlloc<double>>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major double tensor. All model math runs in double so that
// finite-difference checks are meaningful.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(numel_of(shape_)), fill);
  }
  Tensor(Shape shape, const std::vector<double>& data) : shape_(std::move(shape)) {
    validate_shape();
    ANIMLAB_REQUIRE(static_cast<int64_t>(data.size()) == numel_of(shape_), "tensor data size ",
                    data.size(), " does not match shape ", shape_str(shape_));
    data_.assign(data.begin(), data.end());
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  DataVec& vec() { return data_; }
  const DataVec& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  double at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(offset(idx))];
  }

  Tensor reshaped(Shape s) const {
    ANIMLAB_REQUIRE(numel_of(s) == numel(), "reshape ", shape_str(shape_), " -> ", shape_str(s),
                    " changes element count");
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  int64_t offset(std::initializer_list<int64_t> idx) const {
    ANIMLAB_REQUIRE(static_cast<int64_t>(idx.size()) == ndim(), "index rank ", idx.size(),
                    " vs tensor rank ", ndim());
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      off = off * shape_[k] + i;
      ++k;
    }
    return off;
  }
  void validate_shape() const {
    for (int64_t d : shape_) ANIMLAB_REQUIRE(d > 0, "nonpositive tensor dimension in ", shape_str(shape_));
  }

  Shape shape_;
  DataVec data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  ANIMLAB_REQUIRE(a.same_shape(b), what, ": shape mismatch ", shape_str(a.shape()), " vs ",
                  shape_str(b.shape()));
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

}  // namespace animlab
