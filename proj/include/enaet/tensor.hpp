#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace enaet {

/// Dense row-major tensor. Rank is dynamic but everything in this project is
/// rank 1, 2 or 4 (NCHW).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims) { resize(std::move(dims)); }
  Tensor(std::initializer_list<int> dims) { resize(std::vector<int>(dims)); }

  void resize(std::vector<int> dims) {
    std::int64_t n = 1;
    for (int d : dims) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    dims_ = std::move(dims);
    data_.assign(static_cast<std::size_t>(n), T(0));
  }

  void zero() { std::fill(data_.begin(), data_.end(), T(0)); }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool empty() const { return data_.empty(); }
  std::size_t numel() const { return data_.size(); }
  int ndim() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& dims() const { return dims_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW accessor
  T& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }
  // matrix accessor
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * dims_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * dims_[1] + c]; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (std::size_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }

  std::vector<int> dims_;
  std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

// Row helpers treating the leading dimension as the batch axis.

template <typename T>
std::size_t row_numel(const Tensor<T>& t) {
  std::size_t n = 1;
  for (int d = 1; d < t.ndim(); ++d) n *= static_cast<std::size_t>(t.dim(d));
  return n;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& t, int from, int to) {
  if (from < 0 || to < from || to > t.dim(0))
    throw std::invalid_argument("slice_rows: range out of bounds");
  std::vector<int> dims = t.dims();
  dims[0] = to - from;
  Tensor<T> out(dims);
  const std::size_t stride = row_numel(t);
  std::copy(t.data() + static_cast<std::size_t>(from) * stride,
            t.data() + static_cast<std::size_t>(to) * stride, out.data());
  return out;
}

template <typename T>
void paste_rows(Tensor<T>& dst, int at, const Tensor<T>& src) {
  if (at < 0 || at + src.dim(0) > dst.dim(0) || row_numel(dst) != row_numel(src))
    throw std::invalid_argument("paste_rows: source does not fit");
  const std::size_t stride = row_numel(dst);
  std::copy(src.data(), src.data() + src.numel(),
            dst.data() + static_cast<std::size_t>(at) * stride);
}

template <typename T>
void paste_rows_add(Tensor<T>& dst, int at, const Tensor<T>& src) {
  if (at < 0 || at + src.dim(0) > dst.dim(0) || row_numel(dst) != row_numel(src))
    throw std::invalid_argument("paste_rows_add: source does not fit");
  const std::size_t stride = row_numel(dst);
  T* base = dst.data() + static_cast<std::size_t>(at) * stride;
  for (std::size_t i = 0; i < src.numel(); ++i) base[i] += src.data()[i];
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != b.ndim() || row_numel(a) != row_numel(b))
    throw std::invalid_argument("concat_rows: incompatible shapes " + a.shape_str() + " vs " +
                                b.shape_str());
  std::vector<int> dims = a.dims();
  dims[0] = a.dim(0) + b.dim(0);
  Tensor<T> out(dims);
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

}  // namespace enaet
