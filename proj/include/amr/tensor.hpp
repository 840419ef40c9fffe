#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "amr/common.hpp"

namespace amr {

// Dense row-major tensor. Scalar type is a template parameter: tests and
// gradient checks run in double, training runs in float.
template <class T>
struct TensorData {
  std::vector<int> shape;
  std::vector<T> v;

  TensorData() = default;
  explicit TensorData(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    v.assign(numel(shape), fill);
  }
  TensorData(std::vector<int> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    if ((size_t)numel(shape) != v.size())
      throw DimensionError("tensor data length does not match shape");
  }

  static int64_t numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) {
      if (e <= 0) throw DimensionError("tensor extents must be positive");
      n *= e;
    }
    return n;
  }

  int64_t size() const { return (int64_t)v.size(); }
  int ndim() const { return (int)shape.size(); }
  int dim(int i) const { return shape[(size_t)i]; }
  bool is_scalar() const { return v.size() == 1; }

  T& at(int i) { return v[(size_t)i]; }
  T at(int i) const { return v[(size_t)i]; }
  T& at(int r, int c) { return v[(size_t)r * shape[1] + c]; }
  T at(int r, int c) const { return v[(size_t)r * shape[1] + c]; }

  bool same_shape(const TensorData& o) const { return shape == o.shape; }

  template <class U>
  TensorData<U> cast() const {
    TensorData<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = (U)v[i];
    return out;
  }
};

template <class T>
inline bool all_finite(const TensorData<T>& t) {
  for (T x : t.v)
    if (!std::isfinite((double)x)) return false;
  return true;
}

template <class T>
inline void check_finite(const TensorData<T>& t, const char* where) {
  if (!all_finite(t))
    throw NumericalError(strfmt("non-finite value produced by %s", where));
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

}  // namespace amr
