#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tabgen {

#ifdef TABGEN_REAL64
using real = double;
#else
using real = float;
#endif

/// Dense row-major n-dimensional array. Plain value type; gradient
/// tracking lives in autograd.hpp on top of this.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<real> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel(shape), real(0));
  }
  Tensor(std::vector<std::size_t> s, std::vector<real> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(real v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  real& operator[](std::size_t i) { return data[i]; }
  real operator[](std::size_t i) const { return data[i]; }

  real& at2(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }
  real at2(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace tabgen
