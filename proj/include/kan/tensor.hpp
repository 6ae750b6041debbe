#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kan {

/// Dense row-major N-dimensional array of 64-bit floats.
/// An empty shape denotes a scalar (numel 1).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() : data(1, 0.0) {}

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data[0] = v;
    return t;
  }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool is_scalar() const { return data.size() == 1; }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const double& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  void fill(double v) {
    for (double& x : data) x = v;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace kan
