#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace adreg {

/// Dense double-precision tensor. NN activations use the layout
/// [N, C, D, H, W] with D = z, H = y, W = x (x fastest), matching the
/// component-block layout of DisplacementField.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    v.assign(std::size_t(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<std::int64_t> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (std::int64_t(v.size()) != numel_of(shape))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return std::int64_t(v.size()); }

  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  double item() const {
    if (v.size() != 1) throw std::logic_error("Tensor::item: not a scalar");
    return v[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace adreg
