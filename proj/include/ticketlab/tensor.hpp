#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "ticketlab/errors.hpp"

namespace ticketlab {

// Dense row-major tensor of doubles. Only what the models need.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)), data(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void check_consistent() const {
    if (data.size() != element_count(shape)) {
      throw ShapeError("tensor data length does not match shape");
    }
  }
};

}  // namespace ticketlab
