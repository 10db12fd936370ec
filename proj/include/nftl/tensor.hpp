#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nftl {

// Dense row-major float32 tensor. Invariant: data.size() == product(shape).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t size() const { return data.size(); }

  // 2-D accessors; batch is the leading dimension everywhere.
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

  float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const float& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

// Validates the shape/data length invariant; throws Error on mismatch.
Tensor make_tensor(std::vector<std::size_t> shape, std::vector<float> data);

Tensor zeros(std::vector<std::size_t> shape);

bool all_finite(const Tensor& t);

// Throws NumericError naming `context` if t holds a NaN or Inf.
void check_finite(const Tensor& t, const std::string& context);
void check_finite(const std::vector<float>& v, const std::string& context);

}  // namespace nftl
