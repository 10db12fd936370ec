#include "nftl/tensor.hpp"

#include <cmath>

#include "nftl/error.hpp"

namespace nftl {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (std::size_t s : shape) p *= s;
  return p;
}
}  // namespace

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<float> data) {
  if (shape_product(shape) != data.size()) {
    throw Error("tensor shape/data mismatch: shape wants " +
                std::to_string(shape_product(shape)) + " elements, data has " +
                std::to_string(data.size()));
  }
  return Tensor{std::move(shape), std::move(data)};
}

Tensor zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor{std::move(shape), std::vector<float>(n, 0.0f)};
}

bool all_finite(const Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(const std::vector<float>& v, const std::string& context) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError(context + ": non-finite value");
  }
}

void check_finite(const Tensor& t, const std::string& context) {
  check_finite(t.data, context);
}

}  // namespace nftl
