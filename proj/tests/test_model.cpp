#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "nftl/error.hpp"
#include "nftl/gradcheck.hpp"
#include "nftl/model.hpp"
#include "nftl/rng.hpp"
#include "nftl/tensor.hpp"

using namespace nftl;

namespace {
std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("tensor shape/data invariant") {
  CHECK_NOTHROW(make_tensor({2, 3}, std::vector<float>(6, 0.0f)));
  CHECK_THROWS_AS(make_tensor({2, 3}, std::vector<float>(5, 0.0f)), Error);
  Tensor t = zeros({2, 2});
  CHECK(all_finite(t));
  t.data[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(all_finite(t));
  CHECK_THROWS_AS(check_finite(t, "probe"), NumericError);
}

TEST_CASE("arch validation names the offending layer") {
  std::vector<LayerSpec> bad = {{LayerKind::affine, 4, 8}, {LayerKind::affine, 7, 2}};
  try {
    validate_arch(bad);
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  std::vector<LayerSpec> bad_act = {{LayerKind::affine, 4, 8}, {LayerKind::relu, 8, 4}};
  CHECK_THROWS_AS(validate_arch(bad_act), Error);
}

TEST_CASE("affine init bound and zero biases") {
  Rng rng(7);
  std::vector<LayerSpec> arch = {{LayerKind::affine, 6, 3}};
  Model m = make_model(arch, rng);
  double bound = std::sqrt(6.0 / 9.0);
  for (std::size_t i = 0; i < 18; ++i) {
    CHECK(std::abs(m.params[i]) <= bound);
  }
  for (std::size_t i = 18; i < 21; ++i) CHECK(m.params[i] == 0.0f);
  CHECK(m.head_range == ParamRange{0, 21});
}

TEST_CASE("forward matches a hand computation") {
  // One affine layer: y = x W^T + b with W = [[1,2],[3,4]], b = (0.5, -0.5).
  Model m = make_model_with_params({{LayerKind::affine, 2, 2}},
                                   {1.0f, 2.0f, 3.0f, 4.0f, 0.5f, -0.5f});
  Tensor x = make_tensor({1, 2}, {1.0f, 1.0f});
  auto [y, cache] = forward(m, x);
  CHECK(y.at(0, 0) == doctest::Approx(3.5));
  CHECK(y.at(0, 1) == doctest::Approx(6.5));
}

TEST_CASE("forward rejects a mismatched batch width") {
  Rng rng(3);
  Model m = make_model(mlp_arch({4, 3, 2}, LayerKind::relu), rng);
  Tensor bad = zeros({2, 5});
  CHECK_THROWS_AS(forward(m, bad), Error);
}

TEST_CASE("backward rejects a stale or mismatched cache") {
  Rng rng(5);
  Model a = make_model(mlp_arch({3, 4, 2}, LayerKind::relu), rng);
  Model b = make_model(mlp_arch({3, 5, 2}, LayerKind::relu), rng);
  Tensor x = zeros({2, 3});
  auto [ya, cache_a] = forward(a, x);
  CHECK_THROWS_AS(backward(b, cache_a, ya), Error);
  Tensor wrong_grad = zeros({3, 2});
  CHECK_THROWS_AS(backward(a, cache_a, wrong_grad), Error);
}

TEST_CASE("gradients match finite differences on random MLPs") {
  FdReport r = fd_check_model(50, 20260819);
  CHECK(r.cases == 50);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("forward/backward are bit-identical across repeats") {
  Rng rng(11);
  Model m = make_model(mlp_arch({5, 8, 8, 3}, LayerKind::tanh), rng);
  Tensor x = zeros({4, 5});
  Rng xr(12);
  for (float& v : x.data) v = static_cast<float>(xr.uniform(-1.0, 1.0));
  auto [y1, c1] = forward(m, x);
  auto [y2, c2] = forward(m, x);
  CHECK(y1.data == y2.data);
  std::vector<float> g1 = backward(m, c1, y1);
  std::vector<float> g2 = backward(m, c2, y2);
  CHECK(g1 == g2);
}

TEST_CASE("zeroing head_range kills only the final affine contribution") {
  Rng rng(13);
  Model m = make_model(mlp_arch({4, 6, 3}, LayerKind::relu), rng);
  Tensor x = zeros({3, 4});
  Rng xr(14);
  for (float& v : x.data) v = static_cast<float>(xr.uniform(-1.0, 1.0));

  Model zeroed = m;
  for (std::size_t i = zeroed.head_range.begin; i < zeroed.head_range.end; ++i) {
    zeroed.params[i] = 0.0f;
  }
  auto [y_zero, cz] = forward(zeroed, x);
  for (float v : y_zero.data) CHECK(v == 0.0f);

  // Pre-head activations are untouched by the head zeroing.
  auto [y_full, cf] = forward(m, x);
  (void)y_full;
  CHECK(cf.acts[cf.acts.size() - 2].data == cz.acts[cz.acts.size() - 2].data);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(17);
  Model m = make_model(mlp_arch({6, 9, 4}, LayerKind::relu), rng);
  std::string path = temp_path("nftl_test_ckpt.bin");
  save_checkpoint(m, path);
  Model back = load_checkpoint(path);
  CHECK(back.arch == m.arch);
  CHECK(back.params == m.params);
  CHECK(back.head_range == m.head_range);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  Rng rng(19);
  Model m = make_model(mlp_arch({3, 3, 2}, LayerKind::relu), rng);
  std::string path = temp_path("nftl_test_ckpt2.bin");
  save_checkpoint(m, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto write_bytes = [&](const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(bad_magic);
  CHECK_THROWS_AS(load_checkpoint(path), Error);

  write_bytes(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(path), Error);

  write_bytes(bytes.substr(0, 6));
  CHECK_THROWS_AS(load_checkpoint(path), Error);

  std::remove(path.c_str());
}
