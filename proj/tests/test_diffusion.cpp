#include <doctest.h>

#include <cmath>

#include "nftl/diffusion.hpp"
#include "nftl/error.hpp"
#include "nftl/rng.hpp"

using namespace nftl;

TEST_CASE("schedule construction") {
  DiffusionSchedule one = make_schedule(1, 0.0, 0.0);
  CHECK(one.alpha_bar == std::vector<float>{1.0f});

  DiffusionSchedule two = make_schedule(2, 0.5, 0.5);
  CHECK(two.alpha_bar[0] == doctest::Approx(0.5));
  CHECK(two.alpha_bar[1] == doctest::Approx(0.25));

  DiffusionSchedule def = make_schedule(50, 1e-4, 0.2);
  CHECK(def.alpha_bar.size() == 50);
  for (std::size_t t = 1; t < 50; ++t) {
    CHECK(def.alpha_bar[t] <= def.alpha_bar[t - 1]);
  }
  CHECK(def.alpha_bar[0] <= 1.0f);
  CHECK(def.alpha_bar[49] > 0.0f);

  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), Error);
  CHECK_THROWS_AS(make_schedule(5, 0.3, 0.2), Error);
  CHECK_THROWS_AS(make_schedule(5, 0.1, 1.0), Error);
}

TEST_CASE("forward_noise respects the mixing identity") {
  DiffusionSchedule sched = make_schedule(10, 0.01, 0.3);
  Tensor x0 = make_tensor({1, 4}, {0.2f, 0.8f, 0.5f, 1.0f});
  Rng rng(42);
  NoisySample s = forward_noise(sched, x0, 7, rng);
  double ab = sched.alpha_bar[6];
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = std::sqrt(ab) * double(x0.data[j]) +
                    std::sqrt(1.0 - ab) * double(s.noise.data[j]);
    CHECK(std::abs(double(s.x_t.data[j]) - expect) < 1e-6);
  }
  CHECK_THROWS_AS(forward_noise(sched, x0, 0, rng), Error);
  CHECK_THROWS_AS(forward_noise(sched, x0, 11, rng), Error);
}

TEST_CASE("noise-free schedule returns the clean sample") {
  DiffusionSchedule sched = make_schedule(1, 0.0, 0.0);
  Tensor x0 = make_tensor({1, 3}, {0.1f, 0.5f, 0.9f});
  Rng rng(1);
  NoisySample s = forward_noise(sched, x0, 1, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(s.x_t.data[j] == doctest::Approx(x0.data[j]).epsilon(1e-7));
  }
}

TEST_CASE("monte carlo statistics of the forward process") {
  DiffusionSchedule sched = make_schedule(50, 1e-4, 0.2);
  std::size_t t = 30;
  double ab = sched.alpha_bar[t - 1];
  Tensor x0 = make_tensor({1, 1}, {0.7f});
  Rng rng(20260819);

  const int n = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    NoisySample s = forward_noise(sched, x0, t, rng);
    sum += double(s.x_t.data[0]);
    sumsq += double(s.x_t.data[0]) * double(s.x_t.data[0]);
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  double expect_mean = std::sqrt(ab) * 0.7;
  double expect_var = 1.0 - ab;
  double sigma = std::sqrt(expect_var / n);
  CHECK(std::abs(mean - expect_mean) < 3.0 * sigma);
  CHECK(std::abs(var - expect_var) / expect_var < 0.05);
}

TEST_CASE("denoise batch layout and determinism") {
  DiffusionSchedule sched = make_schedule(8, 0.01, 0.2);
  Tensor clean = zeros({5, 6});
  Rng fill(3);
  for (float& v : clean.data) v = static_cast<float>(fill.next_double());

  Rng r1(99), r2(99);
  auto [in1, tg1] = build_denoise_batch(sched, clean, r1);
  auto [in2, tg2] = build_denoise_batch(sched, clean, r2);
  CHECK(in1.data == in2.data);
  CHECK(tg1.data == tg2.data);
  CHECK(in1.shape == std::vector<std::size_t>{5, 7});
  CHECK(tg1.shape == std::vector<std::size_t>{5, 6});

  // The appended feature is t/T in (0, 1].
  for (std::size_t r = 0; r < 5; ++r) {
    float tf = in1.at(r, 6);
    CHECK(tf > 0.0f);
    CHECK(tf <= 1.0f);
    double scaled = double(tf) * 8.0;
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-5);
  }
}

TEST_CASE("denoise targets are standard normal at scale") {
  DiffusionSchedule sched = make_schedule(50, 1e-4, 0.2);
  Tensor clean = zeros({400, 25});
  Rng rng(7);
  auto [inputs, targets] = build_denoise_batch(sched, clean, rng);
  double sum = 0.0, sumsq = 0.0;
  for (float v : targets.data) {
    sum += double(v);
    sumsq += double(v) * double(v);
  }
  double n = double(targets.size());
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("reconstruction inverts the forward step") {
  DiffusionSchedule sched = make_schedule(50, 1e-4, 0.2);
  Tensor x0 = zeros({1, 9});
  Rng fill(5);
  for (float& v : x0.data) v = static_cast<float>(fill.next_double());
  Rng rng(6);
  for (std::size_t t : {std::size_t(1), std::size_t(25), std::size_t(50)}) {
    NoisySample s = forward_noise(sched, x0, t, rng);
    Tensor back = reconstruct_x0(sched, s.x_t, t, s.noise);
    for (std::size_t j = 0; j < x0.size(); ++j) {
      CHECK(std::abs(double(back.data[j]) - double(x0.data[j])) < 1e-5);
    }
  }
}
