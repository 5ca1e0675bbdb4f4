#include <doctest.h>

#include <cmath>

#include "cmpnet/cmp.hpp"
#include "testutil.hpp"

using cmpnet::CmpConfig;
using cmpnet::Rng;
using cmpnet::Tensor;
using cmpnet::cmp_backward;
using cmpnet::cmp_forward;
using cmpnet::make_cmp_config;
using cmpnet::suggest_stride;

namespace {

// one pixel, C channels: build a (1,C,1,1) tensor
Tensor pixel(const std::vector<double>& channels) {
  return Tensor({1, static_cast<int>(channels.size()), 1, 1}, channels);
}

}  // namespace

TEST_CASE("make_cmp_config derives the published geometries") {
  const CmpConfig densenet = make_cmp_config(2208, 16, 16);
  CHECK(densenet.out_channels == 138);
  CHECK(densenet.kernel_size == 16);  // 2208 - 16*137
  CHECK_FALSE(densenet.gaps);

  const CmpConfig vgg = make_cmp_config(512, 2, 2);
  CHECK(vgg.out_channels == 256);
  CHECK(vgg.kernel_size == 2);
  CHECK_FALSE(vgg.gaps);

  const CmpConfig tiny = make_cmp_config(5, 2, 2);
  CHECK(tiny.out_channels == 3);
  CHECK(tiny.kernel_size == 1);
  CHECK(tiny.gaps);
  // windows are [0], [2], [4]: channels 1 and 3 belong to no window
  std::vector<bool> covered(5, false);
  for (int i = 0; i < tiny.out_channels; ++i)
    for (int c = i * tiny.stride; c < i * tiny.stride + tiny.kernel_size; ++c) covered[c] = true;
  CHECK(covered == std::vector<bool>{true, false, true, false, true});
}

TEST_CASE("make_cmp_config rejects empty windows, naming the numbers") {
  try {
    make_cmp_config(512, 2, 3);
    FAIL("expected ConfigError");
  } catch (const cmpnet::ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("k=-253") != std::string::npos);
    CHECK(msg.find("C=512") != std::string::npos);
    CHECK(msg.find("s=3") != std::string::npos);
  }
}

TEST_CASE("make_cmp_config validates argument ranges") {
  CHECK_THROWS_AS(make_cmp_config(1, 2, 2), cmpnet::ConfigError);
  CHECK_THROWS_AS(make_cmp_config(8, 1.0, 2), cmpnet::ConfigError);
  CHECK_THROWS_AS(make_cmp_config(8, 0.5, 2), cmpnet::ConfigError);
  CHECK_THROWS_AS(make_cmp_config(8, 2, 1), cmpnet::ConfigError);
}

TEST_CASE("ceil snaps quotients within 1e-9 of an integer") {
  // 2208/r lands a hair above 138; without the snap this would ceil to 139
  const double r = 2208.0 / 138.000000001;
  const CmpConfig cfg = make_cmp_config(2208, r, 16);
  CHECK(cfg.out_channels == 138);
}

TEST_CASE("suggest_stride picks the uniform partition") {
  CHECK(suggest_stride(2208, 16) == 16);
  CHECK(suggest_stride(512, 2) == 2);
  // out_channels == 1: every stride yields the global channel max, k == C
  const int s = suggest_stride(4, 4);
  const CmpConfig cfg = make_cmp_config(4, 4, s);
  CHECK(cfg.out_channels == 1);
  CHECK(cfg.kernel_size == 4);
  // r barely above 1 leaves no room for any stride > 1
  CHECK_THROWS_AS(suggest_stride(3, 1.2), cmpnet::ConfigError);
}

TEST_CASE("cmp_forward on the worked single-pixel examples") {
  const CmpConfig cfg = make_cmp_config(4, 2, 2);
  auto [y, cache] = cmp_forward(pixel({1, 3, 2, 0}), cfg);
  CHECK(y.shape() == std::vector<int>{1, 2, 1, 1});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 2.0);
  CHECK(cache.argmax[0] == 1);
  CHECK(cache.argmax[1] == 2);

  // overlapping windows [0..3], [2..5], [4..7]
  const CmpConfig wide = make_cmp_config(8, 3, 2);
  CHECK(wide.out_channels == 3);
  CHECK(wide.kernel_size == 4);
  auto [y2, cache2] = cmp_forward(pixel({0, 1, 9, 2, 3, 4, 5, 6}), wide);
  CHECK(y2[0] == 9.0);
  CHECK(y2[1] == 9.0);
  CHECK(y2[2] == 6.0);
  CHECK(cache2.argmax[0] == 2);
  CHECK(cache2.argmax[1] == 2);
  CHECK(cache2.argmax[2] == 7);
}

TEST_CASE("cmp_forward of a constant input is that constant") {
  Rng rng(4);
  for (double v : {-3.25, 0.0, 7.5}) {
    const Tensor x = Tensor::full({2, 12, 3, 2}, v);
    const CmpConfig cfg = make_cmp_config(12, 3, 2);
    auto [y, cache] = cmp_forward(x, cfg);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == v);
  }
}

TEST_CASE("cmp_forward rejects channel mismatches") {
  const CmpConfig cfg = make_cmp_config(8, 2, 2);
  Rng rng(5);
  const Tensor x = Tensor::uniform(rng, {1, 6, 2, 2}, -1, 1);
  CHECK_THROWS_AS(cmp_forward(x, cfg), cmpnet::ShapeError);
}

TEST_CASE("cmp_backward routes gradients to the recorded positions") {
  const CmpConfig cfg = make_cmp_config(4, 2, 2);
  auto [y, cache] = cmp_forward(pixel({1, 3, 2, 0}), cfg);
  const double g0 = 0.7, g1 = -1.3;
  const Tensor grad_x = cmp_backward(Tensor({1, 2, 1, 1}, {g0, g1}), cache, cfg);
  CHECK(grad_x[0] == 0.0);
  CHECK(grad_x[1] == g0);
  CHECK(grad_x[2] == g1);
  CHECK(grad_x[3] == 0.0);

  const Tensor zero_grad = cmp_backward(Tensor::zeros({1, 2, 1, 1}), cache, cfg);
  for (std::size_t i = 0; i < zero_grad.size(); ++i) CHECK(zero_grad[i] == 0.0);

  CHECK_THROWS_AS(cmp_backward(Tensor::zeros({1, 3, 1, 1}), cache, cfg), cmpnet::ShapeError);
  CHECK_THROWS_AS(cmp_backward(Tensor::zeros({1, 2, 2, 1}), cache, cfg), cmpnet::ShapeError);
}

TEST_CASE("overlapping windows accumulate at a shared argmax") {
  // windows [0..3], [2..5], [4..7]; channel 4 is maximal in windows 1 and 2
  const CmpConfig cfg = make_cmp_config(8, 3, 2);
  auto [y, cache] = cmp_forward(pixel({5, 1, 2, 3, 9, 4, 5, 6}), cfg);
  CHECK(cache.argmax[0] == 0);
  CHECK(cache.argmax[1] == 4);
  CHECK(cache.argmax[2] == 4);
  const double g0 = 0.25, g1 = 1.5, g2 = -0.75;
  const Tensor grad_x = cmp_backward(Tensor({1, 3, 1, 1}, {g0, g1, g2}), cache, cfg);
  CHECK(grad_x[0] == g0);
  CHECK(grad_x[4] == g1 + g2);
  for (int c : {1, 2, 3, 5, 6, 7}) CHECK(grad_x[static_cast<std::size_t>(c)] == 0.0);
}

TEST_CASE("window closure: the last window ends exactly at channel C-1") {
  Rng rng(77);
  int tested = 0;
  while (tested < 300) {
    const int channels = 2 + static_cast<int>(rng.next_below(4095));
    const double r = rng.uniform(1.0001, channels + 4.0);
    const int stride = 2 + static_cast<int>(rng.next_below(18));
    CmpConfig cfg;
    try {
      cfg = make_cmp_config(channels, r, stride);
    } catch (const cmpnet::ConfigError&) {
      continue;
    }
    ++tested;
    CHECK(cfg.kernel_size ==
          channels - stride * (cfg.out_channels - 1));
    CHECK((cfg.out_channels - 1) * stride + cfg.kernel_size - 1 == channels - 1);
    CHECK(cfg.kernel_size >= 1);
    CHECK(cfg.kernel_size <= channels);
    CHECK(cfg.gaps == (cfg.kernel_size < stride));
  }
}

TEST_CASE("cmp_forward equals the brute-force oracle bitwise") {
  Rng rng(2718);
  for (int trial = 0; trial < 100; ++trial) {
    const int batch = 1 + static_cast<int>(rng.next_below(3));
    const int channels = 2 + static_cast<int>(rng.next_below(7));
    const int height = 1 + static_cast<int>(rng.next_below(4));
    const int width = 1 + static_cast<int>(rng.next_below(4));
    const Tensor x = Tensor::uniform(rng, {batch, channels, height, width}, -10, 10);
    for (int r = 2; r <= channels; ++r) {
      for (int stride : {2, 3, 4}) {
        CmpConfig cfg;
        try {
          cfg = make_cmp_config(channels, r, stride);
        } catch (const cmpnet::ConfigError&) {
          continue;
        }
        auto [y, cache] = cmp_forward(x, cfg);
        const testutil::CmpOracle want =
            testutil::cmp_oracle(x, cfg.out_channels, cfg.kernel_size, cfg.stride);
        REQUIRE(y.shape() == want.y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) {
          CHECK(y[i] == want.y[i]);
          CHECK(cache.argmax[i] == want.argmax[i]);
        }
      }
    }
  }
}

TEST_CASE("cmp gradients match central finite differences") {
  Rng rng(31415);
  for (const auto& [channels, r, stride] :
       {std::tuple<int, double, int>{8, 3.0, 2}, {8, 2.0, 2}, {5, 2.0, 2}, {12, 4.0, 4}}) {
    const CmpConfig cfg = make_cmp_config(channels, r, stride);
    Tensor x = testutil::distinct_tensor(rng, {2, channels, 3, 3});
    const Tensor probe = Tensor::uniform(rng, {2, cfg.out_channels, 3, 3}, 0.5, 1.5);
    auto [y, cache] = cmp_forward(x, cfg);
    const Tensor analytic = cmp_backward(probe, cache, cfg);
    const double worst = testutil::max_fd_rel_err(x, analytic, [&] {
      const auto out = cmp_forward(x, cfg).first;
      double loss = 0;
      for (std::size_t i = 0; i < out.size(); ++i) loss += out[i] * probe[i];
      return loss;
    });
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("tie-broken backward lies in the subdifferential") {
  // exact tie inside window 0; convex loss w0*max(x0,x1) + w1*max(x2,x3)
  const CmpConfig cfg = make_cmp_config(4, 2, 2);
  Tensor x = pixel({2.0, 2.0, 1.0, 0.0});
  const Tensor probe({1, 2, 1, 1}, {0.8, 1.2});
  auto [y, cache] = cmp_forward(x, cfg);
  CHECK(cache.argmax[0] == 0);  // lowest index wins the tie
  const Tensor grad = cmp_backward(probe, cache, cfg);

  const auto loss = [&] {
    const auto out = cmp_forward(x, cfg).first;
    double total = 0;
    for (std::size_t i = 0; i < out.size(); ++i) total += out[i] * probe[i];
    return total;
  };
  const double h = 1e-5, tol = 1e-6;
  const double base = loss();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double right = (loss() - base) / h;  // one-sided derivatives
    x[i] = saved - h;
    const double left = (base - loss()) / h;
    x[i] = saved;
    CHECK(grad[i] >= left - tol);
    CHECK(grad[i] <= right + tol);
  }
}

TEST_CASE("raising one input never lowers any output") {
  Rng rng(555);
  for (int trial = 0; trial < 50; ++trial) {
    const int channels = 2 + static_cast<int>(rng.next_below(7));
    CmpConfig cfg;
    try {
      cfg = make_cmp_config(channels, rng.uniform(1.1, channels),
                            2 + static_cast<int>(rng.next_below(3)));
    } catch (const cmpnet::ConfigError&) {
      continue;
    }
    Tensor x = Tensor::uniform(rng, {1, channels, 2, 2}, -1, 1);
    const Tensor before = cmp_forward(x, cfg).first;
    x[rng.next_below(x.size())] += rng.uniform(0.0, 2.0);
    const Tensor after = cmp_forward(x, cfg).first;
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] >= before[i]);
  }
}

TEST_CASE("compression accounting across the published depths") {
  for (const int channels : {512, 2048, 2208}) {
    for (const int r : {2, 4, 8, 16, 32}) {
      const int expected = (channels + r - 1) / r;  // integer ceil
      const int s = suggest_stride(channels, r);
      const CmpConfig cfg = make_cmp_config(channels, r, s);
      CHECK(cfg.out_channels == expected);
    }
  }
}
