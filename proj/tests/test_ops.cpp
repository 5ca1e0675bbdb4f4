#include <doctest.h>

#include <cmath>

#include "cmpnet/gradcheck.hpp"
#include "cmpnet/ops.hpp"
#include "testutil.hpp"

using namespace cmpnet;

TEST_CASE("conv2d with a 1x1 identity kernel reproduces the input") {
  Rng rng(1);
  const Tensor x = Tensor::uniform(rng, {2, 3, 4, 4}, -1, 1);
  Tensor w = Tensor::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0;
  const Tensor y = conv2d_forward(x, w, Tensor::zeros({3}), 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d hand sum: all-ones 2x2 kernel") {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  const Tensor y = conv2d_forward(x, w, Tensor::zeros({1}), 1, 0);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y[0] == 10.0);
}

TEST_CASE("conv2d rejects impossible geometry") {
  Rng rng(2);
  const Tensor x = Tensor::uniform(rng, {1, 2, 3, 3}, -1, 1);
  const Tensor w = Tensor::uniform(rng, {4, 2, 5, 5}, -1, 1);
  CHECK_THROWS_AS(conv2d_forward(x, w, Tensor::zeros({4}), 1, 0), ShapeError);
  const Tensor wrong_channels = Tensor::uniform(rng, {4, 3, 3, 3}, -1, 1);
  CHECK_THROWS_AS(conv2d_forward(x, wrong_channels, Tensor::zeros({4}), 1, 1), ShapeError);
}

TEST_CASE("maxpool2d picks spatial maxima and routes gradients there") {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto [y, cache] = maxpool2d_forward(x, 2, 2);
  REQUIRE(y.size() == 1);
  CHECK(y[0] == 4.0);
  const Tensor grad_x = maxpool2d_backward(Tensor({1, 1, 1, 1}, {2.5}), cache);
  CHECK(grad_x[0] == 0.0);
  CHECK(grad_x[1] == 0.0);
  CHECK(grad_x[2] == 0.0);
  CHECK(grad_x[3] == 2.5);

  const Tensor c = Tensor::full({1, 2, 4, 4}, 3.5);
  auto [yc, cc] = maxpool2d_forward(c, 2, 2);
  for (std::size_t i = 0; i < yc.size(); ++i) CHECK(yc[i] == 3.5);
}

TEST_CASE("global average pooling: means forward, spread backward") {
  const Tensor constant = Tensor::full({1, 1, 7, 7}, 3.0);
  CHECK(global_avg_pool_forward(constant)[0] == 3.0);

  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool_forward(x)[0] == 2.5);

  const Tensor grad_x = global_avg_pool_backward(Tensor({1, 1, 1, 1}, {2.0}), {1, 1, 2, 2});
  for (std::size_t i = 0; i < grad_x.size(); ++i) CHECK(grad_x[i] == 0.5);
}

TEST_CASE("dense with identity weights flattens the input") {
  Rng rng(3);
  const Tensor x = Tensor::uniform(rng, {2, 2, 2, 2}, -1, 1);
  Tensor w = Tensor::zeros({8, 8});
  for (int i = 0; i < 8; ++i) w(i, i) = 1.0;
  const Tensor y = dense_forward(x, w, Tensor::zeros({8}));
  REQUIRE(y.shape() == std::vector<int>{2, 8});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("dense layer of the densenet161 head counts 27697408 parameters") {
  const long long in_features = 7LL * 7 * 2208;
  const long long params = in_features * 256 + 256;
  CHECK(params == 27697408);
}

TEST_CASE("batchnorm leaves a normalized batch nearly unchanged") {
  // batch constructed with exact zero mean and unit population variance
  const Tensor x({4, 1}, {-1.5, -0.5, 0.5, 1.5});
  Tensor centered = x;
  double mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i];
  mean /= 4;
  double var = 0;
  for (std::size_t i = 0; i < x.size(); ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= 4;
  for (std::size_t i = 0; i < x.size(); ++i)
    centered[i] = (x[i] - mean) / std::sqrt(var);

  BnState state;
  state.running_mean = Tensor::zeros({1});
  state.running_var = Tensor::full({1}, 1.0);
  state.epsilon = 1e-14;  // negligible next to unit variance
  const Tensor y = batchnorm_forward(centered, Tensor::full({1}, 1.0), Tensor::zeros({1}), state,
                                     Mode::train, nullptr);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(std::abs(y[i] - centered[i]) < 1e-6);

  // with the default epsilon of 1e-5 the shrinkage is half of epsilon
  BnState dflt;
  dflt.running_mean = Tensor::zeros({1});
  dflt.running_var = Tensor::full({1}, 1.0);
  const Tensor yd = batchnorm_forward(centered, Tensor::full({1}, 1.0), Tensor::zeros({1}), dflt,
                                      Mode::train, nullptr);
  for (std::size_t i = 0; i < yd.size(); ++i)
    CHECK(std::abs(yd[i] - centered[i]) < 1e-4);
}

TEST_CASE("batchnorm train output matches beta/gamma statistics") {
  Rng rng(17);
  const Tensor x = Tensor::uniform(rng, {16, 3, 2, 2}, -4, 7);
  const Tensor gamma({3}, {1.5, 0.5, 2.0});
  const Tensor beta({3}, {0.25, -1.0, 3.0});
  BnState state;
  state.running_mean = Tensor::zeros({3});
  state.running_var = Tensor::full({3}, 1.0);
  const Tensor y = batchnorm_forward(x, gamma, beta, state, Mode::train, nullptr);

  for (int c = 0; c < 3; ++c) {
    double mean = 0, count = 0;
    for (int b = 0; b < 16; ++b)
      for (int m = 0; m < 2; ++m)
        for (int n = 0; n < 2; ++n) {
          mean += y(b, c, m, n);
          count += 1;
        }
    mean /= count;
    double var = 0;
    for (int b = 0; b < 16; ++b)
      for (int m = 0; m < 2; ++m)
        for (int n = 0; n < 2; ++n) var += (y(b, c, m, n) - mean) * (y(b, c, m, n) - mean);
    var /= count;
    CHECK(mean == doctest::Approx(beta[static_cast<std::size_t>(c)]).epsilon(1e-6));
    CHECK(var == doctest::Approx(gamma[static_cast<std::size_t>(c)] *
                                 gamma[static_cast<std::size_t>(c)])
                     .epsilon(1e-4));
  }
}

TEST_CASE("batchnorm eval mode uses running statistics and never divides by zero") {
  BnState state;
  state.running_mean = Tensor::full({1}, 2.0);
  state.running_var = Tensor::full({1}, 4.0);
  const Tensor x({2, 1}, {2.0, 6.0});
  const Tensor y = batchnorm_forward(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), state,
                                     Mode::eval, nullptr);
  CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(2.0).epsilon(1e-4));

  // zero-variance batch of one: epsilon keeps the output finite
  BnState fresh;
  fresh.running_mean = Tensor::zeros({1});
  fresh.running_var = Tensor::full({1}, 1.0);
  const Tensor one({1, 1}, {5.0});
  const Tensor out = batchnorm_forward(one, Tensor::full({1}, 1.0), Tensor::zeros({1}), fresh,
                                       Mode::train, nullptr);
  CHECK(std::isfinite(out[0]));
}

TEST_CASE("elu values at the worked points") {
  const Tensor x({3}, {0.0, -1.0, 2.0});
  const Tensor y = elu_forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(-0.632121).epsilon(1e-5));
  CHECK(y[2] == 2.0);
}

TEST_CASE("dropout: eval identity, mask semantics, unbiased expectation") {
  Rng rng(400);
  const Tensor x = Tensor::uniform(rng, {2, 10}, -1, 1);
  Rng unused(0);
  const Tensor eval_out = dropout_forward(x, 0.5, Mode::eval, unused, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(eval_out[i] == x[i]);

  DropoutCache cache;
  const Tensor train_out = dropout_forward(x, 0.5, Mode::train, rng, &cache);
  const Tensor grad = dropout_backward(Tensor::full({2, 10}, 1.0), cache);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (cache.mask[i] == 0.0) {
      CHECK(train_out[i] == 0.0);
      CHECK(grad[i] == 0.0);
    } else {
      CHECK(train_out[i] == x[i] * 2.0);
      CHECK(grad[i] == 2.0);
    }
  }

  // Monte Carlo: E[dropout(1)] == 1 within 1% over 1e5 draws
  const Tensor ones = Tensor::full({100000}, 1.0);
  Rng mc(123);
  const Tensor sampled = dropout_forward(ones, 0.5, Mode::train, mc, nullptr);
  double sum = 0;
  for (std::size_t i = 0; i < sampled.size(); ++i) sum += sampled[i];
  CHECK(sum / static_cast<double>(sampled.size()) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("softmax cross-entropy on the worked examples") {
  const int classes = 13;
  const Tensor uniform = Tensor::full({2, classes}, 0.42);
  const auto res = softmax_cross_entropy(uniform, {3, 7});
  CHECK(res.loss == doctest::Approx(std::log(classes)).epsilon(1e-12));

  const Tensor confident({1, 2}, {10.0, -10.0});
  const auto easy = softmax_cross_entropy(confident, {0});
  CHECK(easy.loss == doctest::Approx(2.061e-9).epsilon(1e-3));

  Rng rng(9);
  const Tensor logits = Tensor::uniform(rng, {5, 7}, -3, 3);
  const auto batch = softmax_cross_entropy(logits, {0, 1, 2, 3, 4});
  for (int b = 0; b < 5; ++b) {
    double row_sum = 0;
    for (int c = 0; c < 7; ++c) row_sum += batch.grad_logits(b, c);
    CHECK(std::abs(row_sum) < 1e-12);
  }
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1, 2, 3, 9}), ShapeError);
}

TEST_CASE("conv2d output shapes follow the declared formula for all valid inputs") {
  Rng rng(600);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 1 + static_cast<int>(rng.next_below(10));
    const int w = 1 + static_cast<int>(rng.next_below(10));
    const int k = 1 + static_cast<int>(rng.next_below(4));
    const int stride = 1 + static_cast<int>(rng.next_below(3));
    const int pad = static_cast<int>(rng.next_below(3));
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const Tensor x = Tensor::uniform(rng, {2, 3, h, w}, -1, 1);
    const Tensor weight = Tensor::uniform(rng, {4, 3, k, k}, -1, 1);
    const Tensor y = conv2d_forward(x, weight, Tensor::zeros({4}), stride, pad);
    CHECK(y.dim(2) == (h + 2 * pad - k) / stride + 1);
    CHECK(y.dim(3) == (w + 2 * pad - k) / stride + 1);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::isfinite(y[i]));
  }
}

TEST_CASE("every operator passes its finite-difference suite") {
  for (const auto& result : run_grad_checks("all", 42)) {
    INFO(result.op);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("eval-mode determinism: identical calls give identical bits") {
  Rng rng(21);
  const Tensor x = Tensor::uniform(rng, {3, 4, 2, 2}, -1, 1);
  BnState state;
  state.running_mean = Tensor::uniform(rng, {4}, -1, 1);
  state.running_var = Tensor::uniform(rng, {4}, 0.5, 2);
  const Tensor gamma = Tensor::uniform(rng, {4}, 0.5, 1.5);
  const Tensor beta = Tensor::uniform(rng, {4}, -1, 1);
  const Tensor y1 = batchnorm_forward(x, gamma, beta, state, Mode::eval, nullptr);
  const Tensor y2 = batchnorm_forward(x, gamma, beta, state, Mode::eval, nullptr);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}
