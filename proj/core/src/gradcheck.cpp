#include "cmpnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "cmpnet/cmp.hpp"
#include "cmpnet/ops.hpp"

namespace cmpnet {

double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

namespace {

using LossFn = std::function<double()>;

double weighted_sum(const Tensor& y, const Tensor& probe) {
  double sum = 0;
  for (std::size_t i = 0; i < y.size(); ++i) sum += y[i] * probe[i];
  return sum;
}

// Central difference of `loss` against every element of `subject`, compared
// with the analytic gradient.
double check_tensor(Tensor& subject, const Tensor& analytic, const LossFn& loss) {
  double worst = 0;
  for (std::size_t i = 0; i < subject.size(); ++i) {
    const double saved = subject[i];
    subject[i] = saved + kGradCheckStep;
    const double up = loss();
    subject[i] = saved - kGradCheckStep;
    const double down = loss();
    subject[i] = saved;
    const double numeric = (up - down) / (2 * kGradCheckStep);
    worst = std::max(worst, grad_rel_err(analytic[i], numeric));
  }
  return worst;
}

// Random values with pairwise gaps far above the finite-difference step, in
// random order, so max windows are tie-free and stable under perturbation.
Tensor distinct_tensor(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  std::vector<std::size_t> perm(t.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.next_below(i + 1)]);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<double>(perm[i]) * 1e-3 + rng.uniform(-2e-4, 2e-4);
  return t;
}

double check_cmp(Rng& rng) {
  struct Case {
    int channels, stride;
    double r;
  };
  // includes the k > s overlap regime and a k < s gap regime
  const Case cases[] = {{8, 2, 3.0}, {8, 2, 2.0}, {5, 2, 2.0}, {12, 4, 4.0}};
  double worst = 0;
  for (const Case& c : cases) {
    const CmpConfig cfg = make_cmp_config(c.channels, c.r, c.stride);
    Tensor x = distinct_tensor(rng, {2, c.channels, 3, 3});
    Tensor probe = Tensor::uniform(rng, {2, cfg.out_channels, 3, 3}, 0.5, 1.5);
    auto [y0, cache] = cmp_forward(x, cfg);
    const Tensor analytic = cmp_backward(probe, cache, cfg);
    const LossFn loss = [&] { return weighted_sum(cmp_forward(x, cfg).first, probe); };
    worst = std::max(worst, check_tensor(x, analytic, loss));
  }
  return worst;
}

double check_conv(Rng& rng) {
  struct Case {
    int stride, pad;
  };
  const Case cases[] = {{1, 1}, {2, 0}};
  double worst = 0;
  for (const Case& c : cases) {
    Tensor x = Tensor::uniform(rng, {2, 3, 5, 5}, -1, 1);
    Tensor w = Tensor::uniform(rng, {4, 3, 3, 3}, -1, 1);
    Tensor b = Tensor::uniform(rng, {4}, -1, 1);
    const std::vector<int> out_shape = conv2d_output_shape(x.shape(), w.shape(), c.stride, c.pad);
    Tensor probe = Tensor::uniform(rng, out_shape, 0.5, 1.5);
    Tensor grad_w = Tensor::zeros(w.shape());
    Tensor grad_b = Tensor::zeros(b.shape());
    const Tensor grad_x = conv2d_backward(probe, x, w, c.stride, c.pad, grad_w, grad_b);
    const LossFn loss = [&] {
      return weighted_sum(conv2d_forward(x, w, b, c.stride, c.pad), probe);
    };
    worst = std::max(worst, check_tensor(x, grad_x, loss));
    worst = std::max(worst, check_tensor(w, grad_w, loss));
    worst = std::max(worst, check_tensor(b, grad_b, loss));
  }
  return worst;
}

double check_dense(Rng& rng) {
  Tensor x = Tensor::uniform(rng, {3, 2, 2, 2}, -1, 1);  // exercises the flatten path
  Tensor w = Tensor::uniform(rng, {5, 8}, -1, 1);
  Tensor b = Tensor::uniform(rng, {5}, -1, 1);
  Tensor probe = Tensor::uniform(rng, {3, 5}, 0.5, 1.5);
  Tensor grad_w = Tensor::zeros(w.shape());
  Tensor grad_b = Tensor::zeros(b.shape());
  const Tensor grad_x = dense_backward(probe, x, w, grad_w, grad_b);
  const LossFn loss = [&] { return weighted_sum(dense_forward(x, w, b), probe); };
  double worst = check_tensor(x, grad_x, loss);
  worst = std::max(worst, check_tensor(w, grad_w, loss));
  worst = std::max(worst, check_tensor(b, grad_b, loss));
  return worst;
}

double check_bn(Rng& rng) {
  Tensor x = Tensor::uniform(rng, {4, 3, 2, 2}, -1, 1);
  Tensor gamma = Tensor::uniform(rng, {3}, 0.5, 1.5);
  Tensor beta = Tensor::uniform(rng, {3}, -0.5, 0.5);
  Tensor probe = Tensor::uniform(rng, x.shape(), 0.5, 1.5);

  BnState state;
  state.running_mean = Tensor::zeros({3});
  state.running_var = Tensor::full({3}, 1.0);
  BnCache cache;
  batchnorm_forward(x, gamma, beta, state, Mode::train, &cache);
  Tensor grad_gamma = Tensor::zeros(gamma.shape());
  Tensor grad_beta = Tensor::zeros(beta.shape());
  const Tensor grad_x = batchnorm_backward(probe, gamma, cache, grad_gamma, grad_beta);

  const LossFn loss = [&] {
    BnState scratch;
    scratch.running_mean = Tensor::zeros({3});
    scratch.running_var = Tensor::full({3}, 1.0);
    return weighted_sum(batchnorm_forward(x, gamma, beta, scratch, Mode::train, nullptr), probe);
  };
  double worst = check_tensor(x, grad_x, loss);
  worst = std::max(worst, check_tensor(gamma, grad_gamma, loss));
  worst = std::max(worst, check_tensor(beta, grad_beta, loss));
  return worst;
}

double check_elu(Rng& rng) {
  // keep inputs away from the kink at 0
  Tensor x({2, 3, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double magnitude = rng.uniform(0.1, 1.5);
    x[i] = rng.next_double() < 0.5 ? -magnitude : magnitude;
  }
  Tensor probe = Tensor::uniform(rng, x.shape(), 0.5, 1.5);
  const Tensor grad_x = elu_backward(probe, x);
  const LossFn loss = [&] { return weighted_sum(elu_forward(x), probe); };
  return check_tensor(x, grad_x, loss);
}

double check_maxpool(Rng& rng) {
  Tensor x = distinct_tensor(rng, {2, 3, 4, 4});
  auto [y0, cache] = maxpool2d_forward(x, 2, 2);
  Tensor probe = Tensor::uniform(rng, y0.shape(), 0.5, 1.5);
  const Tensor grad_x = maxpool2d_backward(probe, cache);
  const LossFn loss = [&] { return weighted_sum(maxpool2d_forward(x, 2, 2).first, probe); };
  return check_tensor(x, grad_x, loss);
}

double check_gap(Rng& rng) {
  Tensor x = Tensor::uniform(rng, {2, 3, 4, 4}, -1, 1);
  Tensor probe = Tensor::uniform(rng, {2, 3, 1, 1}, 0.5, 1.5);
  const Tensor grad_x = global_avg_pool_backward(probe, x.shape());
  const LossFn loss = [&] { return weighted_sum(global_avg_pool_forward(x), probe); };
  return check_tensor(x, grad_x, loss);
}

double check_softmax(Rng& rng) {
  Tensor logits = Tensor::uniform(rng, {4, 5}, -2, 2);
  std::vector<int> labels(4);
  for (int& label : labels) label = static_cast<int>(rng.next_below(5));
  const Tensor analytic = softmax_cross_entropy(logits, labels).grad_logits;
  const LossFn loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
  return check_tensor(logits, analytic, loss);
}

}  // namespace

std::vector<GradCheckResult> run_grad_checks(const std::string& op, std::uint64_t seed) {
  struct Suite {
    const char* name;
    double (*fn)(Rng&);
  };
  const Suite suites[] = {
      {"cmp", check_cmp},     {"conv", check_conv},       {"dense", check_dense},
      {"bn", check_bn},       {"elu", check_elu},         {"maxpool", check_maxpool},
      {"gap", check_gap},     {"softmax", check_softmax},
  };
  std::vector<GradCheckResult> results;
  for (std::size_t i = 0; i < std::size(suites); ++i) {
    const Suite& suite = suites[i];
    if (op != "all" && op != suite.name) continue;
    Rng rng = Rng(seed).fork(i);
    results.push_back({suite.name, suite.fn(rng)});
  }
  if (results.empty())
    throw ConfigError("unknown grad-check op '" + op +
                      "' (expected cmp, conv, dense, bn, elu, maxpool, gap, softmax, or all)");
  return results;
}

}  // namespace cmpnet
