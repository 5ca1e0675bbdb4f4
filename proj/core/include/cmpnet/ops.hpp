#pragma once

#include <utility>
#include <vector>

#include "cmpnet/tensor.hpp"

namespace cmpnet {

enum class Mode { train, eval };

// Parameters of conv layers step at conv_lr_ratio times the FC learning rate.
enum class ParamGroup { conv, fc };

struct ParamTensor {
  Tensor value;
  Tensor grad;      // always shaped like value
  Tensor velocity;  // SGD momentum buffer, allocated on first optimizer step
  ParamGroup group = ParamGroup::fc;
};

ParamTensor make_param(Tensor value, ParamGroup group);

/// Uniform init in [-sqrt(1/fan_in), sqrt(1/fan_in)), the scheme used for all
/// conv and FC weights. Biases start at zero.
Tensor fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in);

// ---- convolution (cross-correlation, zero padding) ----

std::vector<int> conv2d_output_shape(const std::vector<int>& x_shape,
                                     const std::vector<int>& w_shape, int stride, int pad);
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
/// Returns grad_x; accumulates into grad_w and grad_b (callers zero them).
Tensor conv2d_backward(const Tensor& grad_y, const Tensor& x, const Tensor& w, int stride,
                       int pad, Tensor& grad_w, Tensor& grad_b);

// ---- spatial max pooling ----

struct MaxPoolCache {
  std::vector<int> in_shape;
  std::vector<int> argmax;  // flat spatial index (iy*W+ix) per output element
};

std::pair<Tensor, MaxPoolCache> maxpool2d_forward(const Tensor& x, int kernel = 2,
                                                  int stride = 2);
Tensor maxpool2d_backward(const Tensor& grad_y, const MaxPoolCache& cache);

// ---- global average pooling ----

Tensor global_avg_pool_forward(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& grad_y, const std::vector<int>& in_shape);

// ---- fully connected: y = flatten(x) W^T + b, W is (out, in) ----

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor dense_backward(const Tensor& grad_y, const Tensor& x, const Tensor& w, Tensor& grad_w,
                      Tensor& grad_b);

// ---- batch normalization over (batch, spatial) per channel ----

// Running statistics and hyperparameters; gamma/beta live with the other
// trainable parameters. Accepts (B,C) or (B,C,M,N) inputs. Uses population
// (biased) variance for both normalization and the running estimate.
struct BnState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;  // running = (1-momentum)*running + momentum*batch
  double epsilon = 1e-5;
};

struct BnCache {
  Tensor x_hat;
  std::vector<double> inv_std;  // per channel
  std::size_t reduce_count = 0;
};

Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnState& state,
                         Mode mode, BnCache* cache);
Tensor batchnorm_backward(const Tensor& grad_y, const Tensor& gamma, const BnCache& cache,
                          Tensor& grad_gamma, Tensor& grad_beta);

// ---- ELU ----

Tensor elu_forward(const Tensor& x, double alpha = 1.0);
Tensor elu_backward(const Tensor& grad_y, const Tensor& x, double alpha = 1.0);

// ---- dropout (inverted scaling) ----

struct DropoutCache {
  Tensor mask;  // 0 where dropped, 1/(1-p) where kept
};

Tensor dropout_forward(const Tensor& x, double p, Mode mode, Rng& rng, DropoutCache* cache);
Tensor dropout_backward(const Tensor& grad_y, const DropoutCache& cache);

// ---- softmax cross-entropy ----

struct SoftmaxXentResult {
  double loss = 0;     // mean over the batch
  Tensor grad_logits;  // (softmax - onehot) / B
};

SoftmaxXentResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace cmpnet
