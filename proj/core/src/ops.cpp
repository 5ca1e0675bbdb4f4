#include "cmpnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmpnet/parallel.hpp"

namespace cmpnet {

ParamTensor make_param(Tensor value, ParamGroup group) {
  ParamTensor p;
  p.grad = Tensor::zeros(value.shape());
  p.value = std::move(value);
  p.group = group;
  return p;
}

Tensor fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform(rng, std::move(shape), -bound, bound);
}

namespace {

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " expects rank-" + std::to_string(rank) +
                     " tensor, got " + shape_to_string(t.shape()));
}

}  // namespace

// ---- conv2d ----

std::vector<int> conv2d_output_shape(const std::vector<int>& x_shape,
                                     const std::vector<int>& w_shape, int stride, int pad) {
  if (x_shape.size() != 4) throw ShapeError("conv2d input must be (B,Cin,H,W)");
  if (w_shape.size() != 4) throw ShapeError("conv2d weight must be (Cout,Cin,kh,kw)");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d requires stride >= 1 and pad >= 0");
  if (x_shape[1] != w_shape[1])
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(x_shape) + " weight " +
                     shape_to_string(w_shape));
  const int out_h = (x_shape[2] + 2 * pad - w_shape[2]) / stride + 1;
  const int out_w = (x_shape[3] + 2 * pad - w_shape[3]) / stride + 1;
  if (x_shape[2] + 2 * pad < w_shape[2] || x_shape[3] + 2 * pad < w_shape[3] || out_h < 1 ||
      out_w < 1)
    throw ShapeError("conv2d kernel does not fit input " + shape_to_string(x_shape) +
                     " with pad " + std::to_string(pad));
  return {x_shape[0], w_shape[0], out_h, out_w};
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const std::vector<int> out_shape = conv2d_output_shape(x.shape(), w.shape(), stride, pad);
  require_rank(b, 1, "conv2d bias");
  if (b.dim(0) != w.dim(0)) throw ShapeError("conv2d bias size must equal output channels");
  const int batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int out_h = out_shape[2], out_w = out_shape[3];
  Tensor y(out_shape);

  const std::size_t xplane = static_cast<std::size_t>(height) * width;
  const std::size_t yplane = static_cast<std::size_t>(out_h) * out_w;
  parallel_for(batch, [&](int bi) {
    const double* xb = x.data() + static_cast<std::size_t>(bi) * cin * xplane;
    double* yb = y.data() + static_cast<std::size_t>(bi) * cout * yplane;
    for (int co = 0; co < cout; ++co) {
      double* yc = yb + static_cast<std::size_t>(co) * yplane;
      const double bias = b[static_cast<std::size_t>(co)];
      for (std::size_t p = 0; p < yplane; ++p) yc[p] = bias;
      for (int ci = 0; ci < cin; ++ci) {
        const double* xc = xb + static_cast<std::size_t>(ci) * xplane;
        const double* wrow =
            w.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = wrow[static_cast<std::size_t>(ky) * kw + kx];
            if (wv == 0.0) continue;
            for (int oy = 0; oy < out_h; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= height) continue;
              const double* xrow = xc + static_cast<std::size_t>(iy) * width;
              double* yrow = yc + static_cast<std::size_t>(oy) * out_w;
              for (int ox = 0; ox < out_w; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= width) continue;
                yrow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  });
  return y;
}

Tensor conv2d_backward(const Tensor& grad_y, const Tensor& x, const Tensor& w, int stride,
                       int pad, Tensor& grad_w, Tensor& grad_b) {
  const std::vector<int> out_shape = conv2d_output_shape(x.shape(), w.shape(), stride, pad);
  if (grad_y.shape() != out_shape)
    throw ShapeError("conv2d_backward gradient shape " + shape_to_string(grad_y.shape()) +
                     " does not match forward output " + shape_to_string(out_shape));
  if (!grad_w.same_shape(w)) throw ShapeError("conv2d_backward grad_w shape mismatch");
  if (grad_b.rank() != 1 || grad_b.dim(0) != w.dim(0))
    throw ShapeError("conv2d_backward grad_b shape mismatch");

  const int batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int out_h = out_shape[2], out_w = out_shape[3];
  const std::size_t xplane = static_cast<std::size_t>(height) * width;
  const std::size_t yplane = static_cast<std::size_t>(out_h) * out_w;

  Tensor grad_x(x.shape());
  // per-sample kernel; gw/gb point either at the shared gradients (serial) or
  // at per-sample partials that get reduced in batch order, so the threaded
  // path is bit-identical to the serial one
  const auto backward_sample = [&](int bi, double* gw, double* gb) {
    const double* xb = x.data() + static_cast<std::size_t>(bi) * cin * xplane;
    const double* gyb = grad_y.data() + static_cast<std::size_t>(bi) * cout * yplane;
    double* gxb = grad_x.data() + static_cast<std::size_t>(bi) * cin * xplane;
    for (int co = 0; co < cout; ++co) {
      const double* gyc = gyb + static_cast<std::size_t>(co) * yplane;
      double gb_acc = 0;
      for (std::size_t p = 0; p < yplane; ++p) gb_acc += gyc[p];
      gb[static_cast<std::size_t>(co)] += gb_acc;
      for (int ci = 0; ci < cin; ++ci) {
        const double* xc = xb + static_cast<std::size_t>(ci) * xplane;
        double* gxc = gxb + static_cast<std::size_t>(ci) * xplane;
        const double* wrow = w.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        double* gwrow = gw + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = wrow[static_cast<std::size_t>(ky) * kw + kx];
            double gw_acc = 0;
            for (int oy = 0; oy < out_h; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= height) continue;
              const double* xrow = xc + static_cast<std::size_t>(iy) * width;
              double* gxrow = gxc + static_cast<std::size_t>(iy) * width;
              const double* gyrow = gyc + static_cast<std::size_t>(oy) * out_w;
              for (int ox = 0; ox < out_w; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= width) continue;
                gw_acc += gyrow[ox] * xrow[ix];
                gxrow[ix] += wv * gyrow[ox];
              }
            }
            gwrow[static_cast<std::size_t>(ky) * kw + kx] += gw_acc;
          }
        }
      }
    }
  };

  if (max_threads() <= 1) {
    for (int bi = 0; bi < batch; ++bi)
      backward_sample(bi, grad_w.data(), grad_b.data());
  } else {
    std::vector<Tensor> gw_partial(static_cast<std::size_t>(batch));
    std::vector<Tensor> gb_partial(static_cast<std::size_t>(batch));
    for (int bi = 0; bi < batch; ++bi) {
      gw_partial[static_cast<std::size_t>(bi)] = Tensor::zeros(w.shape());
      gb_partial[static_cast<std::size_t>(bi)] = Tensor::zeros({cout});
    }
    parallel_for(batch, [&](int bi) {
      backward_sample(bi, gw_partial[static_cast<std::size_t>(bi)].data(),
                      gb_partial[static_cast<std::size_t>(bi)].data());
    });
    for (int bi = 0; bi < batch; ++bi) {
      const Tensor& gw = gw_partial[static_cast<std::size_t>(bi)];
      const Tensor& gb = gb_partial[static_cast<std::size_t>(bi)];
      for (std::size_t i = 0; i < grad_w.size(); ++i) grad_w[i] += gw[i];
      for (std::size_t i = 0; i < grad_b.size(); ++i) grad_b[i] += gb[i];
    }
  }
  return grad_x;
}

// ---- maxpool2d ----

std::pair<Tensor, MaxPoolCache> maxpool2d_forward(const Tensor& x, int kernel, int stride) {
  require_rank(x, 4, "maxpool2d");
  if (kernel < 1 || stride < 1) throw ConfigError("maxpool2d requires kernel, stride >= 1");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  if (height < kernel || width < kernel)
    throw ShapeError("maxpool2d window does not fit input " + shape_to_string(x.shape()));
  const int out_h = (height - kernel) / stride + 1;
  const int out_w = (width - kernel) / stride + 1;

  Tensor y({batch, channels, out_h, out_w});
  MaxPoolCache cache;
  cache.in_shape = x.shape();
  cache.argmax.resize(y.size());

  std::size_t o = 0;
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const double* plane =
          x.data() + (static_cast<std::size_t>(b) * channels + c) * height * width;
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox, ++o) {
          const int y0 = oy * stride, x0 = ox * stride;
          double best = plane[static_cast<std::size_t>(y0) * width + x0];
          int best_idx = y0 * width + x0;
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const int idx = (y0 + ky) * width + (x0 + kx);
              const double v = plane[static_cast<std::size_t>(idx)];
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          y[o] = best;
          cache.argmax[o] = best_idx;
        }
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

Tensor maxpool2d_backward(const Tensor& grad_y, const MaxPoolCache& cache) {
  require_rank(grad_y, 4, "maxpool2d_backward");
  if (grad_y.size() != cache.argmax.size())
    throw ShapeError("maxpool2d_backward cache does not match gradient shape");
  const int batch = grad_y.dim(0), channels = grad_y.dim(1);
  const int height = cache.in_shape[2], width = cache.in_shape[3];
  if (batch != cache.in_shape[0] || channels != cache.in_shape[1])
    throw ShapeError("maxpool2d_backward batch/channel mismatch");
  Tensor grad_x(cache.in_shape);
  const std::size_t in_plane = static_cast<std::size_t>(height) * width;
  const std::size_t out_plane = grad_y.size() / (static_cast<std::size_t>(batch) * channels);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t bc = static_cast<std::size_t>(b) * channels + c;
      double* gx = grad_x.data() + bc * in_plane;
      const double* gy = grad_y.data() + bc * out_plane;
      const int* am = cache.argmax.data() + bc * out_plane;
      for (std::size_t p = 0; p < out_plane; ++p)
        gx[static_cast<std::size_t>(am[p])] += gy[p];
    }
  }
  return grad_x;
}

// ---- global average pooling ----

Tensor global_avg_pool_forward(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const int batch = x.dim(0), channels = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({batch, channels, 1, 1});
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const double* p = x.data() + (static_cast<std::size_t>(b) * channels + c) * plane;
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      y(b, c, 0, 0) = sum / static_cast<double>(plane);
    }
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& grad_y, const std::vector<int>& in_shape) {
  require_rank(grad_y, 4, "global_avg_pool_backward");
  if (in_shape.size() != 4 || grad_y.dim(0) != in_shape[0] || grad_y.dim(1) != in_shape[1] ||
      grad_y.dim(2) != 1 || grad_y.dim(3) != 1)
    throw ShapeError("global_avg_pool_backward shape mismatch");
  const int batch = in_shape[0], channels = in_shape[1];
  const std::size_t plane = static_cast<std::size_t>(in_shape[2]) * in_shape[3];
  Tensor grad_x(in_shape);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const double g = grad_y(b, c, 0, 0) / static_cast<double>(plane);
      double* p = grad_x.data() + (static_cast<std::size_t>(b) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = g;
    }
  }
  return grad_x;
}

// ---- dense ----

namespace {

std::size_t flat_features(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("dense expects a batched tensor");
  return x.size() / static_cast<std::size_t>(x.dim(0));
}

}  // namespace

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(w, 2, "dense weight");
  require_rank(b, 1, "dense bias");
  const std::size_t features = flat_features(x);
  const int batch = x.dim(0), out = w.dim(0);
  if (static_cast<std::size_t>(w.dim(1)) != features)
    throw ShapeError("dense weight expects " + std::to_string(w.dim(1)) + " inputs, got " +
                     std::to_string(features));
  if (b.dim(0) != out) throw ShapeError("dense bias size must equal output units");
  Tensor y({batch, out});
  for (int bi = 0; bi < batch; ++bi) {
    const double* xrow = x.data() + static_cast<std::size_t>(bi) * features;
    double* yrow = y.data() + static_cast<std::size_t>(bi) * out;
    for (int o = 0; o < out; ++o) {
      const double* wrow = w.data() + static_cast<std::size_t>(o) * features;
      double acc = b[static_cast<std::size_t>(o)];
      for (std::size_t f = 0; f < features; ++f) acc += xrow[f] * wrow[f];
      yrow[o] = acc;
    }
  }
  return y;
}

Tensor dense_backward(const Tensor& grad_y, const Tensor& x, const Tensor& w, Tensor& grad_w,
                      Tensor& grad_b) {
  require_rank(grad_y, 2, "dense_backward gradient");
  const std::size_t features = flat_features(x);
  const int batch = x.dim(0), out = w.dim(0);
  if (grad_y.dim(0) != batch || grad_y.dim(1) != out)
    throw ShapeError("dense_backward gradient shape mismatch");
  if (!grad_w.same_shape(w) || grad_b.rank() != 1 || grad_b.dim(0) != out)
    throw ShapeError("dense_backward parameter gradient shape mismatch");
  Tensor grad_x(x.shape());
  for (int bi = 0; bi < batch; ++bi) {
    const double* xrow = x.data() + static_cast<std::size_t>(bi) * features;
    const double* gyrow = grad_y.data() + static_cast<std::size_t>(bi) * out;
    double* gxrow = grad_x.data() + static_cast<std::size_t>(bi) * features;
    for (int o = 0; o < out; ++o) {
      const double g = gyrow[o];
      if (g == 0.0) continue;
      const double* wrow = w.data() + static_cast<std::size_t>(o) * features;
      double* gwrow = grad_w.data() + static_cast<std::size_t>(o) * features;
      for (std::size_t f = 0; f < features; ++f) {
        gxrow[f] += g * wrow[f];
        gwrow[f] += g * xrow[f];
      }
      grad_b[static_cast<std::size_t>(o)] += g;
    }
  }
  return grad_x;
}

// ---- batch normalization ----

namespace {

struct BnDims {
  int batch, channels;
  std::size_t plane;  // spatial elements per channel (1 for rank-2 input)
};

BnDims bn_dims(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), static_cast<std::size_t>(x.dim(2)) * x.dim(3)};
  throw ShapeError("batchnorm expects a (B,C) or (B,C,M,N) tensor, got " +
                   shape_to_string(x.shape()));
}

}  // namespace

Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnState& state,
                         Mode mode, BnCache* cache) {
  const BnDims d = bn_dims(x);
  if (gamma.rank() != 1 || gamma.dim(0) != d.channels || !beta.same_shape(gamma))
    throw ShapeError("batchnorm gamma/beta must be per-channel vectors");
  if (!state.running_mean.same_shape(gamma) || !state.running_var.same_shape(gamma))
    throw ShapeError("batchnorm running stats shape mismatch");

  const std::size_t n = static_cast<std::size_t>(d.batch) * d.plane;
  const std::size_t chan_stride = static_cast<std::size_t>(d.channels) * d.plane;
  Tensor y(x.shape());
  if (cache) {
    cache->x_hat = Tensor(x.shape());
    cache->inv_std.assign(static_cast<std::size_t>(d.channels), 0.0);
    cache->reduce_count = n;
  }

  for (int c = 0; c < d.channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0;
      for (int b = 0; b < d.batch; ++b) {
        const double* p = x.data() + b * chan_stride + static_cast<std::size_t>(c) * d.plane;
        for (std::size_t i = 0; i < d.plane; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(n);
      double sq = 0;
      for (int b = 0; b < d.batch; ++b) {
        const double* p = x.data() + b * chan_stride + static_cast<std::size_t>(c) * d.plane;
        for (std::size_t i = 0; i < d.plane; ++i) {
          const double dlt = p[i] - mean;
          sq += dlt * dlt;
        }
      }
      var = sq / static_cast<double>(n);
      state.running_mean[static_cast<std::size_t>(c)] =
          (1.0 - state.momentum) * state.running_mean[static_cast<std::size_t>(c)] +
          state.momentum * mean;
      state.running_var[static_cast<std::size_t>(c)] =
          (1.0 - state.momentum) * state.running_var[static_cast<std::size_t>(c)] +
          state.momentum * var;
    } else {
      mean = state.running_mean[static_cast<std::size_t>(c)];
      var = state.running_var[static_cast<std::size_t>(c)];
    }
    const double inv_std = 1.0 / std::sqrt(var + state.epsilon);
    const double g = gamma[static_cast<std::size_t>(c)];
    const double bt = beta[static_cast<std::size_t>(c)];
    if (cache) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
    for (int b = 0; b < d.batch; ++b) {
      const std::size_t off = b * chan_stride + static_cast<std::size_t>(c) * d.plane;
      const double* p = x.data() + off;
      double* py = y.data() + off;
      double* ph = cache ? cache->x_hat.data() + off : nullptr;
      for (std::size_t i = 0; i < d.plane; ++i) {
        const double x_hat = (p[i] - mean) * inv_std;
        if (ph) ph[i] = x_hat;
        py[i] = g * x_hat + bt;
      }
    }
  }
  return y;
}

Tensor batchnorm_backward(const Tensor& grad_y, const Tensor& gamma, const BnCache& cache,
                          Tensor& grad_gamma, Tensor& grad_beta) {
  if (cache.x_hat.empty()) throw ShapeError("batchnorm_backward requires a train-mode cache");
  if (!grad_y.same_shape(cache.x_hat)) throw ShapeError("batchnorm_backward shape mismatch");
  const BnDims d = bn_dims(grad_y);
  if (!grad_gamma.same_shape(gamma) || !grad_beta.same_shape(gamma))
    throw ShapeError("batchnorm_backward parameter gradient shape mismatch");

  const double n = static_cast<double>(cache.reduce_count);
  const std::size_t chan_stride = static_cast<std::size_t>(d.channels) * d.plane;
  Tensor grad_x(grad_y.shape());
  for (int c = 0; c < d.channels; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int b = 0; b < d.batch; ++b) {
      const std::size_t off = b * chan_stride + static_cast<std::size_t>(c) * d.plane;
      const double* gy = grad_y.data() + off;
      const double* xh = cache.x_hat.data() + off;
      for (std::size_t i = 0; i < d.plane; ++i) {
        sum_dy += gy[i];
        sum_dy_xhat += gy[i] * xh[i];
      }
    }
    grad_beta[static_cast<std::size_t>(c)] += sum_dy;
    grad_gamma[static_cast<std::size_t>(c)] += sum_dy_xhat;
    const double scale =
        gamma[static_cast<std::size_t>(c)] * cache.inv_std[static_cast<std::size_t>(c)] / n;
    for (int b = 0; b < d.batch; ++b) {
      const std::size_t off = b * chan_stride + static_cast<std::size_t>(c) * d.plane;
      const double* gy = grad_y.data() + off;
      const double* xh = cache.x_hat.data() + off;
      double* gx = grad_x.data() + off;
      for (std::size_t i = 0; i < d.plane; ++i)
        gx[i] = scale * (n * gy[i] - sum_dy - xh[i] * sum_dy_xhat);
    }
  }
  return grad_x;
}

// ---- ELU ----

Tensor elu_forward(const Tensor& x, double alpha) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] <= 0.0) y[i] = alpha * (std::exp(y[i]) - 1.0);
  return y;
}

Tensor elu_backward(const Tensor& grad_y, const Tensor& x, double alpha) {
  if (!grad_y.same_shape(x)) throw ShapeError("elu_backward shape mismatch");
  Tensor grad_x = grad_y;
  for (std::size_t i = 0; i < grad_x.size(); ++i)
    if (x[i] <= 0.0) grad_x[i] *= alpha * std::exp(x[i]);
  return grad_x;
}

// ---- dropout ----

Tensor dropout_forward(const Tensor& x, double p, Mode mode, Rng& rng, DropoutCache* cache) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (mode == Mode::eval) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = rng.next_double() >= p ? keep_scale : 0.0;
    mask[i] = keep;
    y[i] = x[i] * keep;
  }
  if (cache) cache->mask = std::move(mask);
  return y;
}

Tensor dropout_backward(const Tensor& grad_y, const DropoutCache& cache) {
  if (!grad_y.same_shape(cache.mask)) throw ShapeError("dropout_backward shape mismatch");
  Tensor grad_x = grad_y;
  for (std::size_t i = 0; i < grad_x.size(); ++i) grad_x[i] *= cache.mask[i];
  return grad_x;
}

// ---- softmax cross-entropy ----

SoftmaxXentResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(batch))
    throw ShapeError("softmax_cross_entropy needs one label per batch row");

  SoftmaxXentResult result;
  result.grad_logits = Tensor(logits.shape());
  double total = 0;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (int b = 0; b < batch; ++b) {
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= classes)
      throw ShapeError("label " + std::to_string(label) + " out of range for " +
                       std::to_string(classes) + " classes");
    const double* row = logits.data() + static_cast<std::size_t>(b) * classes;
    double* grow = result.grad_logits.data() + static_cast<std::size_t>(b) * classes;
    double max_logit = row[0];
    for (int c = 1; c < classes; ++c) max_logit = std::max(max_logit, row[c]);
    double sum_exp = 0;
    for (int c = 0; c < classes; ++c) sum_exp += std::exp(row[c] - max_logit);
    const double log_sum = max_logit + std::log(sum_exp);
    total += log_sum - row[label];
    for (int c = 0; c < classes; ++c) {
      const double softmax = std::exp(row[c] - max_logit) / sum_exp;
      grow[c] = (softmax - (c == label ? 1.0 : 0.0)) * inv_batch;
    }
  }
  result.loss = total * inv_batch;
  return result;
}

}  // namespace cmpnet
