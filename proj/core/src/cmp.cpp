#include "cmpnet/cmp.hpp"

#include <cmath>
#include <sstream>

namespace cmpnet {

namespace {

// ceil(C/r) with a snap-to-integer guard: r is a real, but every quotient
// that lands within 1e-9 of an integer is treated as that integer so that
// e.g. C=2208, r=16 can never produce 138.000000001 -> 139.
int derive_out_channels(int in_channels, double r) {
  double q = static_cast<double>(in_channels) / r;
  const double nearest = std::round(q);
  if (std::abs(q - nearest) < 1e-9) q = nearest;
  return static_cast<int>(std::ceil(q));
}

void check_cmp_args(int in_channels, double r, int stride, bool check_stride) {
  if (in_channels <= 1)
    throw ConfigError("cmp config requires integer C > 1, got C=" + std::to_string(in_channels));
  if (!(r > 1.0)) {
    std::ostringstream msg;
    msg << "cmp config requires real r > 1, got r=" << r;
    throw ConfigError(msg.str());
  }
  if (check_stride && stride <= 1)
    throw ConfigError("cmp config requires integer s > 1, got s=" + std::to_string(stride));
}

}  // namespace

CmpConfig make_cmp_config(int in_channels, double compression_factor, int stride) {
  check_cmp_args(in_channels, compression_factor, stride, true);
  const int out_channels = derive_out_channels(in_channels, compression_factor);
  const long long kernel =
      static_cast<long long>(in_channels) -
      static_cast<long long>(stride) * (static_cast<long long>(out_channels) - 1);
  if (kernel < 1) {
    std::ostringstream msg;
    msg << "invalid cmp config: C=" << in_channels << " r=" << compression_factor
        << " s=" << stride << " gives k=" << kernel << " (need 1 <= k <= C)";
    throw ConfigError(msg.str());
  }
  CmpConfig cfg;
  cfg.in_channels = in_channels;
  cfg.compression_factor = compression_factor;
  cfg.stride = stride;
  cfg.out_channels = out_channels;
  cfg.kernel_size = static_cast<int>(kernel);
  cfg.gaps = cfg.kernel_size < stride;
  return cfg;
}

int suggest_stride(int in_channels, double compression_factor) {
  check_cmp_args(in_channels, compression_factor, 0, false);
  const int out_channels = derive_out_channels(in_channels, compression_factor);
  // floor(C/out) spaces the windows uniformly; when that lands below 2 the
  // best we can do is the minimum legal stride
  int stride = in_channels / out_channels;
  if (stride < 2) stride = 2;
  const long long kernel =
      static_cast<long long>(in_channels) -
      static_cast<long long>(stride) * (static_cast<long long>(out_channels) - 1);
  if (kernel < 1) {
    std::ostringstream msg;
    msg << "no valid stride for C=" << in_channels << " r=" << compression_factor
        << ": even s=2 gives k=" << kernel;
    throw ConfigError(msg.str());
  }
  return stride;
}

std::pair<Tensor, CmpCache> cmp_forward(const Tensor& x, const CmpConfig& cfg) {
  if (x.rank() != 4)
    throw ShapeError("cmp_forward expects a (B,C,M,N) tensor, got " +
                     shape_to_string(x.shape()));
  if (x.dim(1) != cfg.in_channels)
    throw ShapeError("cmp_forward channel mismatch: input has " + std::to_string(x.dim(1)) +
                     " channels, config expects " + std::to_string(cfg.in_channels));
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int out_channels = cfg.out_channels, kernel = cfg.kernel_size, stride = cfg.stride;
  if (out_channels < 1 || kernel < 1 ||
      static_cast<long long>(out_channels - 1) * stride + kernel > channels)
    throw ShapeError("cmp config windows exceed channel count");

  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor y({batch, out_channels, height, width});
  CmpCache cache;
  cache.out_shape = y.shape();
  cache.argmax.resize(y.size());

  for (int b = 0; b < batch; ++b) {
    const double* xb = x.data() + static_cast<std::size_t>(b) * channels * plane;
    for (int i = 0; i < out_channels; ++i) {
      const int first = i * stride;
      double* yrow = y.data() + (static_cast<std::size_t>(b) * out_channels + i) * plane;
      int* arow = cache.argmax.data() + (static_cast<std::size_t>(b) * out_channels + i) * plane;
      const double* xc = xb + static_cast<std::size_t>(first) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        yrow[p] = xc[p];
        arow[p] = first;
      }
      for (int c = first + 1; c < first + kernel; ++c) {
        const double* xn = xb + static_cast<std::size_t>(c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          // strict > keeps the lowest channel index on ties
          if (xn[p] > yrow[p]) {
            yrow[p] = xn[p];
            arow[p] = c;
          }
        }
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

Tensor cmp_backward(const Tensor& grad_y, const CmpCache& cache, const CmpConfig& cfg) {
  if (grad_y.shape() != cache.out_shape)
    throw ShapeError("cmp_backward gradient shape " + shape_to_string(grad_y.shape()) +
                     " does not match cached forward shape " + shape_to_string(cache.out_shape));
  if (grad_y.size() != cache.argmax.size())
    throw ShapeError("cmp_backward cache size mismatch");
  const int batch = grad_y.dim(0), out_channels = grad_y.dim(1);
  const int height = grad_y.dim(2), width = grad_y.dim(3);
  if (out_channels != cfg.out_channels)
    throw ShapeError("cmp_backward config mismatch: gradient has " +
                     std::to_string(out_channels) + " channels, config expects " +
                     std::to_string(cfg.out_channels));
  const std::size_t plane = static_cast<std::size_t>(height) * width;

  Tensor grad_x({batch, cfg.in_channels, height, width});
  for (int b = 0; b < batch; ++b) {
    double* gxb = grad_x.data() + static_cast<std::size_t>(b) * cfg.in_channels * plane;
    for (int i = 0; i < out_channels; ++i) {
      const std::size_t base = (static_cast<std::size_t>(b) * out_channels + i) * plane;
      const double* gy = grad_y.data() + base;
      const int* arow = cache.argmax.data() + base;
      for (std::size_t p = 0; p < plane; ++p) {
        const int c = arow[p];
        if (c < 0 || c >= cfg.in_channels) throw ShapeError("cmp cache holds corrupt argmax index");
        gxb[static_cast<std::size_t>(c) * plane + p] += gy[p];
      }
    }
  }
  return grad_x;
}

}  // namespace cmpnet
