#pragma once

#include <utility>
#include <vector>

#include "cmpnet/tensor.hpp"

namespace cmpnet {

// Channel max pooling maps (B, C, M, N) activations to (B, ceil(C/r), M, N)
// by taking, per spatial position, the max over a sliding window of k
// consecutive channels advanced with stride s. The window length is fixed by
// the other parameters:
//
//     k = C - s * (ceil(C/r) - 1)
//
// so the last window always ends at channel C-1. Windows overlap when k > s,
// tile exactly when k == s, and leave uncovered channels when k < s (the
// `gaps` flag below).
struct CmpConfig {
  int in_channels = 0;            // C
  double compression_factor = 0;  // r
  int stride = 0;                 // s
  int out_channels = 0;           // ceil(C/r)
  int kernel_size = 0;            // k
  bool gaps = false;              // k < s: some input channels belong to no window
};

/// Validates (C, r, s) and derives out_channels and kernel_size. C and s must
/// be integers > 1 and r a real > 1; a derived k < 1 is rejected.
CmpConfig make_cmp_config(int in_channels, double compression_factor, int stride);

/// The stride giving (near-)uniform window placement: floor(C / ceil(C/r)),
/// clamped to >= 2. Throws ConfigError when no stride > 1 yields a valid k.
int suggest_stride(int in_channels, double compression_factor);

// Per-output-element record of which input channel attained the max; shaped
// like the forward output. Backward routes gradients through these indices.
struct CmpCache {
  std::vector<int> out_shape;  // (B, out_channels, M, N)
  std::vector<int> argmax;     // flat, one entry per output element
};

std::pair<Tensor, CmpCache> cmp_forward(const Tensor& x, const CmpConfig& cfg);

/// Scatters each output gradient to its recorded argmax channel; channels
/// that were maximal in several overlapping windows accumulate every
/// contribution, all other channels receive zero.
Tensor cmp_backward(const Tensor& grad_y, const CmpCache& cache, const CmpConfig& cfg);

}  // namespace cmpnet
