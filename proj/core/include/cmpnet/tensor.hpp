#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmpnet/errors.hpp"
#include "cmpnet/rng.hpp"

namespace cmpnet {

// Dense row-major array of f64, rank 1..4. Four-dimensional activations are
// laid out (batch, channel, height, width), last axis fastest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor uniform(Rng& rng, std::vector<int> shape, double lo, double hi);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(int i0) { return data_[static_cast<std::size_t>(i0)]; }
  double operator()(int i0) const { return data_[static_cast<std::size_t>(i0)]; }
  double& operator()(int i0, int i1) {
    return data_[static_cast<std::size_t>(i0) * shape_[1] + i1];
  }
  double operator()(int i0, int i1) const {
    return data_[static_cast<std::size_t>(i0) * shape_[1] + i1];
  }
  double& operator()(int i0, int i1, int i2) {
    return data_[(static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
  }
  double operator()(int i0, int i1, int i2) const {
    return data_[(static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
  }
  double& operator()(int i0, int i1, int i2, int i3) {
    return data_[((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] +
                 i3];
  }
  double operator()(int i0, int i1, int i2, int i3) const {
    return data_[((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] +
                 i3];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);  // validates rank 1..4, extents > 0

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);

template <class F>
Tensor map(const Tensor& t, F f) {
  Tensor out = t;
  double* p = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) p[i] = f(p[i]);
  return out;
}

// Binary tensor blob: magic "CMPT", u32 version=1, u32 rank, rank x u32
// extents, then the row-major payload as little-endian f64.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);  // whole file must be a single blob

}  // namespace cmpnet
