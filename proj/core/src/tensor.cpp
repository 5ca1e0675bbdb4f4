#include "cmpnet/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

namespace cmpnet {

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ",";
    out << shape[i];
  }
  out << ")";
  return out.str();
}

std::size_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  std::size_t n = 1;
  for (int extent : shape) {
    if (extent <= 0)
      throw ShapeError("tensor extents must be positive, got shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)) {
  const std::size_t n = shape_numel(shape_);
  if (values.size() != n)
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_to_string(shape_));
  data_ = std::move(values);
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = value;
  return t;
}

Tensor Tensor::uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("uniform bounds require lo <= hi");
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul requires rank-2 operands, got " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dimensions differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  const int rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  Tensor out({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * inner;
    double* orow = out.data() + static_cast<std::size_t>(i) * cols;
    for (int k = 0; k < inner; ++k) {
      const double av = arow[k];
      const double* brow = b.data() + static_cast<std::size_t>(k) * cols;
      for (int j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + " requires equal shapes, got " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& t, double factor) {
  Tensor out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return out;
}

namespace {

constexpr char kMagic[4] = {'C', 'M', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v & 0xff),
                                  static_cast<unsigned char>((v >> 8) & 0xff),
                                  static_cast<unsigned char>((v >> 16) & 0xff),
                                  static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw FormatError("truncated tensor blob");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.empty()) throw ShapeError("cannot serialize an empty tensor");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int axis = 0; axis < t.rank(); ++axis)
    put_u32(os, static_cast<std::uint32_t>(t.dim(axis)));
  // x86-64 is little endian, but pack bytes explicitly so the format holds
  // everywhere
  std::vector<unsigned char> buf(t.size() * 8);
  const double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &p[i], 8);
    for (int byte = 0; byte < 8; ++byte)
      buf[i * 8 + static_cast<std::size_t>(byte)] =
          static_cast<unsigned char>((bits >> (8 * byte)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("truncated tensor blob (missing magic)");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic, expected CMPT");
  const std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw FormatError("unsupported tensor version " + std::to_string(version));
  const std::uint32_t rank = get_u32(is);
  if (rank < 1 || rank > 4) throw FormatError("tensor rank out of range: " + std::to_string(rank));
  std::vector<int> shape(rank);
  std::size_t numel = 1;
  for (std::uint32_t axis = 0; axis < rank; ++axis) {
    const std::uint32_t extent = get_u32(is);
    if (extent == 0 || extent > (1u << 30)) throw FormatError("tensor extent out of range");
    shape[axis] = static_cast<int>(extent);
    numel *= extent;
    if (numel > (std::size_t{1} << 33)) throw FormatError("tensor payload unreasonably large");
  }
  std::vector<unsigned char> buf(numel * 8);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError("truncated tensor blob (payload)");
  std::vector<double> values(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    std::uint64_t bits = 0;
    for (int byte = 0; byte < 8; ++byte)
      bits |= static_cast<std::uint64_t>(buf[i * 8 + static_cast<std::size_t>(byte)])
              << (8 * byte);
    std::memcpy(&values[i], &bits, 8);
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tensor(os, t);
  os.close();
  if (!os) throw IoError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  Tensor t = read_tensor(is);
  is.peek();
  if (!is.eof()) throw FormatError("trailing bytes after tensor blob in " + path);
  return t;
}

}  // namespace cmpnet
