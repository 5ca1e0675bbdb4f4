#include "cmpnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cmpnet {

namespace fs = std::filesystem;

namespace {

constexpr int kDecalSlots = 3;
constexpr int kDecalSide = 5;             // decal patches are 5x5
constexpr int kDecalJitter = 3;           // per-sample placement jitter in pixels
constexpr double kDecalAmplitude = 0.28;  // +- contrast of the decal cells
constexpr double kBrightnessJitter = 0.10;
constexpr int kTextureBlobs = 6;
constexpr double kTextureAmplitude = 0.10;

constexpr std::uint64_t kStyleTag = 0x517;
constexpr std::uint64_t kDecalTagBase = 0xDECA0000;

struct SceneStyle {
  double sky_top[3], sky_horizon[3], ground[3];
  double body[3], cabin[3], wheel[3];
};

SceneStyle scene_style(std::uint64_t seed) {
  Rng rng = Rng(seed).fork(kStyleTag);
  SceneStyle style;
  for (int c = 0; c < 3; ++c) style.sky_top[c] = rng.uniform(0.66, 0.78);
  for (int c = 0; c < 3; ++c) style.sky_horizon[c] = rng.uniform(0.50, 0.60);
  for (int c = 0; c < 3; ++c) style.ground[c] = rng.uniform(0.30, 0.40);
  for (int c = 0; c < 3; ++c) style.body[c] = rng.uniform(0.45, 0.62);
  for (int c = 0; c < 3; ++c) style.cabin[c] = style.body[c] * rng.uniform(0.60, 0.75);
  for (int c = 0; c < 3; ++c) style.wheel[c] = rng.uniform(0.08, 0.14);
  return style;
}

// Class identity: one 3x5x5 sign pattern per decal slot. High-frequency and
// zero-mean on average, so positional jitter washes it out of any pixel-space
// class centroid while local filters still see full contrast.
std::vector<double> decal_pattern(std::uint64_t seed, int label, int slot) {
  Rng rng = Rng(seed).fork(kDecalTagBase + static_cast<std::uint64_t>(label) * 16 +
                           static_cast<std::uint64_t>(slot));
  std::vector<double> pattern(3 * kDecalSide * kDecalSide);
  for (double& v : pattern) v = (rng.next_u64() & 1) ? kDecalAmplitude : -kDecalAmplitude;
  return pattern;
}

struct Nuisance {
  double brightness = 1.0;
  int decal_dx[kDecalSlots] = {0, 0, 0};
  int decal_dy[kDecalSlots] = {0, 0, 0};
  struct Blob {
    double cx, cy, amp, radius;
  };
  std::vector<Blob> blobs;
};

Nuisance draw_nuisance(Rng& rng, int size) {
  Nuisance n;
  n.brightness = rng.uniform(1.0 - kBrightnessJitter, 1.0 + kBrightnessJitter);
  for (int slot = 0; slot < kDecalSlots; ++slot) {
    n.decal_dx[slot] = static_cast<int>(rng.next_below(2 * kDecalJitter + 1)) - kDecalJitter;
    n.decal_dy[slot] = static_cast<int>(rng.next_below(2 * kDecalJitter + 1)) - kDecalJitter;
  }
  n.blobs.resize(kTextureBlobs);
  for (auto& blob : n.blobs) {
    blob.cx = rng.uniform(0, size);
    blob.cy = rng.uniform(0, size);
    blob.amp = rng.uniform(-kTextureAmplitude, kTextureAmplitude);
    blob.radius = rng.uniform(0.10 * size, 0.28 * size);
  }
  return n;
}

Tensor render_scene(std::uint64_t seed, int label, int size, const Nuisance& nuisance) {
  const SceneStyle style = scene_style(seed);
  const double s = static_cast<double>(size);
  Tensor img({3, size, size});

  const int horizon = static_cast<int>(0.58 * s);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      double value;
      if (y < horizon) {
        const double t = static_cast<double>(y) / horizon;
        value = style.sky_top[c] + t * (style.sky_horizon[c] - style.sky_top[c]);
      } else {
        value = style.ground[c];
      }
      for (int x = 0; x < size; ++x) img(c, y, x) = value;
    }
  }

  const int body_x0 = static_cast<int>(0.10 * s), body_x1 = static_cast<int>(0.90 * s);
  const int body_y0 = static_cast<int>(0.46 * s), body_y1 = static_cast<int>(0.76 * s);
  const int cabin_x0 = static_cast<int>(0.28 * s), cabin_x1 = static_cast<int>(0.66 * s);
  const int cabin_y0 = static_cast<int>(0.30 * s);
  for (int c = 0; c < 3; ++c) {
    for (int y = body_y0; y < body_y1; ++y)
      for (int x = body_x0; x < body_x1; ++x) img(c, y, x) = style.body[c];
    for (int y = cabin_y0; y < body_y0; ++y)
      for (int x = cabin_x0; x < cabin_x1; ++x) img(c, y, x) = style.cabin[c];
  }
  const double wheel_r = 0.09 * s;
  const double wheel_cy = 0.76 * s;
  for (double wheel_cx : {0.26 * s, 0.74 * s}) {
    const int y_lo = std::max(0, static_cast<int>(wheel_cy - wheel_r));
    const int y_hi = std::min(size - 1, static_cast<int>(wheel_cy + wheel_r));
    const int x_lo = std::max(0, static_cast<int>(wheel_cx - wheel_r));
    const int x_hi = std::min(size - 1, static_cast<int>(wheel_cx + wheel_r));
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = x - wheel_cx, dy = y - wheel_cy;
        if (dx * dx + dy * dy <= wheel_r * wheel_r)
          for (int c = 0; c < 3; ++c) img(c, y, x) = style.wheel[c];
      }
    }
  }

  const double slot_xs[kDecalSlots] = {0.25 * s, 0.50 * s, 0.75 * s};
  const double slot_y = 0.60 * s;
  const int margin = kDecalJitter;  // keep jittered patches inside the frame
  for (int slot = 0; slot < kDecalSlots; ++slot) {
    const std::vector<double> pattern = decal_pattern(seed, label, slot);
    int px = static_cast<int>(slot_xs[slot]) - kDecalSide / 2 + nuisance.decal_dx[slot];
    int py = static_cast<int>(slot_y) - kDecalSide / 2 + nuisance.decal_dy[slot];
    px = std::clamp(px, margin, size - kDecalSide - margin);
    py = std::clamp(py, margin, size - kDecalSide - margin);
    for (int c = 0; c < 3; ++c)
      for (int dy = 0; dy < kDecalSide; ++dy)
        for (int dx = 0; dx < kDecalSide; ++dx)
          img(c, py + dy, px + dx) +=
              pattern[static_cast<std::size_t>((c * kDecalSide + dy) * kDecalSide + dx)];
  }

  for (const auto& blob : nuisance.blobs) {
    const double inv = 1.0 / (2.0 * blob.radius * blob.radius);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x - blob.cx, dy = y - blob.cy;
        const double bump = blob.amp * std::exp(-(dx * dx + dy * dy) * inv);
        for (int c = 0; c < 3; ++c) img(c, y, x) += bump;
      }
    }
  }

  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = std::clamp(img[i] * nuisance.brightness, 0.0, 1.0);
  return img;
}

std::uint64_t sample_tag(bool is_train, int label, int index) {
  return (static_cast<std::uint64_t>(is_train ? 1 : 2) << 40) |
         (static_cast<std::uint64_t>(label) << 20) | static_cast<std::uint64_t>(index);
}

std::string sample_file(bool is_train, int label, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/c%03d_s%04d.cmpt", is_train ? "train" : "test", label,
                index);
  return buf;
}

}  // namespace

Tensor render_canonical(std::uint64_t seed, int label, int size) {
  return render_scene(seed, label, size, Nuisance{});
}

DatasetManifest generate_dataset(const std::string& out_dir, std::uint64_t seed, int num_classes,
                                 int per_class_train, int per_class_test, int size) {
  if (num_classes < 2) throw ConfigError("dataset requires num_classes >= 2");
  if (size < 16) throw ConfigError("dataset requires size >= 16");
  if (per_class_train < 1 || per_class_test < 1)
    throw ConfigError("dataset requires at least one sample per class and split");

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "train", ec);
  if (!ec) fs::create_directories(fs::path(out_dir) / "test", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.num_classes = num_classes;
  manifest.per_class_train = per_class_train;
  manifest.per_class_test = per_class_test;
  manifest.image_size = size;
  manifest.channels = 3;
  manifest.seed = seed;
  manifest.mean_image_file = "mean.cmpt";

  Tensor mean_sum({3, size, size});
  const Rng base(seed);
  for (const bool is_train : {true, false}) {
    const int per_class = is_train ? per_class_train : per_class_test;
    for (int label = 0; label < num_classes; ++label) {
      for (int index = 0; index < per_class; ++index) {
        Rng rng = base.fork(sample_tag(is_train, label, index));
        const Nuisance nuisance = draw_nuisance(rng, size);
        const Tensor img = render_scene(seed, label, size, nuisance);
        const std::string rel = sample_file(is_train, label, index);
        save_tensor((fs::path(out_dir) / rel).string(), img);
        manifest.samples.push_back({rel, label, is_train});
        if (is_train)
          for (std::size_t i = 0; i < img.size(); ++i) mean_sum[i] += img[i];
      }
    }
  }
  const double inv_train = 1.0 / static_cast<double>(num_classes * per_class_train);
  for (std::size_t i = 0; i < mean_sum.size(); ++i) mean_sum[i] *= inv_train;
  save_tensor((fs::path(out_dir) / manifest.mean_image_file).string(), mean_sum);

  write_manifest((fs::path(out_dir) / "manifest.txt").string(), manifest);
  return manifest;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "num_classes=" << manifest.num_classes << '\n';
  os << "per_class_train=" << manifest.per_class_train << '\n';
  os << "per_class_test=" << manifest.per_class_test << '\n';
  os << "image_size=" << manifest.image_size << '\n';
  os << "channels=" << manifest.channels << '\n';
  os << "seed=" << manifest.seed << '\n';
  os << "mean_image_file=" << manifest.mean_image_file << '\n';
  os << '\n';
  for (const auto& sample : manifest.samples)
    os << sample.file << '\t' << sample.label << '\t' << (sample.is_train ? "train" : "test")
       << '\n';
  os.close();
  if (!os) throw IoError("write failed for " + path);
}

namespace {

long long parse_int_field(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long parsed = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw FormatError("manifest field " + key + " has non-integer value '" + value + "'");
  }
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  DatasetManifest manifest;
  bool saw[7] = {};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) break;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("manifest header line missing '=': '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "num_classes") {
      manifest.num_classes = static_cast<int>(parse_int_field(key, value));
      saw[0] = true;
    } else if (key == "per_class_train") {
      manifest.per_class_train = static_cast<int>(parse_int_field(key, value));
      saw[1] = true;
    } else if (key == "per_class_test") {
      manifest.per_class_test = static_cast<int>(parse_int_field(key, value));
      saw[2] = true;
    } else if (key == "image_size") {
      manifest.image_size = static_cast<int>(parse_int_field(key, value));
      saw[3] = true;
    } else if (key == "channels") {
      manifest.channels = static_cast<int>(parse_int_field(key, value));
      saw[4] = true;
    } else if (key == "seed") {
      manifest.seed = static_cast<std::uint64_t>(parse_int_field(key, value));
      saw[5] = true;
    } else if (key == "mean_image_file") {
      manifest.mean_image_file = value;
      saw[6] = true;
    } else {
      throw FormatError("manifest has unknown key '" + key + "'");
    }
  }
  for (bool got : saw)
    if (!got) throw FormatError("manifest header incomplete in " + path);

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string file, label_text, split;
    if (!std::getline(fields, file, '\t') || !std::getline(fields, label_text, '\t') ||
        !std::getline(fields, split))
      throw FormatError("malformed manifest sample line: '" + line + "'");
    SampleRef sample;
    sample.file = file;
    sample.label = static_cast<int>(parse_int_field("label", label_text));
    if (split == "train")
      sample.is_train = true;
    else if (split == "test")
      sample.is_train = false;
    else
      throw FormatError("manifest sample '" + file + "' has unknown split '" + split + "'");
    if (sample.label < 0 || sample.label >= manifest.num_classes)
      throw FormatError("manifest sample '" + file + "' has label " +
                        std::to_string(sample.label) + " outside [0, " +
                        std::to_string(manifest.num_classes) + ")");
    manifest.samples.push_back(std::move(sample));
  }
  return manifest;
}

Dataset load_dataset(const std::string& manifest_path) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  if (manifest.channels != 3)
    throw FormatError("dataset must have 3 channels, manifest says " +
                      std::to_string(manifest.channels));

  int num_train = 0, num_test = 0;
  for (const auto& sample : manifest.samples) (sample.is_train ? num_train : num_test)++;
  if (num_train == 0 || num_test == 0)
    throw FormatError("dataset needs samples in both splits, got " + std::to_string(num_train) +
                      " train / " + std::to_string(num_test) + " test");

  Dataset data;
  data.num_classes = manifest.num_classes;
  data.image_size = manifest.image_size;
  const int size = manifest.image_size;
  data.train_images = Tensor({num_train, 3, size, size});
  data.test_images = Tensor({num_test, 3, size, size});
  data.train_labels.reserve(static_cast<std::size_t>(num_train));
  data.test_labels.reserve(static_cast<std::size_t>(num_test));

  const std::size_t image_elems = static_cast<std::size_t>(3) * size * size;
  std::size_t train_at = 0, test_at = 0;
  for (const auto& sample : manifest.samples) {
    Tensor img;
    try {
      img = load_tensor((dir / sample.file).string());
    } catch (const IoError& e) {
      throw FormatError("dataset sample '" + sample.file + "': " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("dataset sample '" + sample.file + "': " + e.what());
    }
    if (img.shape() != std::vector<int>{3, size, size})
      throw FormatError("dataset sample '" + sample.file + "' has shape " +
                        shape_to_string(img.shape()) + ", manifest expects (3," +
                        std::to_string(size) + "," + std::to_string(size) + ")");
    double* dst = sample.is_train ? data.train_images.data() + train_at * image_elems
                                  : data.test_images.data() + test_at * image_elems;
    std::copy(img.data(), img.data() + image_elems, dst);
    if (sample.is_train) {
      data.train_labels.push_back(sample.label);
      ++train_at;
    } else {
      data.test_labels.push_back(sample.label);
      ++test_at;
    }
  }

  try {
    data.mean_image = load_tensor((dir / manifest.mean_image_file).string());
  } catch (const IoError& e) {
    throw FormatError("dataset mean image '" + manifest.mean_image_file + "': " + e.what());
  }
  if (data.mean_image.shape() != std::vector<int>{3, size, size})
    throw FormatError("dataset mean image has shape " +
                      shape_to_string(data.mean_image.shape()) + ", expected (3," +
                      std::to_string(size) + "," + std::to_string(size) + ")");
  return data;
}

}  // namespace cmpnet
