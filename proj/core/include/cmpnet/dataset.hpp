#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmpnet/tensor.hpp"

namespace cmpnet {

struct SampleRef {
  std::string file;  // relative to the manifest's directory
  int label = 0;
  bool is_train = false;
};

// Manifest file: `key=value` header block, blank line, then one
// `relative_path<TAB>label<TAB>split` line per sample.
struct DatasetManifest {
  int num_classes = 0;
  int per_class_train = 0;
  int per_class_test = 0;
  int image_size = 0;
  int channels = 3;
  std::uint64_t seed = 0;
  std::string mean_image_file;
  std::vector<SampleRef> samples;
};

// Every class shares the same rendered vehicle scene; class identity lives
// only in three small high-frequency decal patches on the body, whose
// positions jitter per sample. Brightness, background texture, and the decal
// jitter make within-class variation larger than the between-class decal
// differences, which is what makes the task fine-grained.
DatasetManifest generate_dataset(const std::string& out_dir, std::uint64_t seed, int num_classes,
                                 int per_class_train, int per_class_test, int size);

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

struct Dataset {
  Tensor train_images;  // (num_train, 3, S, S)
  Tensor test_images;   // (num_test, 3, S, S)
  std::vector<int> train_labels;
  std::vector<int> test_labels;
  Tensor mean_image;  // (3, S, S), arithmetic mean of the train split
  int num_classes = 0;
  int image_size = 0;
};

Dataset load_dataset(const std::string& manifest_path);

/// The class template with no per-sample nuisance (no jitter, no texture,
/// unit brightness). Exposed so the fine-grained-ness of the generated data
/// can be measured against it.
Tensor render_canonical(std::uint64_t seed, int label, int size);

}  // namespace cmpnet
