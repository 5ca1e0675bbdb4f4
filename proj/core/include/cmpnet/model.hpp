#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmpnet/cmp.hpp"
#include "cmpnet/ops.hpp"
#include "cmpnet/tensor.hpp"

namespace cmpnet {

enum class LayerKind { conv, maxpool, gap, cmp, dense, bn, elu, dropout };

struct LayerSpec {
  LayerKind kind = LayerKind::elu;
  // conv and maxpool
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  // cmp; r == 1 builds an identity passthrough (out == in, one channel per
  // window), which the kernel-size law cannot express with s > 1; useful
  // for baseline-equivalence runs
  double r = 0;
  int s = 0;
  // dense
  int units = 0;
  // dropout
  double p = 0.5;
};

LayerSpec conv_layer(int out_channels, int kernel = 3, int stride = 1, int pad = 1);
LayerSpec maxpool_layer(int kernel = 2, int stride = 2);
LayerSpec gap_layer();
LayerSpec cmp_layer(double r, int s);
LayerSpec dense_layer(int units);
LayerSpec bn_layer();
LayerSpec elu_layer();
LayerSpec dropout_layer(double p = 0.5);

// The three structural families studied: GAP head, spatial head (no GAP),
// and spatial head with channel max pooling in front of the classifier.
enum class Variant { baseline_gap, baseline_wogap, cmp };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelSpec {
  std::vector<LayerSpec> layers;
  int num_classes = 0;
  Variant variant = Variant::baseline_wogap;
  int input_channels = 3;
  int input_size = 32;  // square inputs
};

/// The reference desk-scale network: four conv blocks, optional channel max
/// pooling, then FC -> BN -> dropout -> ELU -> FC. Pass s = 0 to derive the
/// stride with suggest_stride.
ModelSpec toycar_spec(Variant variant, int num_classes = 8, int input_size = 32, double r = 4,
                      int s = 4, int hidden = 64);

/// Classifier head alone on a C x spatial x spatial feature volume, matching
/// the published head geometries (e.g. C=2208, spatial=7, hidden=256).
ModelSpec head_spec(Variant variant, int channels, int spatial, int hidden, int num_classes,
                    double r = 0, int s = 0);

// Shape propagation result for one layer, computed during validation.
struct LayerPlan {
  std::vector<int> in_shape;   // without the batch axis
  std::vector<int> out_shape;  // without the batch axis
  CmpConfig cmp;               // populated for cmp layers
};

/// Validates layer compatibility and the variant's structural invariants;
/// throws ConfigError/ShapeError naming the offending layer.
std::vector<LayerPlan> plan_model(const ModelSpec& spec);

struct ModelState {
  std::map<std::string, ParamTensor> params;  // stable names, e.g. "layer00.conv.weight"
  std::map<std::string, BnState> bn_states;   // keyed by layer id, e.g. "layer05.bn"
  Rng rng{0};                                 // consumed by dropout draws during training
};

ModelState build_model(const ModelSpec& spec, Rng rng);

struct LayerCache {
  Tensor input;
  MaxPoolCache pool;
  CmpCache cmp;
  BnCache bn;
  DropoutCache dropout;
  std::vector<int> in_shape;
};

struct ForwardResult {
  Tensor logits;
  std::vector<LayerCache> caches;
};

ForwardResult forward(ModelState& state, const ModelSpec& spec, const Tensor& x, Mode mode);

/// Fills every ParamTensor.grad (overwriting previous contents) by running
/// the chain backward from grad_logits.
void backward(ModelState& state, const ModelSpec& spec, const std::vector<LayerCache>& caches,
              const Tensor& grad_logits);

struct ParamReport {
  std::vector<std::pair<std::string, long long>> per_layer;
  long long total = 0;
  long long fc1_in_features = 0;  // input features of the first dense layer
  long long fc1_weights = 0;      // weight count of the first dense layer
  long long fc1_params = 0;       // weights + bias
};

ParamReport count_parameters(const ModelSpec& spec);

// Model file: UTF-8 header with one "name shape offset" line per tensor,
// a blank line, then the CMPT blobs at the stated offsets (relative to the
// first byte after the blank line).
void save_model(const ModelState& state, const std::string& path);
ModelState load_model(const std::string& path, const ModelSpec& spec);

std::string layer_id(int index);

}  // namespace cmpnet
