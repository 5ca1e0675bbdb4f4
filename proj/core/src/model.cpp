#include "cmpnet/model.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cmpnet {

LayerSpec conv_layer(int out_channels, int kernel, int stride, int pad) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerSpec maxpool_layer(int kernel, int stride) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

LayerSpec gap_layer() {
  LayerSpec l;
  l.kind = LayerKind::gap;
  return l;
}

LayerSpec cmp_layer(double r, int s) {
  LayerSpec l;
  l.kind = LayerKind::cmp;
  l.r = r;
  l.s = s;
  return l;
}

LayerSpec dense_layer(int units) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.units = units;
  return l;
}

LayerSpec bn_layer() {
  LayerSpec l;
  l.kind = LayerKind::bn;
  return l;
}

LayerSpec elu_layer() {
  LayerSpec l;
  l.kind = LayerKind::elu;
  return l;
}

LayerSpec dropout_layer(double p) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.p = p;
  return l;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline_gap: return "baseline";
    case Variant::baseline_wogap: return "wogap";
    case Variant::cmp: return "cmp";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline_gap;
  if (name == "wogap") return Variant::baseline_wogap;
  if (name == "cmp") return Variant::cmp;
  throw ConfigError("unknown variant '" + name + "' (expected baseline, wogap, or cmp)");
}

namespace {

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::gap: return "gap";
    case LayerKind::cmp: return "cmp";
    case LayerKind::dense: return "dense";
    case LayerKind::bn: return "bn";
    case LayerKind::elu: return "elu";
    case LayerKind::dropout: return "dropout";
  }
  return "?";
}

[[noreturn]] void layer_error(int index, LayerKind kind, const std::string& what) {
  throw ConfigError(layer_id(index) + " (" + kind_name(kind) + "): " + what);
}

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

void append_head(std::vector<LayerSpec>& layers, int hidden, int num_classes) {
  layers.push_back(dense_layer(hidden));
  layers.push_back(bn_layer());
  layers.push_back(dropout_layer(0.5));
  layers.push_back(elu_layer());
  layers.push_back(dense_layer(num_classes));
}

}  // namespace

std::string layer_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%02d", index);
  return buf;
}

ModelSpec toycar_spec(Variant variant, int num_classes, int input_size, double r, int s,
                      int hidden) {
  constexpr int kWidths[4] = {8, 16, 32, 32};
  ModelSpec spec;
  spec.variant = variant;
  spec.num_classes = num_classes;
  spec.input_channels = 3;
  spec.input_size = input_size;
  for (int block = 0; block < 4; ++block) {
    spec.layers.push_back(conv_layer(kWidths[block]));
    spec.layers.push_back(elu_layer());
    if (block < 3) spec.layers.push_back(maxpool_layer());
  }
  if (variant == Variant::cmp) {
    if (s == 0) s = suggest_stride(kWidths[3], r);
    spec.layers.push_back(cmp_layer(r, s));
  } else if (variant == Variant::baseline_gap) {
    spec.layers.push_back(gap_layer());
  }
  append_head(spec.layers, hidden, num_classes);
  return spec;
}

ModelSpec head_spec(Variant variant, int channels, int spatial, int hidden, int num_classes,
                    double r, int s) {
  ModelSpec spec;
  spec.variant = variant;
  spec.num_classes = num_classes;
  spec.input_channels = channels;
  spec.input_size = spatial;
  if (variant == Variant::cmp) {
    if (r <= 0) throw ConfigError("cmp head requires a compression factor r");
    if (s == 0) s = suggest_stride(channels, r);
    spec.layers.push_back(cmp_layer(r, s));
  } else if (variant == Variant::baseline_gap) {
    spec.layers.push_back(gap_layer());
  }
  append_head(spec.layers, hidden, num_classes);
  return spec;
}

std::vector<LayerPlan> plan_model(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("model requires num_classes >= 2");
  if (spec.input_channels < 1 || spec.input_size < 1)
    throw ConfigError("model requires positive input dimensions");
  if (spec.layers.empty()) throw ConfigError("model has no layers");

  int cmp_count = 0, gap_count = 0;
  int first_dense = -1, last_feature = -1, cmp_index = -1;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerKind kind = spec.layers[static_cast<std::size_t>(i)].kind;
    if (kind == LayerKind::cmp) {
      ++cmp_count;
      cmp_index = i;
    }
    if (kind == LayerKind::gap) ++gap_count;
    if (kind == LayerKind::dense && first_dense < 0) first_dense = i;
    if (kind == LayerKind::conv || kind == LayerKind::maxpool || kind == LayerKind::gap)
      last_feature = i;
  }
  if (first_dense < 0) throw ConfigError("model needs at least one dense layer as classifier");
  if (spec.variant == Variant::cmp) {
    if (cmp_count != 1)
      throw ConfigError("cmp variant requires exactly one cmp layer, found " +
                        std::to_string(cmp_count));
    if (cmp_index < last_feature || cmp_index > first_dense)
      throw ConfigError("cmp layer must sit between the last feature layer and the first dense "
                        "layer");
  } else if (cmp_count != 0) {
    throw ConfigError(variant_name(spec.variant) + " variant must not contain a cmp layer");
  }
  if (spec.variant == Variant::baseline_gap && gap_count != 1)
    throw ConfigError("baseline variant requires exactly one gap layer");
  if (spec.variant != Variant::baseline_gap && gap_count != 0)
    throw ConfigError(variant_name(spec.variant) + " variant must not contain a gap layer");

  std::vector<LayerPlan> plans;
  plans.reserve(spec.layers.size());
  std::vector<int> shape = {spec.input_channels, spec.input_size, spec.input_size};
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(i)];
    LayerPlan plan;
    plan.in_shape = shape;
    try {
      switch (layer.kind) {
        case LayerKind::conv: {
          if (shape.size() != 3) throw ShapeError("conv input must be (C,H,W)");
          if (layer.out_channels < 1 || layer.kernel < 1)
            throw ConfigError("conv needs positive channels and kernel");
          const std::vector<int> out = conv2d_output_shape(
              {1, shape[0], shape[1], shape[2]},
              {layer.out_channels, shape[0], layer.kernel, layer.kernel}, layer.stride,
              layer.pad);
          shape = {out[1], out[2], out[3]};
          break;
        }
        case LayerKind::maxpool: {
          if (shape.size() != 3) throw ShapeError("maxpool input must be (C,H,W)");
          if (shape[1] < layer.kernel || shape[2] < layer.kernel)
            throw ShapeError("maxpool window does not fit " + shape_to_string(shape));
          shape = {shape[0], (shape[1] - layer.kernel) / layer.stride + 1,
                   (shape[2] - layer.kernel) / layer.stride + 1};
          break;
        }
        case LayerKind::gap: {
          if (shape.size() != 3) throw ShapeError("gap input must be (C,H,W)");
          shape = {shape[0], 1, 1};
          break;
        }
        case LayerKind::cmp: {
          if (shape.size() != 3) throw ShapeError("cmp input must be (C,H,W)");
          if (layer.r == 1.0) {
            plan.cmp = CmpConfig{shape[0], 1.0, 1, shape[0], 1, false};
          } else {
            plan.cmp = make_cmp_config(shape[0], layer.r, layer.s);
          }
          shape = {plan.cmp.out_channels, shape[1], shape[2]};
          break;
        }
        case LayerKind::dense: {
          if (layer.units < 1) throw ConfigError("dense needs positive units");
          shape = {layer.units};
          break;
        }
        case LayerKind::bn:
        case LayerKind::elu:
        case LayerKind::dropout:
          break;
      }
    } catch (const ConfigError& e) {
      layer_error(i, layer.kind, e.what());
    } catch (const ShapeError& e) {
      layer_error(i, layer.kind, e.what());
    }
    plan.out_shape = shape;
    plans.push_back(std::move(plan));
  }
  if (shape != std::vector<int>{spec.num_classes})
    throw ConfigError("model output shape " + shape_to_string(shape) + " does not match " +
                      std::to_string(spec.num_classes) + " classes");
  return plans;
}

namespace {

int first_dense_index(const ModelSpec& spec) {
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i)
    if (spec.layers[static_cast<std::size_t>(i)].kind == LayerKind::dense) return i;
  return static_cast<int>(spec.layers.size());
}

ModelState make_state(const ModelSpec& spec, Rng rng, bool initialize) {
  const std::vector<LayerPlan> plans = plan_model(spec);
  const int head_start = first_dense_index(spec);
  ModelState state{.params = {}, .bn_states = {}, .rng = rng};
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(i)];
    const LayerPlan& plan = plans[static_cast<std::size_t>(i)];
    const ParamGroup group = i < head_start ? ParamGroup::conv : ParamGroup::fc;
    const std::string id = layer_id(i);
    switch (layer.kind) {
      case LayerKind::conv: {
        const int cin = plan.in_shape[0];
        const int fan_in = cin * layer.kernel * layer.kernel;
        std::vector<int> wshape = {layer.out_channels, cin, layer.kernel, layer.kernel};
        Tensor w = initialize ? fan_in_uniform(state.rng, wshape, fan_in)
                              : Tensor::zeros(wshape);
        state.params[id + ".conv.weight"] = make_param(std::move(w), group);
        state.params[id + ".conv.bias"] =
            make_param(Tensor::zeros({layer.out_channels}), group);
        break;
      }
      case LayerKind::dense: {
        const int in_features = static_cast<int>(numel(plan.in_shape));
        std::vector<int> wshape = {layer.units, in_features};
        Tensor w = initialize ? fan_in_uniform(state.rng, wshape, in_features)
                              : Tensor::zeros(wshape);
        state.params[id + ".dense.weight"] = make_param(std::move(w), group);
        state.params[id + ".dense.bias"] = make_param(Tensor::zeros({layer.units}), group);
        break;
      }
      case LayerKind::bn: {
        const int channels = plan.in_shape[0];
        state.params[id + ".bn.gamma"] = make_param(Tensor::full({channels}, 1.0), group);
        state.params[id + ".bn.beta"] = make_param(Tensor::zeros({channels}), group);
        BnState bn;
        bn.running_mean = Tensor::zeros({channels});
        bn.running_var = Tensor::full({channels}, 1.0);
        state.bn_states[id + ".bn"] = std::move(bn);
        break;
      }
      default: break;
    }
  }
  return state;
}

}  // namespace

ModelState build_model(const ModelSpec& spec, Rng rng) { return make_state(spec, rng, true); }

ForwardResult forward(ModelState& state, const ModelSpec& spec, const Tensor& x, Mode mode) {
  const std::vector<LayerPlan> plans = plan_model(spec);
  if (x.rank() != 4 || x.dim(1) != spec.input_channels || x.dim(2) != spec.input_size ||
      x.dim(3) != spec.input_size)
    throw ShapeError("model input must be (B," + std::to_string(spec.input_channels) + "," +
                     std::to_string(spec.input_size) + "," + std::to_string(spec.input_size) +
                     "), got " + shape_to_string(x.shape()));

  ForwardResult result;
  result.caches.resize(spec.layers.size());
  Tensor current = x;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(i)];
    LayerCache& cache = result.caches[static_cast<std::size_t>(i)];
    const std::string id = layer_id(i);
    switch (layer.kind) {
      case LayerKind::conv: {
        const ParamTensor& w = state.params.at(id + ".conv.weight");
        const ParamTensor& b = state.params.at(id + ".conv.bias");
        cache.input = current;
        current = conv2d_forward(current, w.value, b.value, layer.stride, layer.pad);
        break;
      }
      case LayerKind::maxpool: {
        auto [y, pool_cache] = maxpool2d_forward(current, layer.kernel, layer.stride);
        cache.pool = std::move(pool_cache);
        current = std::move(y);
        break;
      }
      case LayerKind::gap: {
        cache.in_shape = current.shape();
        current = global_avg_pool_forward(current);
        break;
      }
      case LayerKind::cmp: {
        auto [y, cmp_cache] = cmp_forward(current, plans[static_cast<std::size_t>(i)].cmp);
        cache.cmp = std::move(cmp_cache);
        current = std::move(y);
        break;
      }
      case LayerKind::dense: {
        const ParamTensor& w = state.params.at(id + ".dense.weight");
        const ParamTensor& b = state.params.at(id + ".dense.bias");
        cache.input = current;
        current = dense_forward(current, w.value, b.value);
        break;
      }
      case LayerKind::bn: {
        const ParamTensor& gamma = state.params.at(id + ".bn.gamma");
        const ParamTensor& beta = state.params.at(id + ".bn.beta");
        BnState& bn = state.bn_states.at(id + ".bn");
        current = batchnorm_forward(current, gamma.value, beta.value, bn, mode,
                                    mode == Mode::train ? &cache.bn : nullptr);
        break;
      }
      case LayerKind::elu: {
        cache.input = current;
        current = elu_forward(current);
        break;
      }
      case LayerKind::dropout: {
        current = dropout_forward(current, layer.p, mode, state.rng,
                                  mode == Mode::train ? &cache.dropout : nullptr);
        break;
      }
    }
  }
  result.logits = std::move(current);
  return result;
}

void backward(ModelState& state, const ModelSpec& spec, const std::vector<LayerCache>& caches,
              const Tensor& grad_logits) {
  const std::vector<LayerPlan> plans = plan_model(spec);
  if (caches.size() != spec.layers.size())
    throw ShapeError("backward cache count does not match model layers");
  for (auto& [name, param] : state.params)
    param.grad = Tensor::zeros(param.value.shape());

  Tensor g = grad_logits;
  for (int i = static_cast<int>(spec.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(i)];
    const LayerCache& cache = caches[static_cast<std::size_t>(i)];
    const std::string id = layer_id(i);
    switch (layer.kind) {
      case LayerKind::conv: {
        ParamTensor& w = state.params.at(id + ".conv.weight");
        ParamTensor& b = state.params.at(id + ".conv.bias");
        g = conv2d_backward(g, cache.input, w.value, layer.stride, layer.pad, w.grad, b.grad);
        break;
      }
      case LayerKind::maxpool: g = maxpool2d_backward(g, cache.pool); break;
      case LayerKind::gap: g = global_avg_pool_backward(g, cache.in_shape); break;
      case LayerKind::cmp:
        g = cmp_backward(g, cache.cmp, plans[static_cast<std::size_t>(i)].cmp);
        break;
      case LayerKind::dense: {
        ParamTensor& w = state.params.at(id + ".dense.weight");
        ParamTensor& b = state.params.at(id + ".dense.bias");
        g = dense_backward(g, cache.input, w.value, w.grad, b.grad);
        break;
      }
      case LayerKind::bn: {
        ParamTensor& gamma = state.params.at(id + ".bn.gamma");
        ParamTensor& beta = state.params.at(id + ".bn.beta");
        g = batchnorm_backward(g, gamma.value, cache.bn, gamma.grad, beta.grad);
        break;
      }
      case LayerKind::elu: g = elu_backward(g, cache.input); break;
      case LayerKind::dropout: g = dropout_backward(g, cache.dropout); break;
    }
  }
}

ParamReport count_parameters(const ModelSpec& spec) {
  const std::vector<LayerPlan> plans = plan_model(spec);
  ParamReport report;
  bool saw_dense = false;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(i)];
    const LayerPlan& plan = plans[static_cast<std::size_t>(i)];
    long long count = 0;
    switch (layer.kind) {
      case LayerKind::conv:
        count = static_cast<long long>(layer.out_channels) * plan.in_shape[0] * layer.kernel *
                    layer.kernel +
                layer.out_channels;
        break;
      case LayerKind::dense: {
        const long long in_features = static_cast<long long>(numel(plan.in_shape));
        const long long weights = in_features * layer.units;
        count = weights + layer.units;
        if (!saw_dense) {
          saw_dense = true;
          report.fc1_in_features = in_features;
          report.fc1_weights = weights;
          report.fc1_params = count;
        }
        break;
      }
      case LayerKind::bn: count = 2LL * plan.in_shape[0]; break;
      default: break;
    }
    report.per_layer.emplace_back(layer_id(i) + std::string(".") + kind_name(layer.kind), count);
    report.total += count;
  }
  return report;
}

namespace {

std::vector<std::pair<std::string, const Tensor*>> saved_tensors(const ModelState& state) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& [name, param] : state.params) entries.emplace_back(name, &param.value);
  for (const auto& [name, bn] : state.bn_states) {
    entries.emplace_back(name + ".running_mean", &bn.running_mean);
    entries.emplace_back(name + ".running_var", &bn.running_var);
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return entries;
}

std::size_t blob_bytes(const Tensor& t) {
  return 12 + static_cast<std::size_t>(t.rank()) * 4 + t.size() * 8;
}

std::string shape_spec(const std::vector<int>& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

std::vector<int> parse_shape_spec(const std::string& text) {
  std::vector<int> shape;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find('x', pos);
    if (next == std::string::npos) next = text.size();
    try {
      shape.push_back(std::stoi(text.substr(pos, next - pos)));
    } catch (const std::exception&) {
      throw FormatError("bad shape field '" + text + "' in model header");
    }
    pos = next + 1;
  }
  if (shape.empty()) throw FormatError("empty shape field in model header");
  return shape;
}

}  // namespace

void save_model(const ModelState& state, const std::string& path) {
  const auto entries = saved_tensors(state);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  std::size_t offset = 0;
  for (const auto& [name, tensor] : entries) {
    os << name << ' ' << shape_spec(tensor->shape()) << ' ' << offset << '\n';
    offset += blob_bytes(*tensor);
  }
  os << '\n';
  for (const auto& [name, tensor] : entries) write_tensor(os, *tensor);
  os.close();
  if (!os) throw IoError("write failed for " + path);
}

ModelState load_model(const std::string& path, const ModelSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);

  struct Entry {
    std::vector<int> shape;
    std::size_t offset;
  };
  std::vector<std::pair<std::string, Entry>> header;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) break;
    std::istringstream fields(line);
    std::string name, shape_text;
    std::size_t offset = 0;
    if (!(fields >> name >> shape_text >> offset))
      throw FormatError("malformed model header line: '" + line + "'");
    header.emplace_back(name, Entry{parse_shape_spec(shape_text), offset});
  }
  if (is.eof() && header.empty()) throw FormatError("model file has no header: " + path);
  const std::streampos data_start = is.tellg();

  ModelState state = make_state(spec, Rng(0), false);
  const auto expected = saved_tensors(state);
  if (header.size() != expected.size())
    throw FormatError("model file holds " + std::to_string(header.size()) + " tensors, spec " +
                      "expects " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [want_name, want_tensor] = expected[i];
    const auto& [got_name, entry] = header[i];
    if (got_name != want_name)
      throw FormatError("model file tensor '" + got_name + "' does not match expected '" +
                        want_name + "'");
    if (entry.shape != want_tensor->shape())
      throw FormatError("tensor '" + want_name + "' has shape " + shape_to_string(entry.shape) +
                        ", spec expects " + shape_to_string(want_tensor->shape()));
  }

  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, entry] = header[i];
    is.clear();
    is.seekg(data_start + static_cast<std::streamoff>(entry.offset));
    if (!is) throw FormatError("model file truncated before tensor '" + name + "'");
    Tensor t = read_tensor(is);
    if (t.shape() != entry.shape)
      throw FormatError("tensor '" + name + "' blob shape disagrees with header");
    if (auto it = state.params.find(name); it != state.params.end()) {
      it->second.value = std::move(t);
    } else {
      // running statistic: strip the ".running_*" suffix to find the bn layer
      const std::size_t dot = name.rfind('.');
      const std::string bn_name = name.substr(0, dot);
      const std::string field = name.substr(dot + 1);
      auto bn = state.bn_states.find(bn_name);
      if (bn == state.bn_states.end())
        throw FormatError("model file tensor '" + name + "' has no matching tensor in the model spec");
      if (field == "running_mean")
        bn->second.running_mean = std::move(t);
      else
        bn->second.running_var = std::move(t);
    }
  }
  return state;
}

}  // namespace cmpnet
