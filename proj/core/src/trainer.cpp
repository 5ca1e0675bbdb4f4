#include "cmpnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace cmpnet {

double cosine_lr(int t, int total_epochs, double lr_max, double lr_min) {
  if (total_epochs < 1) throw ConfigError("cosine_lr requires total_epochs >= 1");
  if (t < 0 || t > total_epochs)
    throw ConfigError("cosine_lr epoch " + std::to_string(t) + " outside [0, " +
                      std::to_string(total_epochs) + "]");
  const double pi = std::acos(-1.0);
  return lr_min + 0.5 * (lr_max - lr_min) *
                      (1.0 + std::cos(pi * static_cast<double>(t) / total_epochs));
}

void sgd_step(ModelState& state, const TrainConfig& cfg, int epoch) {
  const double lr_fc = cosine_lr(epoch, cfg.epochs, cfg.lr_fc, cfg.lr_min);
  for (auto& [name, param] : state.params) {
    const double lr = param.group == ParamGroup::conv ? lr_fc * cfg.conv_lr_ratio : lr_fc;
    if (param.velocity.empty()) param.velocity = Tensor::zeros(param.value.shape());
    double* value = param.value.data();
    const double* grad = param.grad.data();
    double* velocity = param.velocity.data();
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      if (!std::isfinite(grad[i]))
        throw DivergenceError("non-finite gradient in parameter " + name);
      const double g = grad[i] + cfg.weight_decay * value[i];
      velocity[i] = cfg.momentum * velocity[i] + g;
      value[i] -= lr * velocity[i];
    }
  }
}

Tensor augment_batch(const Tensor& images, Rng& rng, const Tensor& train_mean, int size, int pad,
                     bool augment) {
  if (images.rank() != 4)
    throw ShapeError("augment_batch expects (B,C,S,S) images, got " +
                     shape_to_string(images.shape()));
  const int batch = images.dim(0), channels = images.dim(1);
  if (images.dim(2) != size || images.dim(3) != size)
    throw ShapeError("augment_batch images must be " + std::to_string(size) + "x" +
                     std::to_string(size));
  if (train_mean.shape() != std::vector<int>{channels, size, size})
    throw ShapeError("augment_batch mean shape " + shape_to_string(train_mean.shape()) +
                     " does not match images " + shape_to_string(images.shape()));

  Tensor out(images.shape());
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  const std::size_t image_elems = static_cast<std::size_t>(channels) * plane;
  for (int b = 0; b < batch; ++b) {
    int off_y = pad, off_x = pad;  // identity crop when not augmenting
    bool flip = false;
    if (augment) {
      off_y = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * pad + 1)));
      off_x = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * pad + 1)));
      flip = rng.next_double() < 0.5;
    }
    const double* src = images.data() + static_cast<std::size_t>(b) * image_elems;
    double* dst = out.data() + static_cast<std::size_t>(b) * image_elems;
    for (int c = 0; c < channels; ++c) {
      const double* splane = src + static_cast<std::size_t>(c) * plane;
      const double* mplane = train_mean.data() + static_cast<std::size_t>(c) * plane;
      double* dplane = dst + static_cast<std::size_t>(c) * plane;
      for (int y = 0; y < size; ++y) {
        // crop window position in the zero-padded canvas
        const int sy = y + off_y - pad;
        for (int x = 0; x < size; ++x) {
          const int sx = (flip ? size - 1 - x : x) + off_x - pad;
          const double v = (sy >= 0 && sy < size && sx >= 0 && sx < size)
                               ? splane[static_cast<std::size_t>(sy) * size + sx]
                               : 0.0;
          dplane[static_cast<std::size_t>(y) * size + x] =
              v - mplane[static_cast<std::size_t>(y) * size + x];
        }
      }
    }
  }
  return out;
}

namespace {

Tensor gather_images(const Tensor& pool, const std::vector<int>& indices, int first, int count) {
  const int channels = pool.dim(1), size = pool.dim(2);
  const std::size_t image_elems = static_cast<std::size_t>(channels) * size * size;
  Tensor batch({count, channels, size, size});
  for (int i = 0; i < count; ++i) {
    const std::size_t src = static_cast<std::size_t>(indices[static_cast<std::size_t>(first + i)]);
    std::copy(pool.data() + src * image_elems, pool.data() + (src + 1) * image_elems,
              batch.data() + static_cast<std::size_t>(i) * image_elems);
  }
  return batch;
}

int count_correct(const Tensor& logits, const std::vector<int>& labels, int first) {
  const int batch = logits.dim(0), classes = logits.dim(1);
  int correct = 0;
  for (int b = 0; b < batch; ++b) {
    const double* row = logits.data() + static_cast<std::size_t>(b) * classes;
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = c;
    if (best == labels[static_cast<std::size_t>(first + b)]) ++correct;
  }
  return correct;
}

}  // namespace

double evaluate_accuracy(ModelState& state, const ModelSpec& spec, const Tensor& images,
                         const std::vector<int>& labels, const Tensor& mean, int batch_size) {
  const int total = images.dim(0);
  const int size = images.dim(2);
  std::vector<int> identity(static_cast<std::size_t>(total));
  std::iota(identity.begin(), identity.end(), 0);
  Rng unused(0);
  int correct = 0;
  for (int first = 0; first < total; first += batch_size) {
    const int count = std::min(batch_size, total - first);
    Tensor batch = gather_images(images, identity, first, count);
    batch = augment_batch(batch, unused, mean, size, 4, false);
    ForwardResult fwd = forward(state, spec, batch, Mode::eval);
    correct += count_correct(fwd.logits, labels, first);
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

TrainResult train(ModelState& state, const ModelSpec& spec, const Dataset& data,
                  const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.lr_fc > 0)) throw ConfigError("lr_fc must be positive");
  if (!(cfg.lr_min >= 0 && cfg.lr_min <= cfg.lr_fc))
    throw ConfigError("lr_min must satisfy 0 <= lr_min <= lr_fc");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  const int num_train = data.train_images.dim(0);
  if (num_train < 1) throw ConfigError("training set is empty");

  TrainResult result;
  result.best_state = state;
  Rng data_rng = Rng(cfg.seed).fork(1);

  std::vector<int> order(static_cast<std::size_t>(num_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_now = cosine_lr(epoch, cfg.epochs, cfg.lr_fc, cfg.lr_min);
    // Fisher-Yates on the seeded stream
    for (int i = num_train - 1; i > 0; --i) {
      const int j = static_cast<int>(data_rng.next_below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0;
    int correct = 0;
    bool diverged = false;
    for (int first = 0; first < num_train; first += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, num_train - first);
      Tensor batch = gather_images(data.train_images, order, first, count);
      batch = augment_batch(batch, data_rng, data.mean_image, data.image_size, 4, cfg.augment);
      std::vector<int> labels(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i)
        labels[static_cast<std::size_t>(i)] =
            data.train_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(first + i)])];

      ForwardResult fwd = forward(state, spec, batch, Mode::train);
      SoftmaxXentResult xent = softmax_cross_entropy(fwd.logits, labels);
      if (!std::isfinite(xent.loss)) {
        diverged = true;
        break;
      }
      loss_sum += xent.loss * count;
      // accuracy over the same (augmented, train-mode) forward pass
      correct += count_correct(fwd.logits, labels, 0);
      backward(state, spec, fwd.caches, xent.grad_logits);
      try {
        sgd_step(state, cfg, epoch);
      } catch (const DivergenceError&) {
        diverged = true;
        break;
      }
      ++result.steps;
    }
    if (diverged) {
      result.diverged = true;
      break;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(num_train);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(num_train);
    row.test_acc = evaluate_accuracy(state, spec, data.test_images, data.test_labels,
                                     data.mean_image, cfg.batch_size);
    row.lr = lr_now;
    result.metrics.push_back(row);

    if (row.test_acc > result.best_test_acc || result.best_epoch < 0) {
      result.best_test_acc = row.test_acc;
      result.best_epoch = epoch;
      result.best_state = state;
    }
  }
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "epoch,train_loss,train_acc,test_acc,lr\n";
  char buf[160];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", row.epoch, row.train_loss,
                  row.train_acc, row.test_acc, row.lr);
    os << buf;
  }
  os.close();
  if (!os) throw IoError("write failed for " + path);
}

}  // namespace cmpnet
