#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmpnet/dataset.hpp"
#include "cmpnet/model.hpp"

namespace cmpnet {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 60;
  double lr_fc = 0.1;          // FC-group learning rate at epoch 0
  double conv_lr_ratio = 0.1;  // conv-group lr = conv_lr_ratio * fc lr
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_min = 0.0;  // cosine annealing floor
  std::uint64_t seed = 1;
  bool augment = true;
};

/// Single-cycle cosine annealing, no restarts:
/// lr_min + 0.5*(lr_max-lr_min)*(1+cos(pi*t/T)).
double cosine_lr(int t, int total_epochs, double lr_max, double lr_min);

/// One SGD update over every parameter: g = grad + weight_decay*value,
/// v = momentum*v + g, value -= lr_group*v. Weight decay applies to BN
/// gamma/beta as well. Throws DivergenceError on non-finite gradients.
void sgd_step(ModelState& state, const TrainConfig& cfg, int epoch);

/// Training path: zero-pad by `pad`, random crop back to `size`, horizontal
/// flip with probability 1/2, then per-pixel mean subtraction. With
/// augment=false only the mean is subtracted (also the eval path).
Tensor augment_batch(const Tensor& images, Rng& rng, const Tensor& train_mean, int size,
                     int pad = 4, bool augment = true);

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double lr = 0;  // effective FC learning rate for this epoch
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  ModelState best_state;  // checkpoint with the highest test accuracy
  double best_test_acc = 0;
  int best_epoch = -1;
  long long steps = 0;  // optimizer steps taken
  bool diverged = false;
};

TrainResult train(ModelState& state, const ModelSpec& spec, const Dataset& data,
                  const TrainConfig& cfg);

double evaluate_accuracy(ModelState& state, const ModelSpec& spec, const Tensor& images,
                         const std::vector<int>& labels, const Tensor& mean, int batch_size);

/// CSV with header epoch,train_loss,train_acc,test_acc,lr and LF endings.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace cmpnet
