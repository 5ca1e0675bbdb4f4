#include <algorithm>
#include <vector>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cmpnet/cmp.hpp"
#include "cmpnet/dataset.hpp"
#include "cmpnet/gradcheck.hpp"
#include "cmpnet/model.hpp"
#include "cmpnet/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct GenDataOptions {
  std::string out;
  std::uint64_t seed = 1;
  int classes = 8;
  int per_class_train = 64;
  int per_class_test = 16;
  int size = 32;
  bool force = false;
};

int run_gen_data(const GenDataOptions& opt) {
  if (fs::exists(opt.out) && !fs::is_empty(opt.out) && !opt.force)
    throw cmpnet::IoError("output directory '" + opt.out +
                          "' is not empty; pass --force to overwrite");
  const cmpnet::DatasetManifest manifest = cmpnet::generate_dataset(
      opt.out, opt.seed, opt.classes, opt.per_class_train, opt.per_class_test, opt.size);
  std::cout << "wrote " << manifest.num_classes * manifest.per_class_train << " train + "
            << manifest.num_classes * manifest.per_class_test << " test samples ("
            << manifest.num_classes << " classes, " << manifest.image_size << "x"
            << manifest.image_size << ")\n";
  std::cout << "manifest: " << (fs::path(opt.out) / "manifest.txt").string() << "\n";
  return 0;
}

struct ModelOptions {
  std::string variant = "cmp";
  double r = 4.0;
  int s = 0;  // 0: derive with suggest_stride
  int hidden = 64;
};

cmpnet::ModelSpec build_toycar(const ModelOptions& opt, int num_classes, int image_size) {
  return cmpnet::toycar_spec(cmpnet::parse_variant(opt.variant), num_classes, image_size, opt.r,
                             opt.s, opt.hidden);
}

void print_param_report(const cmpnet::ModelSpec& spec) {
  const cmpnet::ParamReport report = cmpnet::count_parameters(spec);
  std::printf("%-20s %12s\n", "layer", "params");
  for (const auto& [name, count] : report.per_layer)
    std::printf("%-20s %12lld\n", name.c_str(), count);
  std::printf("%-20s %12lld\n", "total", report.total);
  std::printf("fc1: in_features=%lld params=%lld\n", report.fc1_in_features, report.fc1_params);
}

struct TrainOptions {
  std::string data;
  std::string out;
  ModelOptions model;
  cmpnet::TrainConfig cfg;
};

int run_train(const TrainOptions& opt) {
  const cmpnet::Dataset data = cmpnet::load_dataset(opt.data);
  const cmpnet::ModelSpec spec = build_toycar(opt.model, data.num_classes, data.image_size);
  print_param_report(spec);

  cmpnet::ModelState state = cmpnet::build_model(spec, cmpnet::Rng(opt.cfg.seed));
  cmpnet::TrainResult result = cmpnet::train(state, spec, data, opt.cfg);

  fs::create_directories(opt.out);
  const std::string metrics_path = (fs::path(opt.out) / "metrics.csv").string();
  const std::string model_path = (fs::path(opt.out) / "model.cmpm").string();
  cmpnet::write_metrics_csv(metrics_path, result.metrics);
  cmpnet::save_model(result.best_state, model_path);

  // companion key=value file so `eval --config` can rebuild the same spec
  int resolved_s = opt.model.s;
  for (const auto& layer : spec.layers)
    if (layer.kind == cmpnet::LayerKind::cmp) resolved_s = layer.s;
  std::ofstream cfg_os((fs::path(opt.out) / "model.cfg").string(), std::ios::binary);
  cfg_os << "variant=" << opt.model.variant << "\n"
         << "r=" << opt.model.r << "\n"
         << "s=" << resolved_s << "\n"
         << "hidden=" << opt.model.hidden << "\n";
  cfg_os.close();

  for (const auto& row : result.metrics)
    std::printf("epoch %3d: loss=%.4f train_acc=%.4f test_acc=%.4f lr=%.5f\n", row.epoch,
                row.train_loss, row.train_acc, row.test_acc, row.lr);
  if (result.diverged) {
    std::cerr << "error: training diverged (non-finite loss or gradient); best checkpoint kept\n";
    return 1;
  }
  const double final_acc =
      result.metrics.empty() ? 0.0 : result.metrics.back().test_acc;
  std::printf("final test accuracy: %.4f\n", final_acc);
  std::printf("best test accuracy: %.4f (epoch %d)\n", result.best_test_acc, result.best_epoch);
  std::printf("metrics: %s\nmodel: %s\n", metrics_path.c_str(), model_path.c_str());
  return 0;
}

struct EvalOptions {
  std::string model;
  std::string data;
  ModelOptions spec;
  int batch = 32;
};

int run_eval(const EvalOptions& opt) {
  const cmpnet::Dataset data = cmpnet::load_dataset(opt.data);
  const cmpnet::ModelSpec spec = build_toycar(opt.spec, data.num_classes, data.image_size);
  cmpnet::ModelState state = cmpnet::load_model(opt.model, spec);
  const double acc = cmpnet::evaluate_accuracy(state, spec, data.test_images, data.test_labels,
                                               data.mean_image, opt.batch);
  std::printf("test accuracy: %.4f\n", acc);
  return 0;
}

int run_grad_check(const std::string& op, std::uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  const auto results = cmpnet::run_grad_checks(op, seed);
  bool all_ok = true;
  for (const auto& result : results) {
    const bool ok = result.max_rel_err < kTolerance;
    all_ok = all_ok && ok;
    std::printf("%-8s max rel err = %.3e (tol %.0e) %s\n", result.op.c_str(), result.max_rel_err,
                kTolerance, ok ? "PASS" : "FAIL");
  }
  return all_ok ? 0 : 1;
}

struct ParamsOptions {
  std::string preset;
  double r = 0;  // 0: baseline report only
  int s = 0;
  int hidden = 0;   // 0: preset default
  int classes = 0;  // 0: preset default
};

int run_params(const ParamsOptions& opt) {
  struct Preset {
    const char* name;
    bool head;
    int channels, spatial, hidden, classes;
  };
  // the three published head geometries, all 7x7, plus the toy network
  const Preset presets[] = {
      {"densenet161-head", true, 2208, 7, 256, 196},
      {"vgg16-head", true, 512, 7, 256, 196},
      {"resnet152-head", true, 2048, 7, 256, 196},
      {"toycar", false, 32, 4, 64, 8},
  };
  const Preset* preset = nullptr;
  for (const Preset& p : presets)
    if (opt.preset == p.name) preset = &p;
  if (!preset) throw cmpnet::ConfigError("unknown preset '" + opt.preset + "'");

  const int hidden = opt.hidden > 0 ? opt.hidden : preset->hidden;
  const int classes = opt.classes > 0 ? opt.classes : preset->classes;

  const auto make_spec = [&](cmpnet::Variant variant, double r, int s) {
    if (preset->head)
      return cmpnet::head_spec(variant, preset->channels, preset->spatial, hidden, classes, r, s);
    return cmpnet::toycar_spec(variant, classes, 32, r, s, hidden);
  };

  const cmpnet::ModelSpec baseline = make_spec(cmpnet::Variant::baseline_wogap, 0, 0);
  const cmpnet::ParamReport base_report = cmpnet::count_parameters(baseline);
  std::printf("preset %s: C=%d spatial=%d hidden=%d classes=%d\n", preset->name,
              preset->channels, preset->spatial, hidden, classes);
  if (opt.r <= 0) {
    print_param_report(baseline);
    return 0;
  }

  const cmpnet::ModelSpec cmp_spec = make_spec(cmpnet::Variant::cmp, opt.r, opt.s);
  const cmpnet::ParamReport cmp_report = cmpnet::count_parameters(cmp_spec);
  std::printf("-- baseline (wogap) --\n");
  print_param_report(baseline);
  std::printf("-- cmp (r=%g) --\n", opt.r);
  print_param_report(cmp_spec);
  std::printf("fc1 baseline params=%lld vs cmp params=%lld\n", base_report.fc1_params,
              cmp_report.fc1_params);
  const double ratio = static_cast<double>(base_report.fc1_weights) /
                       static_cast<double>(cmp_report.fc1_weights);
  std::printf("fc1 compression ratio: %.2f\n", ratio);
  return 0;
}

int run_suggest_stride(int channels, double r) {
  const int s = cmpnet::suggest_stride(channels, r);
  const cmpnet::CmpConfig cfg = cmpnet::make_cmp_config(channels, r, s);
  std::printf("s=%d k=%d gaps=%s out_channels=%d\n", cfg.stride, cfg.kernel_size,
              cfg.gaps ? "true" : "false", cfg.out_channels);
  return 0;
}

void add_model_options(CLI::App* cmd, ModelOptions& opt) {
  cmd->add_option("--variant", opt.variant, "Model family: baseline, wogap, or cmp")
      ->default_val("cmp");
  cmd->add_option("--r", opt.r, "CMP compression factor (> 1)")->default_val(4.0);
  cmd->add_option("--s", opt.s, "CMP stride (> 1); 0 derives it from r")->default_val(0);
  cmd->add_option("--hidden", opt.hidden, "Classifier hidden units")->default_val(64);
}

// Plain key=value config file, one option per line, '#' comments. Entries
// become --key=value tokens injected right after the subcommand name, so
// explicit flags (parsed later, take-last) override the file, and unknown
// keys fail like any unknown flag.
std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    std::cerr << "error: cannot open config file '" << path << "'\n";
    std::exit(2);
  }
  std::vector<std::string> injected;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: " << path << ":" << lineno << ": expected key=value\n";
      std::exit(2);
    }
    injected.push_back("--" + line.substr(0, eq) + "=" + line.substr(eq + 1));
  }
  return injected;
}

std::vector<std::string> merge_config_args(int argc, char** argv,
                                           const std::vector<std::string>& subcommands) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
      const std::vector<std::string> injected = config_file_args(config_path);
      args.insert(args.begin() + static_cast<std::ptrdiff_t>(i) + 1, injected.begin(),
                  injected.end());
      break;
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-max-pooling networks: synthetic data, training, and analysis"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int rc = 0;

  GenDataOptions gen_opt;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic fine-grained dataset");
  gen->add_option("--out", gen_opt.out, "Output directory")->required();
  gen->add_option("--seed", gen_opt.seed, "Dataset seed")->default_val(1);
  gen->add_option("--classes", gen_opt.classes, "Number of classes")->default_val(8);
  gen->add_option("--per-class-train", gen_opt.per_class_train, "Train samples per class")
      ->default_val(64);
  gen->add_option("--per-class-test", gen_opt.per_class_test, "Test samples per class")
      ->default_val(16);
  gen->add_option("--size", gen_opt.size, "Image side length")->default_val(32);
  gen->add_flag("--force", gen_opt.force, "Overwrite a non-empty output directory");
  gen->callback([&] { rc = run_gen_data(gen_opt); });

  TrainOptions train_opt;
  CLI::App* train = app.add_subcommand("train", "Train a model on a generated dataset");
  train->add_option("--data", train_opt.data, "Dataset manifest path")->required();
  train->add_option("--out", train_opt.out, "Output directory for metrics and model")->required();
  add_model_options(train, train_opt.model);
  train->add_option("--epochs", train_opt.cfg.epochs, "Training epochs")->default_val(60);
  train->add_option("--batch", train_opt.cfg.batch_size, "Mini-batch size")->default_val(32);
  train->add_option("--lr", train_opt.cfg.lr_fc, "FC learning rate at epoch 0")->default_val(0.1);
  train->add_option("--conv-lr-ratio", train_opt.cfg.conv_lr_ratio,
                    "Conv lr as a fraction of FC lr")
      ->default_val(0.1);
  train->add_option("--momentum", train_opt.cfg.momentum, "SGD momentum")->default_val(0.9);
  train->add_option("--wd", train_opt.cfg.weight_decay, "Weight decay")->default_val(0.0005);
  train->add_option("--lr-min", train_opt.cfg.lr_min, "Cosine annealing floor")->default_val(0.0);
  train->add_option("--seed", train_opt.cfg.seed, "Run seed")->default_val(1);
  bool no_augment = false;
  train->add_flag("--no-augment", no_augment, "Disable crop/flip augmentation");
  train->callback([&] {
    train_opt.cfg.augment = !no_augment;
    rc = run_train(train_opt);
  });

  EvalOptions eval_opt;
  CLI::App* eval = app.add_subcommand("eval", "Report test accuracy of a saved model");
  eval->add_option("--model", eval_opt.model, "Model file from train")->required();
  eval->add_option("--data", eval_opt.data, "Dataset manifest path")->required();
  add_model_options(eval, eval_opt.spec);
  eval->add_option("--batch", eval_opt.batch, "Evaluation batch size")->default_val(32);
  eval->callback([&] { rc = run_eval(eval_opt); });

  std::string check_op = "all";
  std::uint64_t check_seed = 42;
  CLI::App* check = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  check->add_option("--op", check_op, "Operator to check (default all)");
  check->add_option("--seed", check_seed, "Probe seed");
  check->callback([&] { rc = run_grad_check(check_op, check_seed); });

  ParamsOptions params_opt;
  CLI::App* params = app.add_subcommand("params", "Parameter accounting for a model preset");
  params->add_option("--preset", params_opt.preset,
                     "densenet161-head, vgg16-head, resnet152-head, or toycar")
      ->required();
  params->add_option("--r", params_opt.r, "CMP compression factor; omit for baseline only");
  params->add_option("--s", params_opt.s, "CMP stride; 0 derives it from r");
  params->add_option("--hidden", params_opt.hidden, "Hidden units (preset default if 0)");
  params->add_option("--classes", params_opt.classes, "Classes (preset default if 0)");
  params->callback([&] { rc = run_params(params_opt); });

  int stride_c = 0;
  double stride_r = 0;
  CLI::App* stride = app.add_subcommand("suggest-stride", "Derive a stride from C and r");
  stride->add_option("--c", stride_c, "Input channel count")->required();
  stride->add_option("--r", stride_r, "Compression factor")->required();
  stride->callback([&] { rc = run_suggest_stride(stride_c, stride_r); });

  std::string config_path;
  for (CLI::App* sub : {gen, train, eval, check, params, stride})
    sub->add_option("--config", config_path, "Read options from a key=value file");

  std::vector<std::string> args = merge_config_args(
      argc, argv, {"gen-data", "train", "eval", "grad-check", "params", "suggest-stride"});
  std::reverse(args.begin(), args.end());  // CLI11 consumes args back to front

  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
