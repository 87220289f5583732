#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tricluster/augment.hpp"
#include "tricluster/data.hpp"
#include "tricluster/loss_cluster.hpp"
#include "tricluster/loss_instance.hpp"
#include "tricluster/metrics.hpp"
#include "tricluster/model.hpp"

namespace tricluster {

enum class StreamMode { kTri, kDualOnlineTarget, kDualOnlineOnline };
StreamMode stream_mode_from_string(const std::string& s);
std::string to_string(StreamMode mode);

enum class PrecisionMode { kFixed, kFast };
PrecisionMode precision_mode_from_string(const std::string& s);
std::string to_string(PrecisionMode mode);

struct AblationSwitches {
  StreamMode stream_mode = StreamMode::kTri;
  bool use_instance_loss = true;
  bool use_cluster_loss = true;
  bool use_predictor = true;
  bool use_stop_gradient = true;

  void validate() const;  // at least one loss must stay enabled
};

struct OptimConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ema_momentum = 0.99;
};

struct DatasetConfig {
  enum class Kind { kSynthetic, kFolder, kCifarBinary };
  Kind kind = Kind::kSynthetic;
  SyntheticSpec synthetic;
  std::string path;  // folder or cifar file
  CifarVariant cifar_variant = CifarVariant::kAuto;
};

// Everything a run needs; parsed strictly (unknown keys are errors, ranges
// validated with field-level messages).
struct RunConfig {
  DatasetConfig dataset;
  BackboneSpec backbone;
  HeadConfig heads;
  int clusters = 4;

  ClusterLossOptions cluster_loss;  // temperature, include_self_term, use_entropy
  InstanceMode instance_mode = InstanceMode::kExchange;

  OptimConfig optim;
  int epochs = 200;
  int batch_size = 64;
  std::uint64_t seed = 1;
  int checkpoint_interval = 50;
  PrecisionMode precision = PrecisionMode::kFixed;

  AugmentPolicy augment;
  AblationSwitches switches;
  std::vector<std::uint64_t> ablation_seeds = {1, 2, 3, 4, 5};
  NmiNormalization nmi_normalization = NmiNormalization::kArithmetic;

  std::string output_dir = "runs/default";

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config_file(const std::string& path);
std::string serialize_run_config(const RunConfig& config);  // canonical JSON

// Loads the configured dataset at the configured resolution.
LabeledImageSet load_dataset(const RunConfig& config);

}  // namespace tricluster
