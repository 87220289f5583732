#include "tricluster/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

namespace tricluster {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown key '" + section + key + "'");
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_dataset(const json& j, DatasetConfig& d) {
  reject_unknown_keys(j, "dataset.", {"kind", "path", "cifar_variant", "classes", "per_class",
                                      "resolution", "noise", "seed", "hues"});
  std::string kind = "synthetic";
  read_field(j, "kind", kind);
  if (kind == "synthetic") {
    d.kind = DatasetConfig::Kind::kSynthetic;
  } else if (kind == "folder") {
    d.kind = DatasetConfig::Kind::kFolder;
  } else if (kind == "cifar-binary") {
    d.kind = DatasetConfig::Kind::kCifarBinary;
  } else {
    throw std::invalid_argument("config: dataset.kind must be synthetic, folder or cifar-binary");
  }
  read_field(j, "path", d.path);
  std::string variant = "auto";
  read_field(j, "cifar_variant", variant);
  if (variant == "auto") d.cifar_variant = CifarVariant::kAuto;
  else if (variant == "cifar10") d.cifar_variant = CifarVariant::kCifar10;
  else if (variant == "cifar100-coarse") d.cifar_variant = CifarVariant::kCifar100Coarse;
  else if (variant == "cifar100-fine") d.cifar_variant = CifarVariant::kCifar100Fine;
  else throw std::invalid_argument("config: dataset.cifar_variant must be auto, cifar10, cifar100-coarse or cifar100-fine");
  read_field(j, "classes", d.synthetic.classes);
  read_field(j, "per_class", d.synthetic.per_class);
  read_field(j, "resolution", d.synthetic.resolution);
  read_field(j, "noise", d.synthetic.noise);
  read_field(j, "seed", d.synthetic.seed);
  read_field(j, "hues", d.synthetic.hues);
}

void parse_backbone(const json& j, BackboneSpec& b) {
  reject_unknown_keys(j, "backbone.", {"arch", "resolution", "feature_dim"});
  std::string arch = to_string(b.arch);
  read_field(j, "arch", arch);
  b.arch = backbone_arch_from_string(arch);
  read_field(j, "resolution", b.resolution);
  read_field(j, "feature_dim", b.feature_dim);
}

void parse_model(const json& j, RunConfig& c) {
  reject_unknown_keys(j, "model.", {"clusters", "projector_hidden", "embed_dim", "cluster_hidden"});
  read_field(j, "clusters", c.clusters);
  read_field(j, "projector_hidden", c.heads.projector_hidden);
  read_field(j, "embed_dim", c.heads.embed_dim);
  read_field(j, "cluster_hidden", c.heads.cluster_hidden);
}

void parse_loss(const json& j, RunConfig& c) {
  reject_unknown_keys(j, "loss.", {"temperature", "include_self_term", "use_entropy", "instance_mode"});
  read_field(j, "temperature", c.cluster_loss.temperature);
  read_field(j, "include_self_term", c.cluster_loss.include_self_term);
  read_field(j, "use_entropy", c.cluster_loss.use_entropy);
  std::string mode = to_string(c.instance_mode);
  read_field(j, "instance_mode", mode);
  c.instance_mode = instance_mode_from_string(mode);
}

void parse_optim(const json& j, OptimConfig& o) {
  reject_unknown_keys(j, "optim.", {"learning_rate", "beta1", "beta2", "eps", "ema_momentum"});
  read_field(j, "learning_rate", o.learning_rate);
  read_field(j, "beta1", o.beta1);
  read_field(j, "beta2", o.beta2);
  read_field(j, "eps", o.eps);
  read_field(j, "ema_momentum", o.ema_momentum);
}

void parse_train(const json& j, RunConfig& c) {
  reject_unknown_keys(j, "train.", {"epochs", "batch_size", "seed", "checkpoint_interval", "precision"});
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "seed", c.seed);
  read_field(j, "checkpoint_interval", c.checkpoint_interval);
  std::string precision = to_string(c.precision);
  read_field(j, "precision", precision);
  c.precision = precision_mode_from_string(precision);
}

void parse_augment(const json& j, AugmentPolicy& a) {
  reject_unknown_keys(j, "augment.",
                      {"output_size", "crop_probability", "crop_scale_min", "crop_scale_max",
                       "flip_probability", "jitter_probability", "jitter_brightness",
                       "jitter_contrast", "jitter_saturation", "jitter_hue",
                       "grayscale_probability", "blur_probability", "blur_sigma_min",
                       "blur_sigma_max", "seed"});
  read_field(j, "output_size", a.output_size);
  read_field(j, "crop_probability", a.crop_probability);
  read_field(j, "crop_scale_min", a.crop_scale_min);
  read_field(j, "crop_scale_max", a.crop_scale_max);
  read_field(j, "flip_probability", a.flip_probability);
  read_field(j, "jitter_probability", a.jitter_probability);
  read_field(j, "jitter_brightness", a.jitter_brightness);
  read_field(j, "jitter_contrast", a.jitter_contrast);
  read_field(j, "jitter_saturation", a.jitter_saturation);
  read_field(j, "jitter_hue", a.jitter_hue);
  read_field(j, "grayscale_probability", a.grayscale_probability);
  read_field(j, "blur_probability", a.blur_probability);
  read_field(j, "blur_sigma_min", a.blur_sigma_min);
  read_field(j, "blur_sigma_max", a.blur_sigma_max);
  read_field(j, "seed", a.seed);
}

void parse_ablation(const json& j, RunConfig& c) {
  reject_unknown_keys(j, "ablation.", {"stream_mode", "use_instance_loss", "use_cluster_loss",
                                       "use_predictor", "use_stop_gradient", "seeds"});
  std::string mode = to_string(c.switches.stream_mode);
  read_field(j, "stream_mode", mode);
  c.switches.stream_mode = stream_mode_from_string(mode);
  read_field(j, "use_instance_loss", c.switches.use_instance_loss);
  read_field(j, "use_cluster_loss", c.switches.use_cluster_loss);
  read_field(j, "use_predictor", c.switches.use_predictor);
  read_field(j, "use_stop_gradient", c.switches.use_stop_gradient);
  read_field(j, "seeds", c.ablation_seeds);
}

void parse_metrics(const json& j, RunConfig& c) {
  reject_unknown_keys(j, "metrics.", {"nmi_normalization"});
  std::string norm =
      c.nmi_normalization == NmiNormalization::kArithmetic ? "arithmetic" : "geometric";
  read_field(j, "nmi_normalization", norm);
  if (norm == "arithmetic") c.nmi_normalization = NmiNormalization::kArithmetic;
  else if (norm == "geometric") c.nmi_normalization = NmiNormalization::kGeometric;
  else throw std::invalid_argument("config: metrics.nmi_normalization must be arithmetic or geometric");
}

void parse_output(const json& j, RunConfig& c) {
  reject_unknown_keys(j, "output.", {"dir"});
  read_field(j, "dir", c.output_dir);
}

}  // namespace

StreamMode stream_mode_from_string(const std::string& s) {
  if (s == "tri") return StreamMode::kTri;
  if (s == "dual_online_target") return StreamMode::kDualOnlineTarget;
  if (s == "dual_online_online") return StreamMode::kDualOnlineOnline;
  throw std::invalid_argument(
      "config: stream_mode must be tri, dual_online_target or dual_online_online");
}

std::string to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::kTri: return "tri";
    case StreamMode::kDualOnlineTarget: return "dual_online_target";
    default: return "dual_online_online";
  }
}

PrecisionMode precision_mode_from_string(const std::string& s) {
  if (s == "fixed") return PrecisionMode::kFixed;
  if (s == "fast") return PrecisionMode::kFast;
  throw std::invalid_argument("config: precision must be fixed or fast");
}

std::string to_string(PrecisionMode mode) {
  return mode == PrecisionMode::kFixed ? "fixed" : "fast";
}

void AblationSwitches::validate() const {
  if (!use_instance_loss && !use_cluster_loss) {
    throw std::invalid_argument("config: at least one of use_instance_loss/use_cluster_loss must stay enabled");
  }
}

void RunConfig::validate() const {
  backbone.validate();
  switches.validate();
  augment.validate();
  if (clusters < 2) throw std::invalid_argument("config: clusters must be >= 2");
  if (!(cluster_loss.temperature > 0.0)) {
    throw std::invalid_argument("config: temperature must be positive");
  }
  if (!(optim.ema_momentum >= 0.0 && optim.ema_momentum <= 1.0)) {
    throw std::invalid_argument("config: ema_momentum must lie in [0, 1]");
  }
  if (!(optim.learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be positive");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw std::invalid_argument("config: beta1/beta2 must lie in [0, 1)");
  }
  if (!(optim.eps > 0.0)) throw std::invalid_argument("config: optimizer eps must be positive");
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (checkpoint_interval < 1) throw std::invalid_argument("config: checkpoint_interval must be >= 1");
  if (augment.output_size != backbone.resolution) {
    throw std::invalid_argument("config: augment output size must equal the backbone resolution");
  }
  if (ablation_seeds.empty()) throw std::invalid_argument("config: ablation seeds must not be empty");
  if (dataset.kind == DatasetConfig::Kind::kSynthetic) {
    dataset.synthetic.validate();
  } else if (dataset.path.empty()) {
    throw std::invalid_argument("config: dataset.path required for folder/cifar-binary datasets");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  reject_unknown_keys(j, "", {"dataset", "backbone", "model", "loss", "optim", "train", "augment",
                              "ablation", "metrics", "output"});
  RunConfig c;
  try {
    if (j.contains("dataset")) parse_dataset(j["dataset"], c.dataset);
    if (j.contains("backbone")) parse_backbone(j["backbone"], c.backbone);
    if (j.contains("model")) parse_model(j["model"], c);
    if (j.contains("loss")) parse_loss(j["loss"], c);
    if (j.contains("optim")) parse_optim(j["optim"], c.optim);
    if (j.contains("train")) parse_train(j["train"], c);
    if (j.contains("augment")) parse_augment(j["augment"], c.augment);
    if (j.contains("ablation")) parse_ablation(j["ablation"], c);
    if (j.contains("metrics")) parse_metrics(j["metrics"], c);
    if (j.contains("output")) parse_output(j["output"], c);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  // The augmented views feed the backbone directly, so the policy's output
  // size follows the backbone resolution unless stated explicitly.
  if (!(j.contains("augment") && j["augment"].contains("output_size"))) {
    c.augment.output_size = c.backbone.resolution;
  }
  c.validate();
  return c;
}

RunConfig load_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string serialize_run_config(const RunConfig& c) {
  json j;
  j["dataset"]["kind"] = c.dataset.kind == DatasetConfig::Kind::kSynthetic ? "synthetic"
                         : c.dataset.kind == DatasetConfig::Kind::kFolder  ? "folder"
                                                                           : "cifar-binary";
  j["dataset"]["path"] = c.dataset.path;
  j["dataset"]["cifar_variant"] = c.dataset.cifar_variant == CifarVariant::kAuto ? "auto"
                                  : c.dataset.cifar_variant == CifarVariant::kCifar10 ? "cifar10"
                                  : c.dataset.cifar_variant == CifarVariant::kCifar100Coarse
                                      ? "cifar100-coarse"
                                      : "cifar100-fine";
  j["dataset"]["classes"] = c.dataset.synthetic.classes;
  j["dataset"]["per_class"] = c.dataset.synthetic.per_class;
  j["dataset"]["resolution"] = c.dataset.synthetic.resolution;
  j["dataset"]["noise"] = c.dataset.synthetic.noise;
  j["dataset"]["seed"] = c.dataset.synthetic.seed;
  j["dataset"]["hues"] = c.dataset.synthetic.hues;
  j["backbone"]["arch"] = to_string(c.backbone.arch);
  j["backbone"]["resolution"] = c.backbone.resolution;
  j["backbone"]["feature_dim"] = c.backbone.feature_dim;
  j["model"]["clusters"] = c.clusters;
  j["model"]["projector_hidden"] = c.heads.projector_hidden;
  j["model"]["embed_dim"] = c.heads.embed_dim;
  j["model"]["cluster_hidden"] = c.heads.cluster_hidden;
  j["loss"]["temperature"] = c.cluster_loss.temperature;
  j["loss"]["include_self_term"] = c.cluster_loss.include_self_term;
  j["loss"]["use_entropy"] = c.cluster_loss.use_entropy;
  j["loss"]["instance_mode"] = to_string(c.instance_mode);
  j["optim"]["learning_rate"] = c.optim.learning_rate;
  j["optim"]["beta1"] = c.optim.beta1;
  j["optim"]["beta2"] = c.optim.beta2;
  j["optim"]["eps"] = c.optim.eps;
  j["optim"]["ema_momentum"] = c.optim.ema_momentum;
  j["train"]["epochs"] = c.epochs;
  j["train"]["batch_size"] = c.batch_size;
  j["train"]["seed"] = c.seed;
  j["train"]["checkpoint_interval"] = c.checkpoint_interval;
  j["train"]["precision"] = to_string(c.precision);
  j["augment"]["crop_probability"] = c.augment.crop_probability;
  j["augment"]["crop_scale_min"] = c.augment.crop_scale_min;
  j["augment"]["crop_scale_max"] = c.augment.crop_scale_max;
  j["augment"]["flip_probability"] = c.augment.flip_probability;
  j["augment"]["jitter_probability"] = c.augment.jitter_probability;
  j["augment"]["jitter_brightness"] = c.augment.jitter_brightness;
  j["augment"]["jitter_contrast"] = c.augment.jitter_contrast;
  j["augment"]["jitter_saturation"] = c.augment.jitter_saturation;
  j["augment"]["jitter_hue"] = c.augment.jitter_hue;
  j["augment"]["grayscale_probability"] = c.augment.grayscale_probability;
  j["augment"]["blur_probability"] = c.augment.blur_probability;
  j["augment"]["blur_sigma_min"] = c.augment.blur_sigma_min;
  j["augment"]["blur_sigma_max"] = c.augment.blur_sigma_max;
  j["augment"]["seed"] = c.augment.seed;
  j["ablation"]["stream_mode"] = to_string(c.switches.stream_mode);
  j["ablation"]["use_instance_loss"] = c.switches.use_instance_loss;
  j["ablation"]["use_cluster_loss"] = c.switches.use_cluster_loss;
  j["ablation"]["use_predictor"] = c.switches.use_predictor;
  j["ablation"]["use_stop_gradient"] = c.switches.use_stop_gradient;
  j["ablation"]["seeds"] = c.ablation_seeds;
  j["metrics"]["nmi_normalization"] =
      c.nmi_normalization == NmiNormalization::kArithmetic ? "arithmetic" : "geometric";
  j["output"]["dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

LabeledImageSet load_dataset(const RunConfig& config) {
  switch (config.dataset.kind) {
    case DatasetConfig::Kind::kSynthetic: {
      SyntheticSpec spec = config.dataset.synthetic;
      spec.resolution = config.backbone.resolution;
      return make_synthetic(spec);
    }
    case DatasetConfig::Kind::kFolder:
      return load_image_folder(config.dataset.path, config.backbone.resolution);
    default: {
      LabeledImageSet raw = load_cifar_binary(config.dataset.path, config.dataset.cifar_variant);
      return resize_dataset(raw, config.backbone.resolution);
    }
  }
}

}  // namespace tricluster
