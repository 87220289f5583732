#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tricluster/config.hpp"
#include "tricluster/data.hpp"
#include "tricluster/model.hpp"
#include "tricluster/tensor.hpp"

namespace tricluster {

// Adam state over a fixed, ordered parameter list. The list covers exactly
// the trainable tensors, so under stop-gradient no moment buffer exists for
// the target parameters.
struct OptimState {
  OptimConfig config;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

OptimState make_optimizer(const std::vector<Tensor>& params, const OptimConfig& config);
void adam_step(OptimState& state, std::vector<Tensor>& params);

// View representations for one step; entries are present only when the
// stream mode produced them. The *_swapped fields carry the extra forwards
// of exchange-mode instance symmetrization.
struct RepresentationBundle {
  std::optional<Tensor> z_a, z_b, z_c;
  std::optional<Tensor> y_a, y_c;
  std::optional<Tensor> q_a, q_b, q_c;
  std::optional<Tensor> y_b_swapped;            // view b through the online path
  std::optional<Tensor> z_a_swapped, z_c_swapped;  // views a, c through the target path
};

struct LossParts {
  Tensor total;
  std::optional<Tensor> instance;
  std::optional<Tensor> cluster;
};

struct StepLosses {
  double instance = 0.0;
  double cluster = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double loss_instance = 0.0;
  double loss_cluster = 0.0;
  double loss_total = 0.0;
  double nmi = 0.0;
  double acc = 0.0;
  double ari = 0.0;
  double wall_time_s = 0.0;
};

RepresentationBundle build_bundle(const NetworkParams& params, const ViewTriple& views,
                                  const RunConfig& config);
LossParts loss_parts(const RepresentationBundle& bundle, const RunConfig& config);
// L = [use_instance_loss] L_instance + [use_cluster_loss] L_cluster.
Tensor total_loss(const RepresentationBundle& bundle, const RunConfig& config);

// Throws with a diagnostic dump (loss components plus per-group gradient
// norms) when the step produced a non-finite loss.
void ensure_finite_step(const StepLosses& losses, NetworkParams& params);

// One optimization step: views, forwards, backward over theta (and xi only
// without stop-gradient), Adam update, then the EMA line.
StepLosses train_step(NetworkParams& params, OptimState& opt, const RunConfig& config,
                      const std::vector<Image>& batch, std::uint64_t step_seed);

// Cluster assignments used for epoch evaluation: the target network, except
// in dual-online mode where no target is trained.
std::vector<int> assign_for_eval(const NetworkParams& params, const std::vector<Image>& images,
                                 StreamMode mode);

struct TrainResult {
  NetworkParams params;
  std::vector<EpochRecord> records;
};

// Full run: epoch loop, per-epoch evaluation on the unaugmented images,
// JSONL/CSV logs and periodic checkpoints under config.output_dir. Resumes
// from resume_checkpoint when given (the stored config must match).
TrainResult train_run(const RunConfig& config, const LabeledImageSet& dataset,
                      const std::string& resume_checkpoint = "");

struct AblationRow {
  std::string variant;
  double nmi = 0.0;
  double acc = 0.0;
  double ari = 0.0;
};

// The seven published variants plus the baseline, each reported as the
// median over config.ablation_seeds.
std::vector<AblationRow> run_ablation(const RunConfig& base, const LabeledImageSet& dataset);
RunConfig ablation_variant_config(const RunConfig& base, const std::string& variant);
const std::vector<std::string>& ablation_variant_names();

// Training checkpoints: model file plus optimizer/progress/config trailer.
void save_train_checkpoint(const std::string& path, NetworkParams& params, const OptimState& opt,
                           int completed_epochs, const RunConfig& config);
struct TrainCheckpoint {
  NetworkParams params;
  OptimState opt;
  int completed_epochs = 0;
  std::string config_json;
};
TrainCheckpoint load_train_checkpoint(const std::string& path);

std::string epoch_record_to_json(const EpochRecord& record);
std::vector<EpochRecord> read_epoch_log(const std::string& path);

// Runs jobs with a small worker pool (deterministic: output slot i is
// produced by job i regardless of scheduling).
void run_parallel(std::vector<std::function<void()>> jobs, int workers = 0);

}  // namespace tricluster
