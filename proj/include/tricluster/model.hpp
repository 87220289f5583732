#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tricluster/image.hpp"
#include "tricluster/tensor.hpp"

namespace tricluster {

enum class BackboneArch { kTinyCnn, kResnet34Shaped };

struct BackboneSpec {
  BackboneArch arch = BackboneArch::kTinyCnn;
  int resolution = 16;
  int feature_dim = 128;  // forced to 512 for the residual backbone

  void validate() const;
};

BackboneArch backbone_arch_from_string(const std::string& s);
std::string to_string(BackboneArch arch);

// Projector and instance predictor are 2-layer MLPs (hidden -> layer norm ->
// relu -> linear) with embed_dim outputs; the cluster head drops the norm and
// ends in a linear layer of width M (softmax applied in the forward).
struct HeadConfig {
  int projector_hidden = 512;
  int embed_dim = 256;
  int cluster_hidden = 512;
};

struct LinearParams {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

struct NormParams {
  Tensor gain;  // [d]
  Tensor bias;  // [d]
};

struct ConvParams {
  Tensor w;  // [out_ch, in_ch, k, k]
  Tensor b;  // [out_ch]
};

struct MlpParams {
  LinearParams l1;
  std::optional<NormParams> norm;
  LinearParams l2;
};

struct ResBlockParams {
  ConvParams c1, c2;
  std::optional<ConvParams> projection;  // 1x1, present when shape changes
  int stride = 1;
};

struct BackboneParams {
  std::vector<ConvParams> convs;        // tiny-cnn: 4 conv blocks
  std::optional<ConvParams> stem;       // residual path
  std::vector<ResBlockParams> blocks;   // residual path
};

struct OnlineParams {
  BackboneParams backbone;
  MlpParams projector;
  MlpParams predictor;
  MlpParams cluster_head;
};

struct TargetParams {
  BackboneParams backbone;
  MlpParams projector;
  MlpParams cluster_head;
};

// theta: the online parameter set shared verbatim by both online streams.
// xi: the target set, same shapes minus the instance predictor, never
// trainable under the default stop-gradient regime.
struct NetworkParams {
  BackboneSpec spec;
  HeadConfig heads;
  int clusters = 2;
  OnlineParams online;
  TargetParams target;
};

NetworkParams init_params(const BackboneSpec& spec, const HeadConfig& heads, int clusters,
                          std::uint64_t seed);

// Flat views over the parameter tensors (stable order, stable names).
std::vector<Tensor> online_parameters(NetworkParams& params);
std::vector<Tensor> target_parameters(NetworkParams& params);
std::vector<std::string> online_parameter_names(const NetworkParams& params);
std::vector<std::string> target_parameter_names(const NetworkParams& params);
// Pairs (target tensor, corresponding online tensor) for the EMA update.
std::vector<std::pair<Tensor, Tensor>> ema_pairs(NetworkParams& params);

struct OnlineOutputs {
  Tensor z;  // [N, embed_dim]
  Tensor y;  // [N, embed_dim]; equals z when the predictor is bypassed
  Tensor q;  // [N, M], row-stochastic
};

struct TargetOutputs {
  Tensor z;
  Tensor q;
};

Tensor batch_to_tensor(const std::vector<Image>& batch);

OnlineOutputs forward_online(const NetworkParams& params, const Tensor& x,
                             bool use_predictor = true);
// detach=true (the stop-gradient regime) returns graph-free outputs.
TargetOutputs forward_target(const NetworkParams& params, const Tensor& x, bool detach = true);

// argmax of the target network's soft assignments; ties break to the lowest
// index.
std::vector<int> assign_clusters(const NetworkParams& params, const std::vector<Image>& images,
                                 int eval_batch = 256);
std::vector<int> argmax_rows(const Tensor& q);

// Single-file checkpoint: version tag, backbone spec, M, every named
// parameter tensor, plus an opaque trailer for trainer state. Byte-stable
// across save/load round trips.
void save_model_file(const std::string& path, NetworkParams& params,
                     const std::string& trailer);
NetworkParams load_model_file(const std::string& path, std::string* trailer);

}  // namespace tricluster
