#pragma once

#include <string>

#include "tricluster/augment.hpp"
#include "tricluster/model.hpp"
#include "tricluster/tensor.hpp"

namespace tricluster {

// Instance-level contrastive loss: normalized MSE between online predictions
// and target projections, no negative pairs. Every term lives in [0, 4].

// 2 - 2 cos(y, z) for a single pair of vectors.
Tensor pairwise_mse(const Tensor& y, const Tensor& z);

// Row-mean of pairwise_mse over a batch: y, z are [N, D].
Tensor normalized_mse_rows(const Tensor& y, const Tensor& z);

// L_instance = mean_i mse(y_a[i], z_b[i]) + mean_i mse(y_c[i], z_b[i]).
Tensor instance_loss(const Tensor& y_a, const Tensor& y_c, const Tensor& z_b);

enum class InstanceMode { kOff, kExchange };
InstanceMode instance_mode_from_string(const std::string& s);
std::string to_string(InstanceMode mode);

// kOff: both online views predict the target's view b.
// kExchange: additionally runs view b through the online network and views
// a, c through the target network, adding the two mirrored terms.
Tensor symmetrized_instance_loss(const NetworkParams& params, const ViewTriple& views,
                                 InstanceMode mode, bool use_predictor = true,
                                 bool stop_gradient = true);

}  // namespace tricluster
