#include "tricluster/loss_instance.hpp"

#include <stdexcept>

namespace tricluster {

Tensor pairwise_mse(const Tensor& y, const Tensor& z) {
  if (y.rank() != 1 || z.rank() != 1 || y.dim(0) != z.dim(0)) {
    throw std::invalid_argument("pairwise_mse: equal-length vectors required");
  }
  Tensor dot = sum_all(mul(l2_normalize_rows(y), l2_normalize_rows(z)));
  return scalar_add(scalar_mul(dot, -2.0), 2.0);
}

Tensor normalized_mse_rows(const Tensor& y, const Tensor& z) {
  if (y.rank() != 2 || z.rank() != 2 || y.shape() != z.shape()) {
    throw std::invalid_argument("instance_loss: matching [N, D] inputs required");
  }
  Tensor dots = row_sum(mul(l2_normalize_rows(y), l2_normalize_rows(z)));
  return scalar_add(scalar_mul(mean_all(dots), -2.0), 2.0);
}

Tensor instance_loss(const Tensor& y_a, const Tensor& y_c, const Tensor& z_b) {
  return add(normalized_mse_rows(y_a, z_b), normalized_mse_rows(y_c, z_b));
}

InstanceMode instance_mode_from_string(const std::string& s) {
  if (s == "off") return InstanceMode::kOff;
  if (s == "exchange") return InstanceMode::kExchange;
  throw std::invalid_argument("instance_mode: expected 'off' or 'exchange', got '" + s + "'");
}

std::string to_string(InstanceMode mode) { return mode == InstanceMode::kOff ? "off" : "exchange"; }

Tensor symmetrized_instance_loss(const NetworkParams& params, const ViewTriple& views,
                                 InstanceMode mode, bool use_predictor, bool stop_gradient) {
  Tensor xa = batch_to_tensor(views.a);
  Tensor xb = batch_to_tensor(views.b);
  Tensor xc = batch_to_tensor(views.c);
  OnlineOutputs on_a = forward_online(params, xa, use_predictor);
  OnlineOutputs on_c = forward_online(params, xc, use_predictor);
  TargetOutputs tg_b = forward_target(params, xb, stop_gradient);
  Tensor loss = instance_loss(on_a.y, on_c.y, tg_b.z);
  if (mode == InstanceMode::kExchange) {
    OnlineOutputs on_b = forward_online(params, xb, use_predictor);
    TargetOutputs tg_a = forward_target(params, xa, stop_gradient);
    TargetOutputs tg_c = forward_target(params, xc, stop_gradient);
    loss = add(loss, add(normalized_mse_rows(on_b.y, tg_a.z), normalized_mse_rows(on_b.y, tg_c.z)));
  }
  return loss;
}

}  // namespace tricluster
