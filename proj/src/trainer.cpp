#include "tricluster/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tricluster/loss_cluster.hpp"
#include "tricluster/loss_instance.hpp"
#include "tricluster/metrics.hpp"
#include "tricluster/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tricluster {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x73687566ull;
constexpr std::uint64_t kStepSalt = 0x73746570ull;

bool uses_target(StreamMode mode) { return mode != StreamMode::kDualOnlineOnline; }

std::vector<Tensor> trainable_parameters(NetworkParams& params, const AblationSwitches& switches) {
  std::vector<Tensor> trainable = online_parameters(params);
  if (!switches.use_stop_gradient && uses_target(switches.stream_mode)) {
    for (auto& t : target_parameters(params)) trainable.push_back(t);
  }
  return trainable;
}

void apply_trainability(NetworkParams& params, const AblationSwitches& switches) {
  for (auto& t : online_parameters(params)) t.set_requires_grad(true);
  const bool xi_trainable = !switches.use_stop_gradient && uses_target(switches.stream_mode);
  for (auto& t : target_parameters(params)) t.set_requires_grad(xi_trainable);
}

void ema_update(NetworkParams& params, double momentum) {
  for (auto& [target, online] : ema_pairs(params)) {
    auto& tv = target.values();
    const auto& ov = online.values();
    for (std::size_t i = 0; i < tv.size(); ++i) {
      tv[i] = momentum * tv[i] + (1.0 - momentum) * ov[i];
    }
  }
}

double grad_l2_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void append_bytes(std::string& out, const void* data, std::size_t n) {
  out.append(reinterpret_cast<const char*>(data), n);
}

template <typename T>
void append_pod(std::string& out, T v) {
  append_bytes(out, &v, sizeof(T));
}

template <typename T>
T read_pod(const std::string& in, std::size_t& offset) {
  if (offset + sizeof(T) > in.size()) throw std::runtime_error("checkpoint: truncated trailer");
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  offset += sizeof(T);
  return v;
}

}  // namespace

OptimState make_optimizer(const std::vector<Tensor>& params, const OptimConfig& config) {
  OptimState state;
  state.config = config;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p.size(), 0.0);
    state.v.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(OptimState& state, std::vector<Tensor>& params) {
  if (params.size() != state.m.size()) throw std::invalid_argument("adam: parameter list changed size");
  state.step += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = state.config.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& values = params[i].values();
    const auto& grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
      v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
      const double mhat = m[k] / corr1;
      const double vhat = v[k] / corr2;
      values[k] -= lr * mhat / (std::sqrt(vhat) + state.config.eps);
    }
  }
}

RepresentationBundle build_bundle(const NetworkParams& params, const ViewTriple& views,
                                  const RunConfig& config) {
  const AblationSwitches& sw = config.switches;
  const bool stop = sw.use_stop_gradient;
  RepresentationBundle b;
  switch (sw.stream_mode) {
    case StreamMode::kTri: {
      OnlineOutputs on_a = forward_online(params, batch_to_tensor(views.a), sw.use_predictor);
      OnlineOutputs on_c = forward_online(params, batch_to_tensor(views.c), sw.use_predictor);
      TargetOutputs tg_b = forward_target(params, batch_to_tensor(views.b), stop);
      b.z_a = on_a.z; b.y_a = on_a.y; b.q_a = on_a.q;
      b.z_c = on_c.z; b.y_c = on_c.y; b.q_c = on_c.q;
      b.z_b = tg_b.z; b.q_b = tg_b.q;
      if (sw.use_instance_loss && config.instance_mode == InstanceMode::kExchange) {
        b.y_b_swapped = forward_online(params, batch_to_tensor(views.b), sw.use_predictor).y;
        b.z_a_swapped = forward_target(params, batch_to_tensor(views.a), stop).z;
        b.z_c_swapped = forward_target(params, batch_to_tensor(views.c), stop).z;
      }
      break;
    }
    case StreamMode::kDualOnlineTarget: {
      OnlineOutputs on_a = forward_online(params, batch_to_tensor(views.a), sw.use_predictor);
      TargetOutputs tg_b = forward_target(params, batch_to_tensor(views.b), stop);
      b.z_a = on_a.z; b.y_a = on_a.y; b.q_a = on_a.q;
      b.z_b = tg_b.z; b.q_b = tg_b.q;
      if (sw.use_instance_loss && config.instance_mode == InstanceMode::kExchange) {
        b.y_b_swapped = forward_online(params, batch_to_tensor(views.b), sw.use_predictor).y;
        b.z_a_swapped = forward_target(params, batch_to_tensor(views.a), stop).z;
      }
      break;
    }
    case StreamMode::kDualOnlineOnline: {
      // two weight-sharing online streams; each predicts the other's
      // (detached) projection
      OnlineOutputs on_a = forward_online(params, batch_to_tensor(views.a), sw.use_predictor);
      OnlineOutputs on_c = forward_online(params, batch_to_tensor(views.c), sw.use_predictor);
      b.z_a = on_a.z; b.y_a = on_a.y; b.q_a = on_a.q;
      b.z_c = on_c.z; b.y_c = on_c.y; b.q_c = on_c.q;
      b.z_a_swapped = stop ? on_a.z.detach() : on_a.z;
      b.z_c_swapped = stop ? on_c.z.detach() : on_c.z;
      break;
    }
  }
  return b;
}

LossParts loss_parts(const RepresentationBundle& bundle, const RunConfig& config) {
  const AblationSwitches& sw = config.switches;
  sw.validate();
  LossParts parts;
  if (sw.use_instance_loss) {
    std::optional<Tensor> loss;
    auto accumulate = [&](const Tensor& term) { loss = loss ? add(*loss, term) : term; };
    switch (sw.stream_mode) {
      case StreamMode::kTri:
        accumulate(normalized_mse_rows(*bundle.y_a, *bundle.z_b));
        accumulate(normalized_mse_rows(*bundle.y_c, *bundle.z_b));
        break;
      case StreamMode::kDualOnlineTarget:
        accumulate(normalized_mse_rows(*bundle.y_a, *bundle.z_b));
        break;
      case StreamMode::kDualOnlineOnline:
        accumulate(normalized_mse_rows(*bundle.y_a, *bundle.z_c_swapped));
        accumulate(normalized_mse_rows(*bundle.y_c, *bundle.z_a_swapped));
        break;
    }
    if (bundle.y_b_swapped) {
      if (bundle.z_a_swapped) accumulate(normalized_mse_rows(*bundle.y_b_swapped, *bundle.z_a_swapped));
      if (bundle.z_c_swapped) accumulate(normalized_mse_rows(*bundle.y_b_swapped, *bundle.z_c_swapped));
    }
    parts.instance = loss;
  }
  if (sw.use_cluster_loss) {
    switch (sw.stream_mode) {
      case StreamMode::kTri:
        parts.cluster = cluster_loss(*bundle.q_a, *bundle.q_b, *bundle.q_c, config.cluster_loss);
        break;
      case StreamMode::kDualOnlineTarget:
        parts.cluster = cluster_infonce_pair(*bundle.q_a, *bundle.q_b, config.cluster_loss);
        break;
      case StreamMode::kDualOnlineOnline:
        parts.cluster = cluster_infonce_pair(*bundle.q_a, *bundle.q_c, config.cluster_loss);
        break;
    }
  }
  if (parts.instance && parts.cluster) {
    parts.total = add(*parts.instance, *parts.cluster);
  } else if (parts.instance) {
    parts.total = *parts.instance;
  } else {
    parts.total = *parts.cluster;
  }
  return parts;
}

Tensor total_loss(const RepresentationBundle& bundle, const RunConfig& config) {
  return loss_parts(bundle, config).total;
}

void ensure_finite_step(const StepLosses& losses, NetworkParams& params) {
  if (std::isfinite(losses.total) && std::isfinite(losses.instance) && std::isfinite(losses.cluster)) {
    return;
  }
  std::ostringstream msg;
  msg << "trainer: non-finite loss, aborting step."
      << " L_instance=" << losses.instance << " L_cluster=" << losses.cluster
      << " L_total=" << losses.total;
  auto online = online_parameters(params);
  auto target = target_parameters(params);
  msg << " |grad_theta|=" << grad_l2_norm(online) << " |grad_xi|=" << grad_l2_norm(target);
  throw std::runtime_error(msg.str());
}

StepLosses train_step(NetworkParams& params, OptimState& opt, const RunConfig& config,
                      const std::vector<Image>& batch, std::uint64_t step_seed) {
  ViewTriple views = make_views(batch, config.augment, step_seed);
  RepresentationBundle bundle = build_bundle(params, views, config);
  LossParts parts = loss_parts(bundle, config);

  StepLosses losses;
  losses.instance = parts.instance ? parts.instance->scalar() : 0.0;
  losses.cluster = parts.cluster ? parts.cluster->scalar() : 0.0;
  losses.total = parts.total.scalar();

  std::vector<Tensor> trainable = trainable_parameters(params, config.switches);
  for (auto& p : trainable) p.zero_grad();
  parts.total.backward();
  ensure_finite_step(losses, params);
  adam_step(opt, trainable);

  if (uses_target(config.switches.stream_mode) && config.switches.use_stop_gradient) {
    ema_update(params, config.optim.ema_momentum);
  }
  return losses;
}

std::vector<int> assign_for_eval(const NetworkParams& params, const std::vector<Image>& images,
                                 StreamMode mode) {
  if (mode != StreamMode::kDualOnlineOnline) return assign_clusters(params, images);
  // no EMA-tracked network exists in this mode; read the online cluster head
  std::vector<int> labels;
  labels.reserve(images.size());
  const int chunk_size = 256;
  for (std::size_t start = 0; start < images.size(); start += chunk_size) {
    std::size_t end = std::min(images.size(), start + chunk_size);
    std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                             images.begin() + static_cast<std::ptrdiff_t>(end));
    OnlineOutputs out = forward_online(params, batch_to_tensor(chunk), true);
    for (int l : argmax_rows(out.q.detach())) labels.push_back(l);
  }
  return labels;
}

// --- checkpoint trailer -----------------------------------------------------

void save_train_checkpoint(const std::string& path, NetworkParams& params, const OptimState& opt,
                           int completed_epochs, const RunConfig& config) {
  std::string trailer;
  append_pod<std::uint32_t>(trailer, 1);  // trailer version
  append_pod<std::int64_t>(trailer, static_cast<std::int64_t>(opt.step));
  append_pod<std::uint64_t>(trailer, opt.m.size());
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    append_pod<std::uint64_t>(trailer, opt.m[i].size());
    append_bytes(trailer, opt.m[i].data(), opt.m[i].size() * sizeof(double));
    append_bytes(trailer, opt.v[i].data(), opt.v[i].size() * sizeof(double));
  }
  append_pod<std::int32_t>(trailer, completed_epochs);
  const std::string config_json = serialize_run_config(config);
  append_pod<std::uint64_t>(trailer, config_json.size());
  trailer += config_json;
  save_model_file(path, params, trailer);
}

TrainCheckpoint load_train_checkpoint(const std::string& path) {
  TrainCheckpoint ckpt;
  std::string trailer;
  ckpt.params = load_model_file(path, &trailer);
  std::size_t offset = 0;
  const auto version = read_pod<std::uint32_t>(trailer, offset);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported trailer version");
  ckpt.opt.step = static_cast<long>(read_pod<std::int64_t>(trailer, offset));
  const auto n = read_pod<std::uint64_t>(trailer, offset);
  ckpt.opt.m.resize(n);
  ckpt.opt.v.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = read_pod<std::uint64_t>(trailer, offset);
    if (offset + 2 * len * sizeof(double) > trailer.size()) {
      throw std::runtime_error("checkpoint: truncated optimizer state");
    }
    ckpt.opt.m[i].resize(len);
    std::memcpy(ckpt.opt.m[i].data(), trailer.data() + offset, len * sizeof(double));
    offset += len * sizeof(double);
    ckpt.opt.v[i].resize(len);
    std::memcpy(ckpt.opt.v[i].data(), trailer.data() + offset, len * sizeof(double));
    offset += len * sizeof(double);
  }
  ckpt.completed_epochs = static_cast<int>(read_pod<std::int32_t>(trailer, offset));
  const auto json_len = read_pod<std::uint64_t>(trailer, offset);
  if (offset + json_len > trailer.size()) throw std::runtime_error("checkpoint: truncated config");
  ckpt.config_json = trailer.substr(offset, json_len);
  return ckpt;
}

// --- logging ----------------------------------------------------------------

std::string epoch_record_to_json(const EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["loss_instance"] = r.loss_instance;
  j["loss_cluster"] = r.loss_cluster;
  j["loss_total"] = r.loss_total;
  j["nmi"] = r.nmi;
  j["acc"] = r.acc;
  j["ari"] = r.ari;
  j["wall_time_s"] = r.wall_time_s;
  return j.dump();
}

std::vector<EpochRecord> read_epoch_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trainer: cannot open epoch log " + path);
  std::vector<EpochRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.loss_instance = j.at("loss_instance").get<double>();
    r.loss_cluster = j.at("loss_cluster").get<double>();
    r.loss_total = j.at("loss_total").get<double>();
    r.nmi = j.at("nmi").get<double>();
    r.acc = j.at("acc").get<double>();
    r.ari = j.at("ari").get<double>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    records.push_back(r);
  }
  return records;
}

// --- full run ---------------------------------------------------------------

TrainResult train_run(const RunConfig& config, const LabeledImageSet& dataset,
                      const std::string& resume_checkpoint) {
  config.validate();
  if (dataset.images.empty()) throw std::invalid_argument("trainer: empty dataset");
  set_finite_checks(config.precision == PrecisionMode::kFixed);

  TrainResult result;
  int start_epoch = 0;
  OptimState opt;
  if (resume_checkpoint.empty()) {
    result.params = init_params(config.backbone, config.heads, config.clusters, config.seed);
    apply_trainability(result.params, config.switches);
    opt = make_optimizer(trainable_parameters(result.params, config.switches), config.optim);
  } else {
    TrainCheckpoint ckpt = load_train_checkpoint(resume_checkpoint);
    if (ckpt.config_json != serialize_run_config(config)) {
      throw std::invalid_argument("trainer: resume config differs from the checkpointed run");
    }
    result.params = std::move(ckpt.params);
    apply_trainability(result.params, config.switches);
    opt = std::move(ckpt.opt);
    opt.config = config.optim;
    start_epoch = ckpt.completed_epochs;
  }

  fs::create_directories(config.output_dir);
  {
    std::ofstream cfg(fs::path(config.output_dir) / "config.json");
    cfg << serialize_run_config(config);
  }
  std::ofstream log(fs::path(config.output_dir) / "epochs.jsonl",
                    start_epoch == 0 ? std::ios::trunc : std::ios::app);

  std::vector<std::size_t> order(dataset.images.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    Rng shuffle_rng = derive_rng(config.seed, kShuffleSalt, static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double sum_instance = 0.0, sum_cluster = 0.0, sum_total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (end - start < 2) break;  // a lone sample cannot form cluster columns
      std::vector<Image> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset.images[order[i]]);
      const std::uint64_t step_seed =
          mix_seed(mix_seed(mix_seed(config.seed, kStepSalt), static_cast<std::uint64_t>(epoch)),
                   static_cast<std::uint64_t>(steps));
      StepLosses losses = train_step(result.params, opt, config, batch, step_seed);
      sum_instance += losses.instance;
      sum_cluster += losses.cluster;
      sum_total += losses.total;
      ++steps;
    }

    EpochRecord record;
    record.epoch = epoch;
    if (steps > 0) {
      record.loss_instance = sum_instance / steps;
      record.loss_cluster = sum_cluster / steps;
      record.loss_total = sum_total / steps;
    }
    std::vector<int> predicted = assign_for_eval(result.params, dataset.images,
                                                 config.switches.stream_mode);
    record.nmi = nmi(predicted, dataset.labels, config.nmi_normalization);
    record.acc = acc(predicted, dataset.labels);
    record.ari = ari(predicted, dataset.labels);
    if (config.precision == PrecisionMode::kFast) {
      record.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    }
    result.records.push_back(record);
    log << epoch_record_to_json(record) << "\n";
    log.flush();

    if (epoch % config.checkpoint_interval == 0 && epoch != config.epochs) {
      save_train_checkpoint((fs::path(config.output_dir) / "checkpoint_latest.bin").string(),
                            result.params, opt, epoch, config);
    }
  }

  save_train_checkpoint((fs::path(config.output_dir) / "checkpoint_final.bin").string(),
                        result.params, opt, config.epochs, config);
  {
    std::ofstream summary(fs::path(config.output_dir) / "summary.csv");
    summary << "epochs,loss_instance,loss_cluster,loss_total,nmi,acc,ari\n";
    if (result.records.empty()) {
      summary << config.epochs << ",0,0,0,0,0,0\n";
    } else {
      const EpochRecord& last = result.records.back();
      summary << last.epoch << ',' << json(last.loss_instance).dump() << ','
              << json(last.loss_cluster).dump() << ',' << json(last.loss_total).dump() << ','
              << json(last.nmi).dump() << ',' << json(last.acc).dump() << ','
              << json(last.ari).dump() << "\n";
    }
  }
  return result;
}

// --- ablations ---------------------------------------------------------------

const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names = {
      "tri",           "dual_online_target", "dual_online_online", "instance_only",
      "cluster_only",  "no_predictor",       "no_stop_gradient"};
  return names;
}

RunConfig ablation_variant_config(const RunConfig& base, const std::string& variant) {
  RunConfig c = base;
  c.switches = AblationSwitches{};  // variants start from the full tri-stream setup
  if (variant == "baseline" || variant == "tri") {
  } else if (variant == "dual_online_target") {
    c.switches.stream_mode = StreamMode::kDualOnlineTarget;
  } else if (variant == "dual_online_online") {
    c.switches.stream_mode = StreamMode::kDualOnlineOnline;
  } else if (variant == "instance_only") {
    c.switches.use_cluster_loss = false;
  } else if (variant == "cluster_only") {
    c.switches.use_instance_loss = false;
  } else if (variant == "no_predictor") {
    c.switches.use_predictor = false;
  } else if (variant == "no_stop_gradient") {
    c.switches.use_stop_gradient = false;
  } else {
    throw std::invalid_argument("trainer: unknown ablation variant '" + variant + "'");
  }
  return c;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const LabeledImageSet& dataset) {
  base.validate();
  // "tri" restates the baseline row, so reuse the baseline runs for it.
  std::vector<std::string> to_run = {"baseline"};
  for (const auto& name : ablation_variant_names()) {
    if (name != "tri") to_run.push_back(name);
  }

  struct Job {
    std::string variant;
    std::uint64_t seed;
    EpochRecord final_record;
  };
  std::vector<Job> jobs;
  for (const auto& variant : to_run) {
    for (std::uint64_t seed : base.ablation_seeds) jobs.push_back({variant, seed, {}});
  }

  std::vector<std::function<void()>> tasks;
  tasks.reserve(jobs.size());
  for (auto& job : jobs) {
    tasks.emplace_back([&job, &base, &dataset]() {
      RunConfig c = ablation_variant_config(base, job.variant);
      c.seed = job.seed;
      c.output_dir = (fs::path(base.output_dir) / "ablation" /
                      (job.variant + "_seed" + std::to_string(job.seed)))
                         .string();
      TrainResult r = train_run(c, dataset);
      job.final_record = r.records.empty() ? EpochRecord{} : r.records.back();
    });
  }
  run_parallel(std::move(tasks));

  auto median_row = [&](const std::string& variant) {
    std::vector<double> nmis, accs, aris;
    for (const auto& job : jobs) {
      if (job.variant != variant) continue;
      nmis.push_back(job.final_record.nmi);
      accs.push_back(job.final_record.acc);
      aris.push_back(job.final_record.ari);
    }
    return AblationRow{variant, median(nmis), median(accs), median(aris)};
  };

  std::vector<AblationRow> rows;
  rows.push_back(median_row("baseline"));
  for (const auto& name : ablation_variant_names()) {
    if (name == "tri") {
      AblationRow row = median_row("baseline");
      row.variant = "tri";
      rows.push_back(row);
    } else {
      rows.push_back(median_row(name));
    }
  }
  return rows;
}

void run_parallel(std::vector<std::function<void()>> jobs, int workers) {
  if (workers <= 0) {
    workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers <= 0) workers = 2;
  }
  workers = std::min<int>(workers, static_cast<int>(jobs.size()));
  if (workers <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          jobs[i]();
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace tricluster
