#include "tricluster/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

#include "tricluster/rng.hpp"

namespace tricluster {

namespace {

constexpr int kResnetChannels[4] = {64, 128, 256, 512};
constexpr int kResnetBlocks[4] = {3, 4, 6, 3};

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng, bool trainable) {
  Tensor t(std::move(shape), 0.0, trainable);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

LinearParams init_linear(int in, int out, Rng& rng) {
  LinearParams p;
  p.w = fan_in_uniform({in, out}, in, rng, true);
  p.b = Tensor({out}, 0.0, true);
  return p;
}

NormParams init_norm(int d) {
  NormParams p;
  p.gain = Tensor({d}, 1.0, true);
  p.bias = Tensor({d}, 0.0, true);
  return p;
}

ConvParams init_conv(int in_ch, int out_ch, int k, Rng& rng) {
  ConvParams p;
  p.w = fan_in_uniform({out_ch, in_ch, k, k}, in_ch * k * k, rng, true);
  p.b = Tensor({out_ch}, 0.0, true);
  return p;
}

MlpParams init_mlp(int in, int hidden, int out, bool with_norm, Rng& rng) {
  MlpParams p;
  p.l1 = init_linear(in, hidden, rng);
  if (with_norm) p.norm = init_norm(hidden);
  p.l2 = init_linear(hidden, out, rng);
  return p;
}

BackboneParams init_backbone(const BackboneSpec& spec, Rng& rng) {
  BackboneParams p;
  if (spec.arch == BackboneArch::kTinyCnn) {
    const int chans[5] = {3, 32, 64, 128, spec.feature_dim};
    for (int i = 0; i < 4; ++i) p.convs.push_back(init_conv(chans[i], chans[i + 1], 3, rng));
  } else {
    p.stem = init_conv(3, kResnetChannels[0], 3, rng);
    int in_ch = kResnetChannels[0];
    for (int stage = 0; stage < 4; ++stage) {
      const int out_ch = kResnetChannels[stage];
      for (int b = 0; b < kResnetBlocks[stage]; ++b) {
        ResBlockParams blk;
        blk.stride = (stage > 0 && b == 0) ? 2 : 1;
        blk.c1 = init_conv(in_ch, out_ch, 3, rng);
        blk.c2 = init_conv(out_ch, out_ch, 3, rng);
        if (blk.stride != 1 || in_ch != out_ch) blk.projection = init_conv(in_ch, out_ch, 1, rng);
        p.blocks.push_back(std::move(blk));
        in_ch = out_ch;
      }
    }
  }
  return p;
}

// Visit every tensor of a parameter set in a fixed order.
template <typename Fn>
void visit_mlp(MlpParams& m, const std::string& prefix, Fn&& fn) {
  fn(m.l1.w, prefix + ".l1.w");
  fn(m.l1.b, prefix + ".l1.b");
  if (m.norm) {
    fn(m.norm->gain, prefix + ".norm.gain");
    fn(m.norm->bias, prefix + ".norm.bias");
  }
  fn(m.l2.w, prefix + ".l2.w");
  fn(m.l2.b, prefix + ".l2.b");
}

template <typename Fn>
void visit_backbone(BackboneParams& b, const std::string& prefix, Fn&& fn) {
  for (std::size_t i = 0; i < b.convs.size(); ++i) {
    fn(b.convs[i].w, prefix + ".conv" + std::to_string(i) + ".w");
    fn(b.convs[i].b, prefix + ".conv" + std::to_string(i) + ".b");
  }
  if (b.stem) {
    fn(b.stem->w, prefix + ".stem.w");
    fn(b.stem->b, prefix + ".stem.b");
  }
  for (std::size_t i = 0; i < b.blocks.size(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    fn(b.blocks[i].c1.w, bp + ".c1.w");
    fn(b.blocks[i].c1.b, bp + ".c1.b");
    fn(b.blocks[i].c2.w, bp + ".c2.w");
    fn(b.blocks[i].c2.b, bp + ".c2.b");
    if (b.blocks[i].projection) {
      fn(b.blocks[i].projection->w, bp + ".proj.w");
      fn(b.blocks[i].projection->b, bp + ".proj.b");
    }
  }
}

template <typename Fn>
void visit_online(OnlineParams& o, Fn&& fn) {
  visit_backbone(o.backbone, "online.backbone", fn);
  visit_mlp(o.projector, "online.projector", fn);
  visit_mlp(o.predictor, "online.predictor", fn);
  visit_mlp(o.cluster_head, "online.cluster", fn);
}

template <typename Fn>
void visit_target(TargetParams& t, Fn&& fn) {
  visit_backbone(t.backbone, "target.backbone", fn);
  visit_mlp(t.projector, "target.projector", fn);
  visit_mlp(t.cluster_head, "target.cluster", fn);
}

Tensor mlp_forward(const MlpParams& m, const Tensor& x) {
  Tensor h = add_row_bias(matmul(x, m.l1.w), m.l1.b);
  if (m.norm) h = layer_norm_rows(h, m.norm->gain, m.norm->bias);
  h = relu(h);
  return add_row_bias(matmul(h, m.l2.w), m.l2.b);
}

Tensor backbone_forward(const BackboneParams& p, const BackboneSpec& spec, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) throw std::invalid_argument("backbone: input must be [N,3,H,W]");
  if (x.dim(2) != spec.resolution || x.dim(3) != spec.resolution) {
    throw std::invalid_argument("backbone: input resolution mismatch (expected " +
                                std::to_string(spec.resolution) + ", got " +
                                std::to_string(x.dim(2)) + ")");
  }
  if (spec.arch == BackboneArch::kTinyCnn) {
    Tensor h = x;
    for (std::size_t i = 0; i < p.convs.size(); ++i) {
      h = relu(conv2d(h, p.convs[i].w, p.convs[i].b, 1, 1));
      if (i + 1 < p.convs.size()) h = avg_pool2x2(h);
    }
    return global_avg_pool(h);
  }
  Tensor h = relu(conv2d(x, p.stem->w, p.stem->b, 1, 1));
  for (const auto& blk : p.blocks) {
    Tensor skip = blk.projection ? conv2d(h, blk.projection->w, blk.projection->b, blk.stride, 0) : h;
    Tensor out = relu(conv2d(h, blk.c1.w, blk.c1.b, blk.stride, 1));
    out = conv2d(out, blk.c2.w, blk.c2.b, 1, 1);
    h = relu(add(out, skip));
  }
  return global_avg_pool(h);
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

constexpr char kMagic[8] = {'T', 'R', 'I', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void BackboneSpec::validate() const {
  if (feature_dim <= 0) throw std::invalid_argument("backbone: feature_dim must be positive");
  if (arch == BackboneArch::kTinyCnn) {
    if (resolution < 8 || resolution % 8 != 0) {
      throw std::invalid_argument("backbone: tiny-cnn resolution must be a positive multiple of 8");
    }
  } else {
    if (resolution < 8 || resolution % 8 != 0) {
      throw std::invalid_argument("backbone: resnet34-shaped resolution must be a positive multiple of 8");
    }
    if (feature_dim != 512) {
      throw std::invalid_argument("backbone: resnet34-shaped feature_dim is fixed at 512");
    }
  }
}

BackboneArch backbone_arch_from_string(const std::string& s) {
  if (s == "tiny-cnn") return BackboneArch::kTinyCnn;
  if (s == "resnet34-shaped") return BackboneArch::kResnet34Shaped;
  throw std::invalid_argument("backbone: unknown architecture '" + s +
                              "' (expected tiny-cnn or resnet34-shaped)");
}

std::string to_string(BackboneArch arch) {
  return arch == BackboneArch::kTinyCnn ? "tiny-cnn" : "resnet34-shaped";
}

NetworkParams init_params(const BackboneSpec& spec, const HeadConfig& heads, int clusters,
                          std::uint64_t seed) {
  spec.validate();
  if (clusters < 2) throw std::invalid_argument("model: cluster count must be >= 2");
  if (heads.projector_hidden <= 0 || heads.embed_dim <= 0 || heads.cluster_hidden <= 0) {
    throw std::invalid_argument("model: head widths must be positive");
  }
  NetworkParams params;
  params.spec = spec;
  params.heads = heads;
  params.clusters = clusters;

  Rng rng = derive_rng(seed, 0x6d6f64656cull);  // init stream
  params.online.backbone = init_backbone(spec, rng);
  params.online.projector = init_mlp(spec.feature_dim, heads.projector_hidden, heads.embed_dim, true, rng);
  params.online.predictor = init_mlp(heads.embed_dim, heads.projector_hidden, heads.embed_dim, true, rng);
  params.online.cluster_head = init_mlp(heads.embed_dim, heads.cluster_hidden, clusters, false, rng);

  // xi starts as an exact copy of the corresponding subset of theta and is
  // never trainable.
  params.target.backbone = init_backbone(spec, rng);  // placeholder shapes, overwritten below
  params.target.projector = init_mlp(spec.feature_dim, heads.projector_hidden, heads.embed_dim, true, rng);
  params.target.cluster_head = init_mlp(heads.embed_dim, heads.cluster_hidden, clusters, false, rng);
  auto pairs = ema_pairs(params);
  for (auto& [target, online] : pairs) {
    target.values() = online.values();
    target.set_requires_grad(false);
  }
  return params;
}

std::vector<Tensor> online_parameters(NetworkParams& params) {
  std::vector<Tensor> out;
  visit_online(params.online, [&](Tensor& t, const std::string&) { out.push_back(t); });
  return out;
}

std::vector<Tensor> target_parameters(NetworkParams& params) {
  std::vector<Tensor> out;
  visit_target(params.target, [&](Tensor& t, const std::string&) { out.push_back(t); });
  return out;
}

std::vector<std::string> online_parameter_names(const NetworkParams& params) {
  std::vector<std::string> names;
  visit_online(const_cast<NetworkParams&>(params).online,
               [&](Tensor&, const std::string& n) { names.push_back(n); });
  return names;
}

std::vector<std::string> target_parameter_names(const NetworkParams& params) {
  std::vector<std::string> names;
  visit_target(const_cast<NetworkParams&>(params).target,
               [&](Tensor&, const std::string& n) { names.push_back(n); });
  return names;
}

std::vector<std::pair<Tensor, Tensor>> ema_pairs(NetworkParams& params) {
  // backbone, projector and cluster head correspond 1:1; the predictor is
  // online-only.
  std::vector<Tensor> target;
  visit_backbone(params.target.backbone, "t", [&](Tensor& t, const std::string&) { target.push_back(t); });
  visit_mlp(params.target.projector, "t", [&](Tensor& t, const std::string&) { target.push_back(t); });
  visit_mlp(params.target.cluster_head, "t", [&](Tensor& t, const std::string&) { target.push_back(t); });

  std::vector<Tensor> online;
  visit_backbone(params.online.backbone, "o", [&](Tensor& t, const std::string&) { online.push_back(t); });
  visit_mlp(params.online.projector, "o", [&](Tensor& t, const std::string&) { online.push_back(t); });
  visit_mlp(params.online.cluster_head, "o", [&](Tensor& t, const std::string&) { online.push_back(t); });

  if (target.size() != online.size()) throw std::logic_error("model: ema pairing mismatch");
  std::vector<std::pair<Tensor, Tensor>> pairs;
  pairs.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].shape() != online[i].shape()) throw std::logic_error("model: ema shape mismatch");
    pairs.emplace_back(target[i], online[i]);
  }
  return pairs;
}

Tensor batch_to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw std::invalid_argument("model: empty batch");
  const int h = batch[0].height, w = batch[0].width;
  Tensor t({static_cast<int>(batch.size()), 3, h, w});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].height != h || batch[i].width != w) {
      throw std::invalid_argument("model: batch images must share one resolution");
    }
    std::copy(batch[i].data.begin(), batch[i].data.end(),
              t.values().begin() + static_cast<std::ptrdiff_t>(i * batch[i].data.size()));
  }
  return t;
}

OnlineOutputs forward_online(const NetworkParams& params, const Tensor& x, bool use_predictor) {
  OnlineOutputs out;
  Tensor feat = backbone_forward(params.online.backbone, params.spec, x);
  out.z = mlp_forward(params.online.projector, feat);
  out.y = use_predictor ? mlp_forward(params.online.predictor, out.z) : out.z;
  out.q = softmax_rows(mlp_forward(params.online.cluster_head, out.z));
  return out;
}

TargetOutputs forward_target(const NetworkParams& params, const Tensor& x, bool detach) {
  TargetOutputs out;
  Tensor feat = backbone_forward(params.target.backbone, params.spec, x);
  out.z = mlp_forward(params.target.projector, feat);
  out.q = softmax_rows(mlp_forward(params.target.cluster_head, out.z));
  if (detach) {
    out.z = out.z.detach();
    out.q = out.q.detach();
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& q) {
  if (q.rank() != 2) throw std::invalid_argument("argmax_rows: rank-2 input required");
  std::vector<int> labels(static_cast<std::size_t>(q.dim(0)));
  for (int i = 0; i < q.dim(0); ++i) {
    int best = 0;
    for (int j = 1; j < q.dim(1); ++j) {
      if (q(i, j) > q(i, best)) best = j;  // ties keep the lowest index
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

std::vector<int> assign_clusters(const NetworkParams& params, const std::vector<Image>& images,
                                 int eval_batch) {
  if (images.empty()) throw std::invalid_argument("model: empty evaluation set");
  std::vector<int> labels;
  labels.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(eval_batch)) {
    std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(eval_batch));
    std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                             images.begin() + static_cast<std::ptrdiff_t>(end));
    TargetOutputs out = forward_target(params, batch_to_tensor(chunk), true);
    for (int l : argmax_rows(out.q)) labels.push_back(l);
  }
  return labels;
}

void save_model_file(const std::string& path, NetworkParams& params, const std::string& trailer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  write_u32(out, 1);  // format version
  write_u32(out, params.spec.arch == BackboneArch::kTinyCnn ? 0u : 1u);
  write_u32(out, static_cast<std::uint32_t>(params.spec.resolution));
  write_u32(out, static_cast<std::uint32_t>(params.spec.feature_dim));
  write_u32(out, static_cast<std::uint32_t>(params.clusters));
  write_u32(out, static_cast<std::uint32_t>(params.heads.projector_hidden));
  write_u32(out, static_cast<std::uint32_t>(params.heads.embed_dim));
  write_u32(out, static_cast<std::uint32_t>(params.heads.cluster_hidden));

  std::vector<std::pair<std::string, Tensor*>> entries;
  visit_online(params.online, [&](Tensor& t, const std::string& n) { entries.emplace_back(n, &t); });
  visit_target(params.target, [&](Tensor& t, const std::string& n) { entries.emplace_back(n, &t); });
  write_u64(out, entries.size());
  for (auto& [name, tensor] : entries) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(tensor->rank()));
    for (int d : tensor->shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(tensor->values().data()),
              static_cast<std::streamsize>(tensor->size() * sizeof(double)));
  }
  write_u64(out, trailer.size());
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

NetworkParams load_model_file(const std::string& path, std::string* trailer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::uint32_t version = read_u32(in);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  BackboneSpec spec;
  spec.arch = read_u32(in) == 0 ? BackboneArch::kTinyCnn : BackboneArch::kResnet34Shaped;
  spec.resolution = static_cast<int>(read_u32(in));
  spec.feature_dim = static_cast<int>(read_u32(in));
  const int clusters = static_cast<int>(read_u32(in));
  HeadConfig heads;
  heads.projector_hidden = static_cast<int>(read_u32(in));
  heads.embed_dim = static_cast<int>(read_u32(in));
  heads.cluster_hidden = static_cast<int>(read_u32(in));

  NetworkParams params = init_params(spec, heads, clusters, 0);
  std::map<std::string, Tensor*> by_name;
  visit_online(params.online, [&](Tensor& t, const std::string& n) { by_name[n] = &t; });
  visit_target(params.target, [&](Tensor& t, const std::string& n) { by_name[n] = &t; });

  const std::uint64_t count = read_u64(in);
  if (count != by_name.size()) {
    throw std::runtime_error("checkpoint: tensor count mismatch in " + path);
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    std::uint32_t rank = read_u32(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(in));
    if (shape != it->second->shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for tensor '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(it->second->values().data()),
            static_cast<std::streamsize>(it->second->size() * sizeof(double)));
  }
  const std::uint64_t trailer_len = read_u64(in);
  std::string tr(trailer_len, '\0');
  in.read(tr.data(), static_cast<std::streamsize>(trailer_len));
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  if (trailer) *trailer = std::move(tr);
  return params;
}

}  // namespace tricluster
