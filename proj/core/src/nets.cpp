#include "ccr/nets.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ccr/blob.hpp"

namespace ccr::nn {
namespace {

constexpr const char* kCheckpointMagic = "CCRCKPT 1";

void append(std::vector<NamedTensor>& out, const std::string& name, const Tensor& t) {
  out.push_back({name, t});
}

const char* kind_name(TaskKind k) { return k == TaskKind::kDiscrete ? "discrete" : "continuous"; }

const char* metric_name(LabelMetric m) {
  switch (m) {
    case LabelMetric::kExactMatch: return "exact";
    case LabelMetric::kL1: return "l1";
    case LabelMetric::kAngular: return "angular";
  }
  return "?";
}

const char* loss_name(TaskLoss l) {
  switch (l) {
    case TaskLoss::kCrossEntropy: return "ce";
    case TaskLoss::kL1: return "l1";
    case TaskLoss::kCosine: return "cosine";
  }
  return "?";
}

std::string encode_task(const TaskSpec& t) {
  std::ostringstream os;
  os.precision(17);
  os << t.name << ' ' << kind_name(t.kind) << ' ' << t.channels << ' ' << metric_name(t.label_metric)
     << ' ' << loss_name(t.loss) << ' ' << to_string(t.eval_metric) << ' '
     << (t.lower_is_better ? 1 : 0) << ' ' << t.loss_weight;
  return os.str();
}

TaskSpec decode_task(const std::string& text) {
  std::istringstream is(text);
  TaskSpec t;
  std::string kind, metric, loss, eval;
  int lower = 0;
  if (!(is >> t.name >> kind >> t.channels >> metric >> loss >> eval >> lower >> t.loss_weight)) {
    throw std::runtime_error("checkpoint: malformed task entry '" + text + "'");
  }
  if (kind == "discrete") t.kind = TaskKind::kDiscrete;
  else if (kind == "continuous") t.kind = TaskKind::kContinuous;
  else throw std::runtime_error("checkpoint: unknown task kind '" + kind + "'");

  if (metric == "exact") t.label_metric = LabelMetric::kExactMatch;
  else if (metric == "l1") t.label_metric = LabelMetric::kL1;
  else if (metric == "angular") t.label_metric = LabelMetric::kAngular;
  else throw std::runtime_error("checkpoint: unknown label metric '" + metric + "'");

  if (loss == "ce") t.loss = TaskLoss::kCrossEntropy;
  else if (loss == "l1") t.loss = TaskLoss::kL1;
  else if (loss == "cosine") t.loss = TaskLoss::kCosine;
  else throw std::runtime_error("checkpoint: unknown task loss '" + loss + "'");

  if (eval == "miou") t.eval_metric = EvalMetric::kMIoU;
  else if (eval == "rmse") t.eval_metric = EvalMetric::kRmse;
  else if (eval == "merr") t.eval_metric = EvalMetric::kMErr;
  else throw std::runtime_error("checkpoint: unknown eval metric '" + eval + "'");

  t.lower_is_better = lower != 0;
  t.validate();
  return t;
}

std::size_t parse_size(const Checkpoint& c, const std::string& key) {
  const auto v = c.get(key);
  if (!v) throw std::runtime_error("checkpoint: manifest missing '" + key + "'");
  try {
    return std::stoull(*v);
  } catch (const std::exception&) {
    throw std::runtime_error("checkpoint: bad value for '" + key + "': " + *v);
  }
}

}  // namespace

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng)
    : weight({out_channels, in_channels, kernel, kernel}, true), bias({out_channels}, true) {
  const double fan_in = static_cast<double>(in_channels * kernel * kernel);
  const double bound = std::sqrt(6.0 / fan_in);
  for (double& w : weight.mutable_data()) w = rng.uniform(-bound, bound);
}

Tensor Conv2d::operator()(Graph& g, const Tensor& x) const { return ops::conv2d(g, x, weight, bias); }

void Conv2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  append(out, prefix + ".weight", weight);
  append(out, prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0)), beta({channels}, true) {
  gamma.set_requires_grad(true);
  running.running_mean = Tensor({channels});
  running.running_var = Tensor::full({channels}, 1.0);
}

Tensor BatchNorm2d::operator()(Graph& g, const Tensor& x, bool training) {
  ops::BatchNormOptions opts;
  opts.training = training;
  return ops::batch_norm(g, x, gamma, beta, running, opts);
}

void BatchNorm2d::collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const {
  append(out, prefix + ".gamma", gamma);
  append(out, prefix + ".beta", beta);
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
  append(out, prefix + ".running_mean", running.running_mean);
  append(out, prefix + ".running_var", running.running_var);
}

ConvBlock::ConvBlock(std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : conv(in_channels, out_channels, 3, rng), bn(out_channels) {}

Tensor ConvBlock::operator()(Graph& g, const Tensor& x, bool training) {
  return ops::relu(g, bn(g, conv(g, x), training));
}

Projector::Projector(std::size_t feat_channels, std::size_t proj_channels, Rng& rng)
    : conv1(feat_channels, proj_channels, 1, rng),
      conv2(proj_channels, proj_channels, 1, rng),
      bn(proj_channels) {}

Tensor Projector::operator()(Graph& g, const Tensor& features, bool training) {
  Tensor h = ops::relu(g, conv1(g, features));
  return ops::l2_normalize_pixels(g, bn(g, conv2(g, h), training));
}

void Projector::collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  bn.collect_params(prefix + ".bn", out);
}

void Projector::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
  bn.collect_buffers(prefix + ".bn", out);
}

std::string to_string(ProjectorSharing s) {
  switch (s) {
    case ProjectorSharing::kTsShared: return "ts-shared";
    case ProjectorSharing::kTtShared: return "tt-shared";
    case ProjectorSharing::kUnshared: return "unshared";
    case ProjectorSharing::kNone: return "none";
  }
  return "?";
}

ProjectorSharing parse_sharing(const std::string& s) {
  if (s == "ts-shared") return ProjectorSharing::kTsShared;
  if (s == "tt-shared") return ProjectorSharing::kTtShared;
  if (s == "unshared") return ProjectorSharing::kUnshared;
  if (s == "none") return ProjectorSharing::kNone;
  throw std::invalid_argument("unknown projector sharing '" + s +
                              "' (expected ts-shared, tt-shared, unshared or none)");
}

MultiTaskNet::MultiTaskNet(NetConfig config, std::vector<TaskSpec> tasks, std::uint64_t seed)
    : config_(config), tasks_(std::move(tasks)) {
  if (tasks_.empty()) throw std::invalid_argument("net: task set is empty");
  if (config_.encoder_blocks < 1) throw std::invalid_argument("net: need at least one encoder block");
  if (config_.decoder_blocks < 1) throw std::invalid_argument("net: need at least one decoder block");
  std::set<std::string> names;
  for (const TaskSpec& t : tasks_) {
    t.validate();
    if (!names.insert(t.name).second) throw std::invalid_argument("net: duplicate task '" + t.name + "'");
  }

  // Projectors draw from their own stream so the shared weights do not
  // depend on the sharing strategy.
  Rng init = Rng(seed).split("init");
  Rng proj_init = Rng(seed).split("projector-init");

  const std::size_t c = config_.feat_channels;
  for (std::size_t i = 0; i < config_.encoder_blocks; ++i) {
    encoder_.emplace_back(i == 0 ? config_.in_channels : c, c, init);
  }
  for (const TaskSpec& t : tasks_) {
    std::vector<ConvBlock> dec;
    for (std::size_t i = 0; i < config_.decoder_blocks; ++i) dec.emplace_back(c, c, init);
    decoders_.push_back(std::move(dec));
    heads_.emplace_back(c, t.channels, 1, init);
  }

  const std::size_t n = tasks_.size();
  switch (config_.sharing) {
    case ProjectorSharing::kTsShared:
      for (std::size_t t = 0; t < n; ++t) {
        projectors_.emplace(tasks_[t].name, Projector(c, config_.proj_channels, proj_init));
      }
      break;
    case ProjectorSharing::kTtShared:
      projectors_.emplace("shared", Projector(c, config_.proj_channels, proj_init));
      break;
    case ProjectorSharing::kUnshared:
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t s = 0; s < n; ++s) {
          if (s == t) continue;
          projectors_.emplace(tasks_[t].name + "-" + tasks_[s].name,
                              Projector(c, config_.proj_channels, proj_init));
        }
      }
      break;
    case ProjectorSharing::kNone:
      break;
  }
}

std::size_t MultiTaskNet::task_index(const std::string& name) const {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (tasks_[i].name == name) return i;
  }
  throw std::invalid_argument("net: unknown task '" + name + "'");
}

std::vector<TaskOutput> MultiTaskNet::forward(Graph& g, const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw std::invalid_argument("net: expected images [B x " + std::to_string(config_.in_channels) +
                                " x H x W], got " + shape_str(images.shape()));
  }
  if (images.dim(2) % 2 != 0 || images.dim(3) % 2 != 0) {
    throw std::invalid_argument("net: image size " + shape_str(images.shape()) +
                                " is not divisible by 2");
  }
  Tensor h = encoder_[0](g, images, training);
  h = ops::downsample2x_bilinear(g, h);
  for (std::size_t i = 1; i < encoder_.size(); ++i) h = encoder_[i](g, h, training);

  std::vector<TaskOutput> out;
  out.reserve(tasks_.size());
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    Tensor f = h;
    for (ConvBlock& block : decoders_[t]) f = block(g, f, training);
    Tensor pred = ops::upsample2x_bilinear(g, heads_[t](g, f));
    out.push_back({f, pred});
  }
  return out;
}

std::optional<std::string> MultiTaskNet::projector_key(std::size_t target, std::size_t source) const {
  if (target >= tasks_.size() || source >= tasks_.size()) {
    throw std::out_of_range("net: task index out of range");
  }
  if (projectors_.empty()) return std::nullopt;
  switch (config_.sharing) {
    case ProjectorSharing::kTsShared: return tasks_[target].name;
    case ProjectorSharing::kTtShared: return std::string("shared");
    case ProjectorSharing::kUnshared:
      if (source == target) {
        throw std::invalid_argument("net: no unshared projector for target == source");
      }
      return tasks_[target].name + "-" + tasks_[source].name;
    case ProjectorSharing::kNone: return std::nullopt;
  }
  return std::nullopt;
}

Tensor MultiTaskNet::project(Graph& g, std::size_t target, std::size_t source, const Tensor& features,
                             bool training) {
  const auto key = projector_key(target, source);
  if (!key) return ops::l2_normalize_pixels(g, features);
  return projectors_.at(*key)(g, features, training);
}

void MultiTaskNet::drop_projectors() { projectors_.clear(); }

std::vector<NamedTensor> MultiTaskNet::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    encoder_[i].conv.collect(p + ".conv", out);
    encoder_[i].bn.collect_params(p + ".bn", out);
  }
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    for (std::size_t i = 0; i < decoders_[t].size(); ++i) {
      const std::string p = "decoder." + tasks_[t].name + "." + std::to_string(i);
      decoders_[t][i].conv.collect(p + ".conv", out);
      decoders_[t][i].bn.collect_params(p + ".bn", out);
    }
    heads_[t].collect("head." + tasks_[t].name, out);
  }
  for (const auto& [key, proj] : projectors_) proj.collect_params("projector." + key, out);
  return out;
}

std::vector<NamedTensor> MultiTaskNet::buffers() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].bn.collect_buffers("encoder." + std::to_string(i) + ".bn", out);
  }
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    for (std::size_t i = 0; i < decoders_[t].size(); ++i) {
      decoders_[t][i].bn.collect_buffers(
          "decoder." + tasks_[t].name + "." + std::to_string(i) + ".bn", out);
    }
  }
  for (const auto& [key, proj] : projectors_) proj.collect_buffers("projector." + key, out);
  return out;
}

std::optional<std::string> Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : manifest) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  os << kCheckpointMagic << '\n';
  for (const auto& [k, v] : ckpt.manifest) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: manifest entry '" + k + "' cannot be encoded");
    }
    os << k << " = " << v << '\n';
  }
  os << "end\n";
  for (const NamedTensor& nt : ckpt.tensors) write_blob(os, make_blob(nt.name, nt.tensor));
  if (!os) throw std::runtime_error("checkpoint: write to '" + path.string() + "' failed");
}

void save_checkpoint(const std::filesystem::path& path, const MultiTaskNet& net,
                     const std::vector<std::pair<std::string, std::string>>& extra) {
  Checkpoint c;
  const NetConfig& cfg = net.config();
  c.manifest = {
      {"net.in_channels", std::to_string(cfg.in_channels)},
      {"net.feat_channels", std::to_string(cfg.feat_channels)},
      {"net.proj_channels", std::to_string(cfg.proj_channels)},
      {"net.encoder_blocks", std::to_string(cfg.encoder_blocks)},
      {"net.decoder_blocks", std::to_string(cfg.decoder_blocks)},
      {"net.sharing", to_string(cfg.sharing)},
      {"tasks", std::to_string(net.tasks().size())},
  };
  for (std::size_t i = 0; i < net.tasks().size(); ++i) {
    c.manifest.emplace_back("task." + std::to_string(i), encode_task(net.tasks()[i]));
  }
  for (const auto& kv : extra) c.manifest.push_back(kv);
  c.tensors = net.parameters();
  for (NamedTensor& b : net.buffers()) c.tensors.push_back(std::move(b));
  write_checkpoint(path, c);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("checkpoint not found: " + path.string());
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw std::runtime_error("checkpoint: '" + path.string() + "' has no checkpoint header");
  }
  Checkpoint c;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const std::size_t eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed manifest line '" + line + "'");
    c.manifest.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  if (!ended) throw std::runtime_error("checkpoint: manifest not terminated");
  Blob b;
  while (read_blob(is, b)) c.tensors.push_back({b.name, to_tensor(b)});
  return c;
}

MultiTaskNet load_network(const Checkpoint& ckpt) {
  NetConfig cfg;
  cfg.in_channels = parse_size(ckpt, "net.in_channels");
  cfg.feat_channels = parse_size(ckpt, "net.feat_channels");
  cfg.proj_channels = parse_size(ckpt, "net.proj_channels");
  cfg.encoder_blocks = parse_size(ckpt, "net.encoder_blocks");
  cfg.decoder_blocks = parse_size(ckpt, "net.decoder_blocks");
  const auto sharing = ckpt.get("net.sharing");
  if (!sharing) throw std::runtime_error("checkpoint: manifest missing 'net.sharing'");
  cfg.sharing = parse_sharing(*sharing);
  const std::size_t n = parse_size(ckpt, "tasks");
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = ckpt.get("task." + std::to_string(i));
    if (!v) throw std::runtime_error("checkpoint: manifest missing 'task." + std::to_string(i) + "'");
    tasks.push_back(decode_task(*v));
  }

  bool any_projector = false;
  for (const NamedTensor& nt : ckpt.tensors) {
    if (nt.name.rfind("projector.", 0) == 0) any_projector = true;
  }

  MultiTaskNet net(cfg, std::move(tasks), 0);
  if (!any_projector) net.drop_projectors();

  std::map<std::string, const Tensor*> stored;
  for (const NamedTensor& nt : ckpt.tensors) {
    if (!stored.emplace(nt.name, &nt.tensor).second) {
      throw std::runtime_error("checkpoint: duplicate tensor '" + nt.name + "'");
    }
  }
  std::vector<NamedTensor> wanted = net.parameters();
  for (NamedTensor& b : net.buffers()) wanted.push_back(std::move(b));
  for (NamedTensor& w : wanted) {
    const auto it = stored.find(w.name);
    if (it == stored.end()) throw std::runtime_error("checkpoint: missing tensor '" + w.name + "'");
    if (it->second->shape() != w.tensor.shape()) {
      throw std::runtime_error("checkpoint: tensor '" + w.name + "' has shape " +
                               shape_str(it->second->shape()) + ", expected " +
                               shape_str(w.tensor.shape()));
    }
    auto dst = w.tensor.mutable_data();
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
    stored.erase(it);
  }
  if (!stored.empty()) {
    throw std::runtime_error("checkpoint: unexpected tensor '" + stored.begin()->first + "'");
  }
  return net;
}

}  // namespace ccr::nn
