#include "ccr/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ccr {
namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string real_text(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  if (!(is >> out) || !is.eof()) {
    throw std::invalid_argument("config: '" + key + "' has malformed value '" + v + "'");
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& value, const std::filesystem::path& base)>;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  std::filesystem::path p(v);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    auto size = [&m](const std::string& key, std::function<std::size_t&(RunConfig&)> f) {
      m[key] = [f, key](RunConfig& c, const std::string& v, const std::filesystem::path&) {
        f(c) = parse_number<std::size_t>(key, v);
      };
    };
    auto real = [&m](const std::string& key, std::function<double&(RunConfig&)> f) {
      m[key] = [f, key](RunConfig& c, const std::string& v, const std::filesystem::path&) {
        f(c) = parse_number<double>(key, v);
      };
    };
    auto path = [&m](const std::string& key, std::function<std::filesystem::path&(RunConfig&)> f) {
      m[key] = [f](RunConfig& c, const std::string& v, const std::filesystem::path& base) {
        f(c) = resolve(base, v);
      };
    };

    path("data.train", [](RunConfig& c) -> auto& { return c.data.train_manifest; });
    path("data.test", [](RunConfig& c) -> auto& { return c.data.test_manifest; });
    path("data.reference", [](RunConfig& c) -> auto& { return c.data.reference; });
    size("data.classes", [](RunConfig& c) -> auto& { return c.data.classes; });
    size("data.train_samples", [](RunConfig& c) -> auto& { return c.data.train_samples; });
    size("data.test_samples", [](RunConfig& c) -> auto& { return c.data.test_samples; });
    size("data.size", [](RunConfig& c) -> auto& { return c.data.size; });

    m["tasks.list"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.tasks = split_list(v);
    };
    m["tasks.weights"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.task_weights.clear();
      for (const std::string& w : split_list(v)) c.task_weights.push_back(parse_number<double>("tasks.weights", w));
    };

    size("net.feat_channels", [](RunConfig& c) -> auto& { return c.net.feat_channels; });
    size("net.proj_channels", [](RunConfig& c) -> auto& { return c.net.proj_channels; });
    size("net.encoder_blocks", [](RunConfig& c) -> auto& { return c.net.encoder_blocks; });
    size("net.decoder_blocks", [](RunConfig& c) -> auto& { return c.net.decoder_blocks; });

    real("ccr.margin", [](RunConfig& c) -> auto& { return c.ccr.margin; });
    real("ccr.sample_ratio", [](RunConfig& c) -> auto& { return c.ccr.sample_ratio; });
    size("ccr.topk", [](RunConfig& c) -> auto& { return c.ccr.topk; });
    size("ccr.c_neg", [](RunConfig& c) -> auto& { return c.ccr.c_neg; });
    real("ccr.lambda", [](RunConfig& c) -> auto& { return c.ccr.lambda_ctr; });
    real("ccr.ramp_epochs", [](RunConfig& c) -> auto& { return c.ccr.ramp_epochs; });
    m["ccr.distance"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.ccr.distance = parse_distance(v);
    };
    m["ccr.sharing"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.ccr.sharing = nn::parse_sharing(v);
    };

    size("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; });
    size("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    real("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; });
    real("train.warmup_epochs", [](RunConfig& c) -> auto& { return c.train.warmup_epochs; });
    real("train.beta1", [](RunConfig& c) -> auto& { return c.train.adam.beta1; });
    real("train.beta2", [](RunConfig& c) -> auto& { return c.train.adam.beta2; });
    real("train.eps", [](RunConfig& c) -> auto& { return c.train.adam.eps; });
    real("train.weight_decay", [](RunConfig& c) -> auto& { return c.train.adam.weight_decay; });
    m["train.seed"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.train.seed = parse_number<std::uint64_t>("train.seed", v);
    };
    m["train.mode"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.train.mode = parse_mode(v);
    };
    m["train.single_task"] = [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
      c.train.single_task = v;
    };

    size("analysis.triplets", [](RunConfig& c) -> auto& { return c.analysis.triplets; });
    size("analysis.bins", [](RunConfig& c) -> auto& { return c.analysis.bins; });
    size("analysis.probe_epochs", [](RunConfig& c) -> auto& { return c.analysis.probe_epochs; });
    real("analysis.probe_lr", [](RunConfig& c) -> auto& { return c.analysis.probe_lr; });

    path("run.out", [](RunConfig& c) -> auto& { return c.out; });
    return m;
  }();
  return table;
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kBaseline: return "baseline";
    case Mode::kSingleTask: return "single-task";
    case Mode::kCcrBasic: return "ccr-basic";
    case Mode::kProj: return "proj";
    case Mode::kProjSs: return "proj-ss";
    case Mode::kProjSsCts: return "proj-ss-cts";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::kBaseline, Mode::kSingleTask, Mode::kCcrBasic, Mode::kProj, Mode::kProjSs,
                 Mode::kProjSsCts}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown mode '" + s +
                              "' (expected baseline, single-task, ccr-basic, proj, proj-ss or proj-ss-cts)");
}

bool uses_ccr(Mode m) { return m != Mode::kBaseline && m != Mode::kSingleTask; }

TaskSpec task_by_name(const std::string& name, std::size_t seg_classes) {
  if (name == "seg") return segmentation_task(name, seg_classes + 1);
  if (name == "depth") return depth_task(name);
  if (name == "orient") return orientation_task(name);
  throw std::invalid_argument("unknown task '" + name + "' (expected seg, depth or orient)");
}

std::vector<TaskSpec> RunConfig::task_specs() const {
  std::vector<TaskSpec> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    TaskSpec t = task_by_name(tasks[i], data.classes);
    if (!task_weights.empty()) t.loss_weight = task_weights.at(i);
    t.validate();
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TaskSpec> RunConfig::trained_specs() const {
  std::vector<TaskSpec> all = task_specs();
  if (train.mode != Mode::kSingleTask) return all;
  for (TaskSpec& t : all) {
    if (t.name == train.single_task) return {t};
  }
  throw std::invalid_argument("single-task mode: task '" + train.single_task + "' is not in the task list");
}

void RunConfig::finalize() {
  if (tasks.empty()) throw std::invalid_argument("config: task list is empty");
  if (!task_weights.empty() && task_weights.size() != tasks.size()) {
    throw std::invalid_argument("config: tasks.weights has " + std::to_string(task_weights.size()) +
                                " entries for " + std::to_string(tasks.size()) + " tasks");
  }
  if (train.batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (!(train.lr > 0.0)) throw std::invalid_argument("config: train.lr must be > 0");
  if (analysis.bins < 1) throw std::invalid_argument("config: analysis.bins must be >= 1");
  if (data.size < 16 || data.size % 2 != 0) throw std::invalid_argument("config: data.size must be even and >= 16");

  switch (train.mode) {
    case Mode::kBaseline:
    case Mode::kSingleTask:
      net.sharing = nn::ProjectorSharing::kNone;
      break;
    case Mode::kCcrBasic:
      ccr.sampling = Sampling::kUniform;
      ccr.task_pair_selection = false;
      break;
    case Mode::kProj:
      ccr.sampling = Sampling::kUniform;
      ccr.task_pair_selection = false;
      break;
    case Mode::kProjSs:
      ccr.sampling = Sampling::kSemiHard;
      ccr.task_pair_selection = false;
      break;
    case Mode::kProjSsCts:
      ccr.sampling = Sampling::kSemiHard;
      ccr.task_pair_selection = true;
      break;
  }
  if (uses_ccr(train.mode)) {
    // The basic variant regularizes the raw decoder features.
    net.sharing = train.mode == Mode::kCcrBasic ? nn::ProjectorSharing::kNone : ccr.sharing;
    if (tasks.size() < 2) throw std::invalid_argument("config: contrastive modes need at least 2 tasks");
  }
  ccr.validate();
  (void)trained_specs();
}

RunConfig default_config() {
  RunConfig c;
  c.finalize();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("config not found: " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::runtime_error("config: " + std::string(e.what()));
  }
  const std::filesystem::path base = std::filesystem::absolute(path).parent_path();
  RunConfig c;
  // Relative defaults follow the config file too.
  c.data.train_manifest = base / c.data.train_manifest;
  c.data.test_manifest = base / c.data.test_manifest;
  c.data.reference = base / c.data.reference;
  c.out = base / c.out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw std::invalid_argument("config: key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters().find(full);
      if (it == setters().end()) throw std::invalid_argument("config: unknown key '" + full + "'");
      it->second(c, value.get_value<std::string>(), base);
    }
  }
  c.finalize();
  return c;
}

std::string render_config(const RunConfig& c) {
  std::ostringstream os;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  os << "[data]\n"
     << "train = " << c.data.train_manifest.string() << "\n"
     << "test = " << c.data.test_manifest.string() << "\n"
     << "reference = " << c.data.reference.string() << "\n"
     << "classes = " << c.data.classes << "\n"
     << "train_samples = " << c.data.train_samples << "\n"
     << "test_samples = " << c.data.test_samples << "\n"
     << "size = " << c.data.size << "\n\n"
     << "[tasks]\n"
     << "list = " << join(c.tasks) << "\n\n"
     << "[net]\n"
     << "feat_channels = " << c.net.feat_channels << "\n"
     << "proj_channels = " << c.net.proj_channels << "\n"
     << "encoder_blocks = " << c.net.encoder_blocks << "\n"
     << "decoder_blocks = " << c.net.decoder_blocks << "\n\n"
     << "[ccr]\n"
     << "margin = " << real_text(c.ccr.margin) << "\n"
     << "sample_ratio = " << real_text(c.ccr.sample_ratio) << "\n"
     << "topk = " << c.ccr.topk << "\n"
     << "c_neg = " << c.ccr.c_neg << "\n"
     << "lambda = " << real_text(c.ccr.lambda_ctr) << "\n"
     << "ramp_epochs = " << real_text(c.ccr.ramp_epochs) << "\n"
     << "distance = " << to_string(c.ccr.distance) << "\n"
     << "sharing = " << nn::to_string(c.ccr.sharing) << "\n\n"
     << "[train]\n"
     << "epochs = " << c.train.epochs << "\n"
     << "batch_size = " << c.train.batch_size << "\n"
     << "lr = " << real_text(c.train.lr) << "\n"
     << "warmup_epochs = " << real_text(c.train.warmup_epochs) << "\n"
     << "weight_decay = " << real_text(c.train.adam.weight_decay) << "\n"
     << "seed = " << c.train.seed << "\n"
     << "mode = " << to_string(c.train.mode) << "\n";
  if (!c.train.single_task.empty()) os << "single_task = " << c.train.single_task << "\n";
  os << "\n"
     << "[analysis]\n"
     << "triplets = " << c.analysis.triplets << "\n"
     << "bins = " << c.analysis.bins << "\n"
     << "probe_epochs = " << c.analysis.probe_epochs << "\n"
     << "probe_lr = " << real_text(c.analysis.probe_lr) << "\n\n"
     << "[run]\n"
     << "out = " << c.out.string() << "\n";
  return os.str();
}

}  // namespace ccr
