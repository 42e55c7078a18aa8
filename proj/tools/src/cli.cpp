#include "ccr/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ccr/config.hpp"
#include "ccr/contrastive.hpp"
#include "ccr/harness.hpp"
#include "ccr/metrics.hpp"
#include "ccr/nets.hpp"
#include "ccr/synth.hpp"

namespace ccr {
namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string single_task;
  std::string out;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_mode) {
  cmd->add_option("--config", a.config, "INI run configuration (defaults when omitted)");
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--out", a.out, "Output directory");
  if (with_mode) {
    cmd->add_option("--mode", a.mode, "Training variant")
        ->check(CLI::IsMember({"baseline", "single-task", "ccr-basic", "proj", "proj-ss", "proj-ss-cts"}));
    cmd->add_option("--single-task", a.single_task, "Task trained alone in single-task mode");
    cmd->add_option("--epochs", a.epochs, "Override train.epochs");
  }
}

RunConfig resolve_config(const CommonArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = load_config(a.config);
  } else {
    const auto cwd = std::filesystem::current_path();
    cfg.data.train_manifest = cwd / cfg.data.train_manifest;
    cfg.data.test_manifest = cwd / cfg.data.test_manifest;
    cfg.data.reference = cwd / cfg.data.reference;
    cfg.out = cwd / cfg.out;
  }
  if (a.seed) cfg.train.seed = *a.seed;
  if (!a.mode.empty()) cfg.train.mode = parse_mode(a.mode);
  if (!a.single_task.empty()) cfg.train.single_task = a.single_task;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (!a.out.empty()) cfg.out = std::filesystem::absolute(a.out);
  cfg.finalize();
  return cfg;
}

std::vector<double> parse_doubles(const std::string& flag, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument(flag + ": bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// Both names given: exactly that pair (equal names are rejected later).
// Otherwise every ordered pair of distinct tasks matching the filters.
std::vector<std::pair<std::string, std::string>> pairs_for(const std::vector<TaskSpec>& tasks,
                                                           const std::string& target,
                                                           const std::string& source) {
  if (!target.empty() && !source.empty()) return {{target, source}};
  std::vector<std::pair<std::string, std::string>> out;
  for (const TaskSpec& t : tasks) {
    for (const TaskSpec& s : tasks) {
      if (s.name == t.name) continue;
      if ((target.empty() || t.name == target) && (source.empty() || s.name == source)) {
        out.emplace_back(t.name, s.name);
      }
    }
  }
  return out;
}

std::filesystem::path checkpoint_path(const std::string& flag, const RunConfig& cfg) {
  return flag.empty() ? cfg.out / "checkpoint.ccrt" : std::filesystem::path(flag);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-task contrastive regularization for multi-task dense prediction", "ccr"};
  app.require_subcommand(1);

  // gen-data
  CommonArgs gen;
  std::optional<std::size_t> n_train, n_test, size, classes;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset, manifests and a config template");
  add_common(gen_cmd, gen, false);
  gen_cmd->add_option("--train-samples", n_train, "Training scenes");
  gen_cmd->add_option("--test-samples", n_test, "Test scenes");
  gen_cmd->add_option("--size", size, "Image height and width");
  gen_cmd->add_option("--classes", classes, "Foreground classes");

  CommonArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a network; writes checkpoint.ccrt and train.log");
  add_common(train_cmd, train, true);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress lines");

  CommonArgs eval;
  std::string eval_ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split; writes metrics.json");
  add_common(eval_cmd, eval, false);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint (default <out>/checkpoint.ccrt)");

  CommonArgs ana;
  std::string ana_ckpt, ana_target, ana_source;
  std::optional<std::size_t> ana_triplets;
  auto* ana_cmd = app.add_subcommand("analyze-consistency",
                                     "Positive/negative feature distance histograms per task pair");
  add_common(ana_cmd, ana, false);
  ana_cmd->add_option("--checkpoint", ana_ckpt, "Checkpoint (default <out>/checkpoint.ccrt)");
  ana_cmd->add_option("--target", ana_target, "Target task (default: all)");
  ana_cmd->add_option("--source", ana_source, "Source task (default: all others)");
  ana_cmd->add_option("--triplets", ana_triplets, "Sampled triplets per pair");

  std::string multi, single, lower;
  auto* delta_cmd = app.add_subcommand("compute-delta", "Multi-task delta versus single-task scores, in percent");
  delta_cmd->add_option("--multi", multi, "Comma-separated multi-task scores")->required();
  delta_cmd->add_option("--single", single, "Comma-separated single-task scores")->required();
  delta_cmd->add_option("--lower-better", lower, "Comma-separated 0/1 flags")->required();

  CommonArgs dump;
  std::string dump_ckpt, dump_target, dump_source;
  std::size_t dump_sample = 0;
  auto* dump_cmd = app.add_subcommand("dump-triplets", "Mine triplets on one test image and write them as a blob");
  add_common(dump_cmd, dump, false);
  dump_cmd->add_option("--checkpoint", dump_ckpt, "Checkpoint (default <out>/checkpoint.ccrt)");
  dump_cmd->add_option("--target", dump_target, "Target task")->required();
  dump_cmd->add_option("--source", dump_source, "Source task")->required();
  dump_cmd->add_option("--sample", dump_sample, "Test sample index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen_cmd->parsed()) {
      RunConfig cfg = resolve_config(gen);
      if (n_train) cfg.data.train_samples = *n_train;
      if (n_test) cfg.data.test_samples = *n_test;
      if (size) cfg.data.size = *size;
      if (classes) cfg.data.classes = *classes;
      const std::filesystem::path dir = gen.out.empty() ? cfg.data.train_manifest.parent_path()
                                                        : std::filesystem::absolute(gen.out);
      SynthOptions opts;
      opts.height = opts.width = cfg.data.size;
      opts.classes = cfg.data.classes;
      const std::uint64_t seed = cfg.train.seed;
      // Train and test draw from disjoint child streams of the seed.
      generate_dataset(cfg.data.train_samples, opts, Rng(seed).split("train").next_u64(), dir, "train");
      generate_dataset(cfg.data.test_samples, opts, Rng(seed).split("test").next_u64(), dir, "test");
      if (gen.config.empty()) {
        RunConfig tmpl = cfg;
        tmpl.data.train_manifest = "train.tsv";
        tmpl.data.test_manifest = "test.tsv";
        tmpl.data.reference = "reference.tsv";
        tmpl.out = "run";
        std::ofstream os(dir / "config.ini", std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + (dir / "config.ini").string());
        os << render_config(tmpl);
      }
      out << "wrote " << cfg.data.train_samples << " train and " << cfg.data.test_samples << " test samples to "
          << dir.string() << "\n";
    } else if (train_cmd->parsed()) {
      const RunConfig cfg = resolve_config(train);
      EpochCallback progress;
      if (!quiet) {
        progress = [&out, &cfg](std::size_t e, double loss) {
          out << "epoch " << e << "/" << cfg.train.epochs << "\tloss " << loss << "\n" << std::flush;
        };
      }
      run_training(cfg, cfg.out, progress);
      out << "wrote " << (cfg.out / "checkpoint.ccrt").string() << "\n";
    } else if (eval_cmd->parsed()) {
      const RunConfig cfg = resolve_config(eval);
      const EvalReport r = run_evaluation(cfg, checkpoint_path(eval_ckpt, cfg), cfg.out);
      out << r.to_json();
    } else if (ana_cmd->parsed()) {
      RunConfig cfg = resolve_config(ana);
      if (ana_triplets) cfg.analysis.triplets = *ana_triplets;
      const nn::Checkpoint ckpt = nn::read_checkpoint(checkpoint_path(ana_ckpt, cfg));
      const nn::MultiTaskNet probe_net = nn::load_network(ckpt);
      std::filesystem::create_directories(cfg.out);
      const auto pairs = pairs_for(probe_net.tasks(), ana_target, ana_source);
      if (pairs.empty()) throw std::invalid_argument("no (target, source) pair matches the given tasks");
      for (const auto& [t, s] : pairs) {
        const ConsistencyReport r = analyze_consistency(cfg, ckpt, t, s, cfg.train.seed);
        const auto path = cfg.out / ("consistency_" + t + "_" + s + ".hist");
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        os << r.to_text();
        out << t << "\t" << s << "\t" << r.feature_space << "\tpos " << r.pos_mean << "\tneg " << r.neg_mean
            << "\tgap " << r.gap() << "\n";
      }
    } else if (delta_cmd->parsed()) {
      const auto m = parse_doubles("--multi", multi);
      const auto s = parse_doubles("--single", single);
      const auto l = parse_doubles("--lower-better", lower);
      std::vector<bool> flags;
      for (double v : l) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("--lower-better: flags must be 0 or 1");
        flags.push_back(v == 1.0);
      }
      out << std::fixed << std::setprecision(4) << delta_m(m, s, flags) << "\n";
    } else if (dump_cmd->parsed()) {
      const RunConfig cfg = resolve_config(dump);
      if (dump_target == dump_source) {
        throw std::invalid_argument("target and source are both '" + dump_target + "'");
      }
      nn::MultiTaskNet net = nn::load_network(nn::read_checkpoint(checkpoint_path(dump_ckpt, cfg)));
      const std::size_t t = net.task_index(dump_target), s = net.task_index(dump_source);
      const PreparedData data = load_prepared(cfg.data.test_manifest, net.tasks());
      if (dump_sample >= data.size()) {
        throw std::out_of_range("--sample " + std::to_string(dump_sample) + " but the test split has " +
                                std::to_string(data.size()) + " samples");
      }
      const std::size_t one[] = {dump_sample};
      Graph g(Graph::Mode::kNoGrad);
      const auto res = net.forward(g, stack_images(data, one), false);
      const Tensor fp = net.project(g, t, s, res[t].features, false);
      Rng rng = Rng(cfg.train.seed).split("dump");
      const TripletBatch tb = mine_triplets(fp, 0, data.low[s][dump_sample], net.tasks()[s].label_metric,
                                            cfg.ccr, rng);
      std::filesystem::create_directories(cfg.out);
      const std::string name = "triplets_" + dump_target + "_" + dump_source + "_" + std::to_string(dump_sample);
      write_blob(cfg.out / (name + ".ccrt"), triplets_to_blob(name, tb, cfg.ccr.c_neg));
      out << "wrote " << tb.anchors.size() << " anchors, " << tb.triplet_count() << " triplets to "
          << (cfg.out / (name + ".ccrt")).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    err << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ccr
