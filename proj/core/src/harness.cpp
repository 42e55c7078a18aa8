#include "ccr/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ccr/autodiff.hpp"
#include "ccr/metrics.hpp"
#include "ccr/ops.hpp"

namespace ccr {
namespace {

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const LabelMap& sample_labels(const SceneSample& s, const TaskSpec& t) {
  if (t.name == "seg") return s.seg;
  if (t.name == "depth") return s.depth;
  if (t.name == "orient") return s.orient;
  throw std::invalid_argument("dataset has no labels for task '" + t.name + "'");
}

std::vector<LabelMap> select(const std::vector<LabelMap>& maps, std::span<const std::size_t> idx) {
  std::vector<LabelMap> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(maps[i]);
  return out;
}

std::vector<Tensor> trainable(const nn::MultiTaskNet& net) {
  std::vector<Tensor> out;
  for (const nn::NamedTensor& p : net.parameters()) out.push_back(p.tensor);
  return out;
}

// Image `b` of a [B x C x H x W] tensor as [C x H x W].
Tensor slice_image(const Tensor& x, std::size_t b) {
  const std::size_t per = x.dim(1) * x.dim(2) * x.dim(3);
  const auto src = x.data().subspan(b * per, per);
  return Tensor({x.dim(1), x.dim(2), x.dim(3)}, std::vector<double>(src.begin(), src.end()));
}

Tensor concat_images(const std::vector<Tensor>& maps, std::span<const std::size_t> idx) {
  const Shape& s = maps.at(idx[0]).shape();
  const std::size_t per = s[1] * s[2] * s[3];
  std::vector<double> v;
  v.reserve(idx.size() * per);
  for (std::size_t i : idx) {
    const auto d = maps[i].data();
    v.insert(v.end(), d.begin(), d.end());
  }
  return Tensor({idx.size(), s[1], s[2], s[3]}, std::move(v));
}

}  // namespace

PreparedData prepare_data(const std::vector<SceneSample>& samples, const std::vector<TaskSpec>& tasks) {
  PreparedData d;
  d.tasks = tasks;
  d.labels.resize(tasks.size());
  d.low.resize(tasks.size());
  for (const SceneSample& s : samples) {
    d.images.push_back(s.image);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const LabelMap& full = sample_labels(s, tasks[t]);
      if (tasks[t].kind == TaskKind::kDiscrete) {
        for (std::int32_t c : full.classes()) {
          if (c != LabelMap::kIgnore && (c < 0 || static_cast<std::size_t>(c) >= tasks[t].channels)) {
            throw std::invalid_argument("task '" + tasks[t].name + "' has " + std::to_string(tasks[t].channels) +
                                        " classes but the dataset holds label " + std::to_string(c) +
                                        " (check data.classes)");
          }
        }
      }
      d.labels[t].push_back(full);
      d.low[t].push_back(downsample_labels(full, tasks[t].label_metric));
    }
  }
  return d;
}

PreparedData load_prepared(const std::filesystem::path& manifest, const std::vector<TaskSpec>& tasks) {
  return prepare_data(load_dataset(manifest), tasks);
}

Tensor stack_images(const PreparedData& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_images: no indices");
  const Shape& s = data.images.at(indices[0]).shape();
  std::vector<double> v;
  v.reserve(indices.size() * numel(s));
  for (std::size_t i : indices) {
    const auto d = data.images.at(i).data();
    v.insert(v.end(), d.begin(), d.end());
  }
  return Tensor({indices.size(), s[0], s[1], s[2]}, std::move(v));
}

nn::MultiTaskNet train_network(const RunConfig& cfg, const PreparedData& data, std::ostream* log,
                               const EpochCallback& on_epoch) {
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");
  const std::vector<TaskSpec> specs = cfg.trained_specs();
  if (specs.size() != data.tasks.size()) throw std::invalid_argument("train: data prepared for other tasks");
  const bool ccr_on = uses_ccr(cfg.train.mode);

  const Rng root(cfg.train.seed);
  nn::MultiTaskNet net(cfg.net, specs, cfg.train.seed);
  Rng data_rng = root.split("data");
  const Rng ccr_rng = root.split("ccr");

  std::vector<Tensor> params = trainable(net);
  AdamState adam;
  const std::size_t batch = cfg.train.batch_size;
  const std::size_t steps_per_epoch = (data.size() + batch - 1) / batch;
  const double warmup_steps = cfg.train.warmup_epochs * static_cast<double>(steps_per_epoch);

  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    data_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < order.size(); first += batch, ++step) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(batch, order.size() - first));
      const double epoch_f = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
      const double lr =
          warmup_steps > 0.0 ? cfg.train.lr * std::min(1.0, static_cast<double>(step + 1) / warmup_steps)
                             : cfg.train.lr;

      Graph g;
      const std::vector<nn::TaskOutput> out = net.forward(g, stack_images(data, idx), true);
      std::vector<std::pair<std::string, double>> parts;
      Tensor total;
      for (std::size_t t = 0; t < specs.size(); ++t) {
        const std::vector<LabelMap> lbl = select(data.labels[t], idx);
        Tensor lt = task_loss(g, specs[t], out[t].prediction, lbl);
        parts.emplace_back("loss." + specs[t].name, lt.item());
        Tensor w = ops::scale(g, lt, specs[t].loss_weight);
        total = total.defined() ? ops::add(g, total, w) : w;
      }
      if (ccr_on) {
        std::vector<Tensor> feats;
        std::vector<std::vector<LabelMap>> low;
        for (std::size_t t = 0; t < specs.size(); ++t) {
          feats.push_back(out[t].features);
          low.push_back(select(data.low[t], idx));
        }
        Rng step_rng = ccr_rng.split(static_cast<std::uint64_t>(step));
        const CtrResult ctr = ctr_loss(g, net, feats, low, cfg.ccr, step_rng, true);
        const double lambda = cfg.ccr.effective_lambda(epoch_f);
        parts.emplace_back("ctr", ctr.loss.item());
        parts.emplace_back("lambda_ctr", lambda);
        total = ops::add(g, total, ops::scale(g, ctr.loss, lambda));
      }
      parts.emplace_back("total", total.item());
      parts.emplace_back("lr", lr);

      for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) {
          std::ostringstream msg;
          msg << "non-finite loss at step " << step << ":";
          for (const auto& [n2, v2] : parts) msg << ' ' << n2 << '=' << v2;
          throw std::runtime_error(msg.str());
        }
      }
      if (log) {
        for (const auto& [name, v] : parts) *log << step << '\t' << name << '\t' << num(v) << '\n';
      }
      epoch_loss += total.item();

      for (Tensor& p : params) {
        p.mutable_grad();
        p.zero_grad();
      }
      g.backward(total);
      adam_step(params, adam, lr, cfg.train.adam);
    }
    if (on_epoch) on_epoch(epoch + 1, epoch_loss / static_cast<double>(steps_per_epoch));
  }
  return net;
}

void run_training(const RunConfig& cfg, const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  const PreparedData data = load_prepared(cfg.data.train_manifest, cfg.trained_specs());
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "train.log", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (out_dir / "train.log").string());
  nn::MultiTaskNet net = train_network(cfg, data, &log, on_epoch);
  save_checkpoint(out_dir / "checkpoint.ccrt", net,
                  {{"run.mode", to_string(cfg.train.mode)},
                   {"run.seed", std::to_string(cfg.train.seed)},
                   {"run.epochs", std::to_string(cfg.train.epochs)},
                   {"data.classes", std::to_string(cfg.data.classes)}});
}

std::vector<std::vector<Tensor>> predict(nn::MultiTaskNet& net, const PreparedData& data,
                                         std::size_t batch_size) {
  std::vector<std::vector<Tensor>> out(net.tasks().size());
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    idx.clear();
    for (std::size_t i = first; i < std::min(data.size(), first + batch_size); ++i) idx.push_back(i);
    Graph g(Graph::Mode::kNoGrad);
    const std::vector<nn::TaskOutput> res = net.forward(g, stack_images(data, idx), false);
    for (std::size_t t = 0; t < res.size(); ++t) {
      for (std::size_t b = 0; b < idx.size(); ++b) out[t].push_back(slice_image(res[t].prediction, b));
    }
  }
  return out;
}

EvalReport evaluate_network(nn::MultiTaskNet& net, const PreparedData& data, std::size_t batch_size) {
  if (net.tasks().size() != data.tasks.size()) {
    throw std::invalid_argument("eval: checkpoint has " + std::to_string(net.tasks().size()) +
                                " tasks, dataset prepared for " + std::to_string(data.tasks.size()));
  }
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    if (net.tasks()[t].name != data.tasks[t].name || net.tasks()[t].channels != data.tasks[t].channels) {
      throw std::invalid_argument("eval: task mismatch between checkpoint ('" + net.tasks()[t].name +
                                  "') and dataset ('" + data.tasks[t].name + "')");
    }
  }
  const auto preds = predict(net, data, batch_size);
  EvalReport r;
  r.tasks = net.tasks();
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    TaskEvaluator ev(r.tasks[t]);
    for (std::size_t i = 0; i < data.size(); ++i) ev.add(preds[t][i].data(), data.labels[t][i]);
    r.scores.push_back(ev.value());
  }
  return r;
}

std::map<std::string, double> read_reference(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("reference not found: " + path.string());
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("reference: malformed line '" + line + "'");
    out[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
  }
  return out;
}

void write_reference(const std::filesystem::path& path, const std::map<std::string, double>& scores) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [task, v] : scores) os << task << '\t' << num(v) << '\n';
}

void attach_delta_m(EvalReport& report, const std::map<std::string, double>& reference) {
  std::vector<double> single;
  for (const TaskSpec& t : report.tasks) {
    const auto it = reference.find(t.name);
    if (it == reference.end()) {
      report.delta_m.reset();
      report.note = "no single-task reference for '" + t.name + "'";
      return;
    }
    single.push_back(it->second);
  }
  report.delta_m = delta_m(report.scores, single, std::span<const TaskSpec>(report.tasks));
  report.note.clear();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per_task = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    per_task[tasks[t].name] = {{"metric", to_string(tasks[t].eval_metric)},
                               {"value", scores[t]},
                               {"lower_is_better", tasks[t].lower_is_better}};
  }
  j["tasks"] = per_task;
  j["delta_m"] = delta_m ? nlohmann::ordered_json(*delta_m) : nlohmann::ordered_json(nullptr);
  if (!note.empty()) j["note"] = note;
  return j.dump(2) + "\n";
}

EvalReport run_evaluation(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& out_dir) {
  nn::Checkpoint ckpt = nn::read_checkpoint(checkpoint);
  // Inference never needs the contrastive branch.
  std::erase_if(ckpt.tensors, [](const nn::NamedTensor& t) { return t.name.rfind("projector.", 0) == 0; });
  nn::MultiTaskNet net = nn::load_network(ckpt);
  const PreparedData data = load_prepared(cfg.data.test_manifest, net.tasks());
  EvalReport r = evaluate_network(net, data, cfg.train.batch_size);
  if (std::filesystem::exists(cfg.data.reference)) {
    attach_delta_m(r, read_reference(cfg.data.reference));
  } else {
    r.note = "reference file not found: " + cfg.data.reference.string();
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir / "metrics.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + (out_dir / "metrics.json").string());
  os << r.to_json();
  return r;
}

std::string ConsistencyReport::to_text() const {
  std::ostringstream os;
  os << "# target\t" << target << "\n# source\t" << source << "\n# features\t" << feature_space
     << "\n# triplets\t" << triplets << "\n# pos_mean\t" << num(pos_mean) << "\n# pos_sd\t" << num(pos_sd)
     << "\n# neg_mean\t" << num(neg_mean) << "\n# neg_sd\t" << num(neg_sd) << "\n# gap\t" << num(gap())
     << "\n# lo\thi\tpos\tneg\n";
  const std::size_t bins = pos_hist.size();
  for (std::size_t i = 0; i < bins; ++i) {
    const double lo = hist_max * static_cast<double>(i) / static_cast<double>(bins);
    const double hi = hist_max * static_cast<double>(i + 1) / static_cast<double>(bins);
    os << num(lo) << '\t' << num(hi) << '\t' << pos_hist[i] << '\t' << neg_hist[i] << '\n';
  }
  return os.str();
}

std::vector<Tensor> target_features(nn::MultiTaskNet& net, const PreparedData& data, std::size_t target,
                                    std::size_t batch_size) {
  std::vector<Tensor> out;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    idx.clear();
    for (std::size_t i = first; i < std::min(data.size(), first + batch_size); ++i) idx.push_back(i);
    Graph g(Graph::Mode::kNoGrad);
    const auto res = net.forward(g, stack_images(data, idx), false);
    const Tensor& f = res.at(target).features;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Tensor one = slice_image(f, b);
      out.push_back(Tensor({1, f.dim(1), f.dim(2), f.dim(3)},
                           std::vector<double>(one.data().begin(), one.data().end())));
    }
  }
  return out;
}

nn::Projector train_probe(const std::vector<Tensor>& features, const std::vector<LabelMap>& source_low,
                          LabelMetric metric, const CcrConfig& ccr, const nn::NetConfig& net_cfg,
                          std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
  if (features.empty() || features.size() != source_low.size()) {
    throw std::invalid_argument("probe: need one label map per feature map");
  }
  Rng init = Rng(seed).split("probe-init");
  Rng order_rng = Rng(seed).split("probe-data");
  const Rng mine_rng = Rng(seed).split("probe-mining");
  nn::Projector probe(features[0].dim(1), net_cfg.proj_channels, init);
  std::vector<nn::NamedTensor> named;
  probe.collect_params("probe", named);
  std::vector<Tensor> params;
  for (auto& n : named) params.push_back(n.tensor);
  AdamState state;
  AdamOptions opts;

  std::vector<std::size_t> order(features.size());
  std::size_t step = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    for (std::size_t first = 0; first < order.size(); first += batch_size, ++step) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(batch_size, order.size() - first));
      Graph g;
      const Tensor fp = probe(g, concat_images(features, idx), true);
      Rng step_rng = mine_rng.split(static_cast<std::uint64_t>(step));
      Tensor sum_r;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        Rng image_rng = step_rng.split(static_cast<std::uint64_t>(b));
        const TripletBatch tb = mine_triplets(fp, b, source_low[idx[b]], metric, ccr, image_rng);
        if (tb.empty()) continue;
        Tensor r = triplet_regularization(g, fp, b, tb, ccr.margin, ccr.distance);
        sum_r = sum_r.defined() ? ops::add(g, sum_r, r) : r;
      }
      if (!sum_r.defined()) continue;
      Tensor loss = ops::scale(g, sum_r, 1.0 / static_cast<double>(idx.size()));
      for (Tensor& p : params) {
        p.mutable_grad();
        p.zero_grad();
      }
      g.backward(loss);
      adam_step(params, state, lr, opts);
    }
  }
  return probe;
}

ConsistencyReport measure_consistency(const std::vector<Tensor>& projected,
                                      const std::vector<LabelMap>& source_low, LabelMetric metric,
                                      std::size_t topk, std::size_t n_triplets, std::size_t bins, Rng& rng) {
  if (n_triplets < 1) throw std::invalid_argument("analysis: need at least one triplet");
  if (projected.empty() || projected.size() != source_low.size()) {
    throw std::invalid_argument("analysis: need one label map per projected map");
  }
  ConsistencyReport r;
  r.pos_hist.assign(bins, 0);
  r.neg_hist.assign(bins, 0);
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::size_t>> labelled(projected.size());
  for (std::size_t i = 0; i < projected.size(); ++i) {
    rows.push_back(pixel_rows(projected[i], 0));
    for (std::size_t p = 0; p < source_low[i].pixels(); ++p) {
      if (!source_low[i].ignored(p)) labelled[i].push_back(p);
    }
  }
  const std::size_t c = projected[0].dim(1);
  auto bin_of = [&](double d) {
    const auto b = static_cast<std::size_t>(std::floor(d / r.hist_max * static_cast<double>(bins)));
    return std::min(b, bins - 1);
  };
  double sp = 0, sp2 = 0, sn = 0, sn2 = 0;
  std::size_t attempts = 0;
  while (r.triplets < n_triplets) {
    if (++attempts > 100 * n_triplets + 1000) {
      throw std::runtime_error("analysis: labels admit too few valid triplets");
    }
    const std::size_t img = rng.uniform_index(projected.size());
    if (labelled[img].empty()) continue;
    const std::size_t a = labelled[img][rng.uniform_index(labelled[img].size())];
    const Partition part = partition(source_low[img], a, topk, metric);
    if (!part.valid) continue;
    const std::size_t p = part.positives[rng.uniform_index(part.positives.size())];
    const std::size_t n = part.negatives[rng.uniform_index(part.negatives.size())];
    const double* base = rows[img].data();
    const std::span<const double> fa(base + a * c, c), fpos(base + p * c, c), fneg(base + n * c, c);
    const double dp = feature_distance(fa, fpos, DistanceKind::kSquaredL2);
    const double dn = feature_distance(fa, fneg, DistanceKind::kSquaredL2);
    ++r.pos_hist[bin_of(dp)];
    ++r.neg_hist[bin_of(dn)];
    sp += dp;
    sp2 += dp * dp;
    sn += dn;
    sn2 += dn * dn;
    ++r.triplets;
  }
  const double n = static_cast<double>(r.triplets);
  r.pos_mean = sp / n;
  r.neg_mean = sn / n;
  r.pos_sd = std::sqrt(std::max(0.0, sp2 / n - r.pos_mean * r.pos_mean));
  r.neg_sd = std::sqrt(std::max(0.0, sn2 / n - r.neg_mean * r.neg_mean));
  return r;
}

ConsistencyReport analyze_consistency(const RunConfig& cfg, const nn::Checkpoint& checkpoint,
                                      const std::string& target, const std::string& source,
                                      std::uint64_t seed) {
  if (target == source) {
    throw std::invalid_argument("analysis: target and source are both '" + target +
                                "'; a task is never its own source");
  }
  nn::MultiTaskNet net = nn::load_network(checkpoint);
  const std::size_t t = net.task_index(target), s = net.task_index(source);
  const PreparedData test = load_prepared(cfg.data.test_manifest, net.tasks());
  const std::size_t batch = cfg.train.batch_size;
  const LabelMetric metric = net.tasks()[s].label_metric;

  std::vector<Tensor> test_feats = target_features(net, test, t, batch);
  std::vector<Tensor> projected;
  std::string space;
  if (net.has_projectors()) {
    space = "projector";
    for (const Tensor& f : test_feats) {
      Graph g(Graph::Mode::kNoGrad);
      projected.push_back(net.project(g, t, s, f, false));
    }
  } else if (cfg.analysis.probe_epochs > 0) {
    space = "probe";
    const PreparedData train = load_prepared(cfg.data.train_manifest, net.tasks());
    nn::Projector probe =
        train_probe(target_features(net, train, t, batch), train.low[s], metric, cfg.ccr, net.config(),
                    cfg.analysis.probe_epochs, batch, cfg.analysis.probe_lr, seed);
    for (const Tensor& f : test_feats) {
      Graph g(Graph::Mode::kNoGrad);
      projected.push_back(probe(g, f, false));
    }
  } else {
    space = "normalized";
    for (const Tensor& f : test_feats) {
      Graph g(Graph::Mode::kNoGrad);
      projected.push_back(ops::l2_normalize_pixels(g, f));
    }
  }
  Rng rng = Rng(seed).split("analysis");
  ConsistencyReport r = measure_consistency(projected, test.low[s], metric, cfg.ccr.topk,
                                            cfg.analysis.triplets, cfg.analysis.bins, rng);
  r.target = target;
  r.source = source;
  r.feature_space = space;
  return r;
}

}  // namespace ccr
