#include "apiarius/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "apiarius/csv.hpp"
#include "apiarius/svg.hpp"

namespace apiarius::eval {

std::vector<std::string> FoldPlan::hives(int fold) const {
  std::vector<std::string> out;
  for (const auto& [h, f] : fold_of) {
    if (f == fold) out.push_back(h);
  }
  return out;
}

std::vector<int> FoldPlan::sizes() const {
  std::vector<int> s(static_cast<std::size_t>(k), 0);
  for (const auto& [h, f] : fold_of) ++s[static_cast<std::size_t>(f)];
  return s;
}

FoldPlan partition_folds(std::vector<std::string> hive_ids, int k, uint64_t seed) {
  std::sort(hive_ids.begin(), hive_ids.end());
  if (std::adjacent_find(hive_ids.begin(), hive_ids.end()) != hive_ids.end()) {
    throw Error("partition_folds: duplicate hive id");
  }
  if (k < 1 || static_cast<std::size_t>(k) > hive_ids.size()) {
    throw Error("partition_folds: k = " + std::to_string(k) + " needs 1 <= k <= " +
                std::to_string(hive_ids.size()) + " hives");
  }
  Rng rng(seed);
  for (std::size_t i = hive_ids.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(hive_ids[i - 1], hive_ids[d(rng)]);
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < hive_ids.size(); ++i) {
    plan.fold_of[hive_ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return plan;
}

void assert_disjoint(std::span<const std::string> train, std::span<const std::string> val) {
  std::set<std::string> t(train.begin(), train.end());
  for (const std::string& v : val) {
    if (t.count(v)) throw Error("fold leakage: hive " + v + " in both train and validation");
  }
}

const char* model_name(ModelKind m) {
  switch (m) {
    case ModelKind::kGpnUnlabeled: return "gpn-unlabeled";
    case ModelKind::kGpnLabeled: return "gpn-labeled";
    case ModelKind::kBaselineMlp: return "baseline-mlp";
  }
  return "";
}

ModelKind parse_model(const std::string& text) {
  for (ModelKind m : {ModelKind::kGpnUnlabeled, ModelKind::kGpnLabeled, ModelKind::kBaselineMlp}) {
    if (text == model_name(m)) return m;
  }
  throw Error("unknown model '" + text + "'");
}

std::shared_ptr<const PretrainCache::Entry> PretrainCache::find(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void PretrainCache::put(const std::string& key, std::shared_ptr<const Entry> e) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_[key] = std::move(e);
}

// --- cross-validation -----------------------------------------------------------------

namespace {

data::NormStats fit_env(const CvData& d, std::span<const std::size_t> days) {
  data::NormStats n;
  n.min.fill(std::numeric_limits<double>::infinity());
  n.max.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t i : days) {
    const auto& e = d.days[i].env;
    for (int c = 0; c < data::kEnvChannels; ++c) {
      n.min[static_cast<std::size_t>(c)] = std::min(n.min[static_cast<std::size_t>(c)], e.row(c).minCoeff());
      n.max[static_cast<std::size_t>(c)] = std::max(n.max[static_cast<std::size_t>(c)], e.row(c).maxCoeff());
    }
  }
  return n;
}

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

struct TaskScores {
  double frames = 0.0, type = 0.0, severity = 0.0;
};

TaskScores score(std::span<const gpn::DayPrediction> preds, std::span<const gpn::Example> ex,
                 double delta) {
  TaskScores s;
  const double n = static_cast<double>(ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    s.frames += huber(preds[i].frames - ex[i].target.frames, delta) / n;
    s.severity += huber(preds[i].severity - ex[i].target.severity, delta) / n;
    s.type += (preds[i].type() == ex[i].target.type ? 1.0 : 0.0) / n;
  }
  return s;
}

struct FoldOutput {
  FoldReport report;
  std::vector<MetricRecord> metrics;
  std::vector<PredictionRow> predictions;
};

FoldOutput run_fold(const CvData& data, const FoldPlan& plan, const CvOptions& opt, int fold) {
  FoldOutput out;
  FoldReport& rep = out.report;
  rep.fold = fold;
  const std::string model = model_name(opt.model);
  gpn::ModelConfig cfg = opt.cfg;
  cfg.semi_supervised = opt.model == ModelKind::kGpnUnlabeled;

  std::vector<std::size_t> train_days;
  std::vector<gpn::Example> train_ex, val_ex;
  for (std::size_t i = 0; i < data.days.size(); ++i) {
    auto it = plan.fold_of.find(data.days[i].hive_id);
    if (it == plan.fold_of.end()) throw Error("hive " + data.days[i].hive_id + " not in fold plan");
    if (it->second != fold) train_days.push_back(i);
  }
  const data::NormStats norm = fit_env(data, train_days);
  std::set<std::size_t> labeled_train_days;
  for (const data::LabeledDay& l : data.labeled) {
    auto it = plan.fold_of.find(l.label.hive_id);
    if (it == plan.fold_of.end()) throw Error("labeled hive " + l.label.hive_id + " not in fold plan");
    gpn::Example e{l.day, gpn::make_target(l.label, norm), l.label};
    if (it->second == fold) {
      val_ex.push_back(e);
    } else {
      train_ex.push_back(e);
      labeled_train_days.insert(l.day);
    }
  }
  rep.n_train_labeled = static_cast<int>(train_ex.size());
  rep.n_val_labeled = static_cast<int>(val_ex.size());

  // Training pool as actually consumed, checked against the validation hives.
  std::vector<std::size_t> pool = cfg.semi_supervised
                                      ? train_days
                                      : std::vector<std::size_t>(labeled_train_days.begin(),
                                                                 labeled_train_days.end());
  std::set<std::string> th, vh;
  for (std::size_t i : pool) th.insert(data.days[i].hive_id);
  // Unlabeled validation-hive days join the ELBO pool only; they never carry a label, so
  // they are kept out of the hive disjointness check.
  if (cfg.semi_supervised && opt.unlabeled_val_hives) {
    std::set<std::size_t> labeled;
    for (const data::LabeledDay& l : data.labeled) labeled.insert(l.day);
    for (std::size_t i = 0; i < data.days.size(); ++i) {
      if (plan.fold_of.at(data.days[i].hive_id) == fold && !labeled.count(i)) pool.push_back(i);
    }
  }
  for (const gpn::Example& e : train_ex) th.insert(data.days[e.day].hive_id);
  for (const gpn::Example& e : val_ex) vh.insert(data.days[e.day].hive_id);
  for (const std::string& h : plan.hives(fold)) vh.insert(h);
  rep.train_hives.assign(th.begin(), th.end());
  rep.val_hives.assign(vh.begin(), vh.end());
  assert_disjoint(rep.train_hives, rep.val_hives);

  if (val_ex.empty() || train_ex.empty()) {
    rep.empty = true;
    return out;
  }

  auto record = [&](int iteration, const TaskScores& s) {
    out.metrics.push_back({opt.run_id, model, fold, iteration, "frames", s.frames});
    out.metrics.push_back({opt.run_id, model, fold, iteration, "type", s.type});
    out.metrics.push_back({opt.run_id, model, fold, iteration, "severity", s.severity});
  };
  auto emit = [&](std::span<const gpn::DayPrediction> preds) {
    for (std::size_t i = 0; i < val_ex.size(); ++i) {
      const auto& l = val_ex[i].label;
      const gpn::DayPrediction& p = preds[i];
      out.predictions.push_back({opt.run_id, model, fold, l.hive_id, data.days[val_ex[i].day].date,
                                 "frames", norm.frames_raw(p.frames),
                                 static_cast<double>(l.frames_bees)});
      out.predictions.push_back({opt.run_id, model, fold, l.hive_id, data.days[val_ex[i].day].date,
                                 "type", static_cast<double>(p.type()),
                                 static_cast<double>(l.disease_type)});
      out.predictions.push_back({opt.run_id, model, fold, l.hive_id, data.days[val_ex[i].day].date,
                                 "severity", p.severity, val_ex[i].target.severity});
    }
  };

  const uint64_t fold_seed = split_seed(opt.seed, 100 + static_cast<uint64_t>(fold));
  gpn::TrainContext ctx;
  ctx.days = data.days;
  ctx.norm = &norm;

  if (opt.model == ModelKind::kBaselineMlp) {
    gpn::BaselineModel m = gpn::baseline_mlp(
        ctx, train_ex, cfg, split_seed(fold_seed, 1), [&](gpn::BaselineModel& bm, int it) {
          record(it, score(gpn::predict_baseline(bm, data.days, val_ex, norm, cfg), val_ex,
                           cfg.huber_delta));
        });
    rep.curve = ctx.curve;
    emit(gpn::predict_baseline(m, data.days, val_ex, norm, cfg));
    return out;
  }

  // Pretraining, shared through the cache when one is given.
  const std::string key = std::string(cfg.semi_supervised ? "pool-all" : "pool-labeled") +
                          (cfg.semi_supervised && opt.unlabeled_val_hives ? "+val" : "") +
                          "/fold" + std::to_string(fold) + "/seed" + std::to_string(opt.seed);
  std::shared_ptr<const PretrainCache::Entry> entry = opt.cache ? opt.cache->find(key) : nullptr;
  if (!entry) {
    auto e = std::make_shared<PretrainCache::Entry>();
    Rng init_rng(split_seed(fold_seed, 1));
    e->params = gpn::init_gpn(cfg, init_rng);
    gpn::Trainer pre(cfg, e->params, split_seed(fold_seed, 2));
    gpn::TrainContext pctx;
    pctx.days = data.days;
    pctx.on_metric = [&](int it) { e->snapshots.emplace_back(it, e->params.enc); };
    pre.pretrain(pctx, pool);
    e->curve = pctx.curve;
    entry = e;
    if (opt.cache) opt.cache->put(key, entry);
  }
  gpn::GpnParams params = entry->params;
  for (const auto& [it, enc] : entry->snapshots) {
    gpn::GpnParams snap = params;
    snap.enc = enc;
    record(it, score(gpn::predict_examples(snap, data.days, val_ex, norm, cfg), val_ex,
                     cfg.huber_delta));
  }
  ctx.curve = entry->curve;
  ctx.iteration = cfg.pretrain_iters;
  ctx.on_metric = [&](int it) {
    record(it, score(gpn::predict_examples(params, data.days, val_ex, norm, cfg), val_ex,
                     cfg.huber_delta));
  };
  gpn::Trainer joint(cfg, params, split_seed(fold_seed, 3));
  joint.train_joint(ctx, train_ex, cfg.semi_supervised ? std::span<const std::size_t>(pool)
                                                       : std::span<const std::size_t>());
  rep.curve = ctx.curve;
  if (!opt.checkpoint_dir.empty()) {
    gpn::save_gpn(opt.checkpoint_dir / (model + "_fold" + std::to_string(fold) + ".ckpt"), params);
  }
  emit(gpn::predict_examples(params, data.days, val_ex, norm, cfg));
  return out;
}

}  // namespace

CvResult run_cv(const CvData& data, const FoldPlan& plan, const CvOptions& opt) {
  opt.cfg.validate();
  std::vector<FoldOutput> outs(static_cast<std::size_t>(plan.k));
  const int workers = std::clamp(opt.threads, 1, plan.k);
  if (workers == 1) {
    for (int f = 0; f < plan.k; ++f) outs[static_cast<std::size_t>(f)] = run_fold(data, plan, opt, f);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(plan.k));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int f = w; f < plan.k; f += workers) {
          try {
            outs[static_cast<std::size_t>(f)] = run_fold(data, plan, opt, f);
          } catch (...) {
            errors[static_cast<std::size_t>(f)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  CvResult r;
  for (FoldOutput& o : outs) {
    r.folds.push_back(std::move(o.report));
    r.metrics.insert(r.metrics.end(), o.metrics.begin(), o.metrics.end());
    r.predictions.insert(r.predictions.end(), o.predictions.begin(), o.predictions.end());
  }
  return r;
}

// --- metrics ------------------------------------------------------------------------

CdfResult cdf_frames(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) throw ShapeError("cdf_frames: prediction/label count mismatch");
  CdfResult c;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - label[i];
    const double pct = d / std::max(label[i], 1.0);
    c.abs_diff.push_back(std::abs(d));
    c.pct_diff.push_back(pct);
    if (std::abs(pct) <= kBand) ++inside;
  }
  std::sort(c.abs_diff.begin(), c.abs_diff.end());
  std::sort(c.pct_diff.begin(), c.pct_diff.end());
  c.within_band = pred.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(pred.size());
  return c;
}

std::vector<double> cdf_levels(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  return v;
}

std::vector<RunMetric> final_metrics(const CvResult& r, double huber_delta, double frames_divisor) {
  std::map<std::pair<std::string, std::string>, std::vector<const PredictionRow*>> by;
  for (const PredictionRow& p : r.predictions) by[{p.model, p.run}].push_back(&p);
  std::vector<RunMetric> out;
  for (const auto& [key, rows] : by) {
    double fh = 0, sh = 0, acc = 0;
    std::vector<double> fp, fl;
    int nf = 0, ns = 0, nt = 0;
    for (const PredictionRow* p : rows) {
      if (p->task == "frames") {
        fh += huber((p->pred - p->label) / frames_divisor, huber_delta);
        fp.push_back(p->pred);
        fl.push_back(p->label);
        ++nf;
      } else if (p->task == "severity") {
        sh += huber(p->pred - p->label, huber_delta);
        ++ns;
      } else if (p->task == "type") {
        acc += p->pred == p->label ? 1.0 : 0.0;
        ++nt;
      }
    }
    const auto& [model, run] = key;
    if (nf) out.push_back({model, run, "frames", fh / nf});
    if (nt) out.push_back({model, run, "type", acc / nt});
    if (ns) out.push_back({model, run, "severity", sh / ns});
    if (nf) out.push_back({model, run, "frames_within20", cdf_frames(fp, fl).within_band});
  }
  return out;
}

std::vector<Aggregate> aggregate_runs(std::span<const RunMetric> runs) {
  std::map<std::pair<std::string, std::string>, std::vector<double>> by;
  for (const RunMetric& m : runs) by[{m.model, m.task}].push_back(m.value);
  std::vector<Aggregate> out;
  for (auto& [key, v] : by) {
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out.push_back({key.first, key.second, mean, std::sqrt(ss / n), static_cast<int>(v.size())});
  }
  return out;
}

AblationResult run_ablation_suite(const CvData& data, const FoldPlan& plan, CvOptions opt) {
  AblationResult res;
  const gpn::ModelConfig base = opt.cfg;
  opt.model = ModelKind::kGpnUnlabeled;
  std::map<std::string, double> full;
  for (gpn::Modality m : {gpn::Modality::kNone, gpn::Modality::kHumidity,
                          gpn::Modality::kTemperature, gpn::Modality::kPressure}) {
    CvOptions o = opt;
    o.cfg = gpn::exclude_modality(base, m);
    const std::string name = gpn::modality_name(m);
    o.run_id = opt.run_id + "-" + name;
    if (!o.checkpoint_dir.empty()) o.checkpoint_dir /= "exclude-" + name;
    CvResult r = run_cv(data, plan, o);
    for (const RunMetric& f : final_metrics(r, base.huber_delta)) {
      if (m == gpn::Modality::kNone) full[f.task] = f.value;
      res.rows.push_back({name, f.task, f.value, f.value - full[f.task]});
    }
    res.runs.emplace(name, std::move(r));
  }
  return res;
}

// --- reports ------------------------------------------------------------------------

using csv::format_number;

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> m) {
  csv::Table t{{"run", "model", "fold", "iteration", "task", "value"}, {}};
  for (const MetricRecord& r : m) {
    t.rows.push_back({r.run, r.model, std::to_string(r.fold), std::to_string(r.iteration), r.task,
                      format_number(r.value)});
  }
  csv::write(path, t);
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> p) {
  csv::Table t{{"hive", "date", "task", "pred", "label", "run", "model", "fold"}, {}};
  for (const PredictionRow& r : p) {
    t.rows.push_back({r.hive_id, format_day(r.date), r.task, format_number(r.pred),
                      format_number(r.label), r.run, r.model, std::to_string(r.fold)});
  }
  csv::write(path, t);
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const auto run = t.column("run"), model = t.column("model"), fold = t.column("fold"),
             it = t.column("iteration"), task = t.column("task"), value = t.column("value");
  std::vector<MetricRecord> out;
  for (const auto& r : t.rows) {
    out.push_back({r[run], r[model], std::stoi(r[fold]), std::stoi(r[it]), r[task],
                   csv::parse_number(r[value])});
  }
  return out;
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const auto hive = t.column("hive"), date = t.column("date"), task = t.column("task"),
             pred = t.column("pred"), label = t.column("label"), run = t.column("run"),
             model = t.column("model"), fold = t.column("fold");
  std::vector<PredictionRow> out;
  for (const auto& r : t.rows) {
    out.push_back({r[run], r[model], std::stoi(r[fold]), r[hive], parse_day(r[date]), r[task],
                   csv::parse_number(r[pred]), csv::parse_number(r[label])});
  }
  return out;
}

void write_cdf_csv(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, CdfResult>>& cdfs) {
  csv::Table t{{"model", "kind", "value", "cdf", "within_band"}, {}};
  for (const auto& [name, c] : cdfs) {
    const auto lv = cdf_levels(c.abs_diff.size());
    for (std::size_t i = 0; i < c.abs_diff.size(); ++i) {
      t.rows.push_back({name, "abs", format_number(c.abs_diff[i]), format_number(lv[i]),
                        format_number(c.within_band)});
    }
    for (std::size_t i = 0; i < c.pct_diff.size(); ++i) {
      t.rows.push_back({name, "pct", format_number(c.pct_diff[i]), format_number(lv[i]),
                        format_number(c.within_band)});
    }
  }
  csv::write(path, t);
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const Aggregate> a) {
  csv::Table t{{"model", "task", "mean", "std", "runs"}, {}};
  for (const Aggregate& r : a) {
    t.rows.push_back({r.model, r.task, format_number(r.mean), format_number(r.std),
                      std::to_string(r.n)});
  }
  csv::write(path, t);
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  csv::Table t{{"excluded", "task", "value", "delta"}, {}};
  for (const AblationRow& r : rows) {
    t.rows.push_back({r.excluded, r.task, format_number(r.value), format_number(r.delta)});
  }
  csv::write(path, t);
}

void write_curve_csv(const std::filesystem::path& path, const CvResult& r) {
  csv::Table t{{"fold", "iteration", "phase", "total", "recon", "kl", "frames", "type", "severity"},
               {}};
  for (const FoldReport& f : r.folds) {
    for (const gpn::LossPoint& p : f.curve) {
      t.rows.push_back({std::to_string(f.fold), std::to_string(p.iteration), p.phase,
                        format_number(p.total), format_number(p.recon), format_number(p.kl),
                        format_number(p.frames), format_number(p.type),
                        format_number(p.severity)});
    }
  }
  csv::write(path, t);
}

std::string scatter_svg(std::span<const PredictionRow> p, const std::string& title) {
  svg::Plot plot;
  plot.title = title;
  plot.xlabel = "inspected frames of bees";
  plot.ylabel = "predicted frames of bees";
  plot.diagonal = true;
  std::map<std::string, svg::Series> by;
  for (const PredictionRow& r : p) {
    if (r.task != "frames") continue;
    svg::Series& s = by[r.model];
    s.label = r.model;
    s.x.push_back(r.label);
    s.y.push_back(r.pred);
  }
  for (auto& [k, s] : by) plot.series.push_back(std::move(s));
  return svg::render(plot);
}

std::string cdf_svg(const std::vector<std::pair<std::string, CdfResult>>& cdfs) {
  svg::Plot plot;
  plot.title = "Frames percentage difference CDF";
  plot.xlabel = "(pred - label) / max(label, 1)";
  plot.ylabel = "cumulative fraction";
  plot.yrange = std::make_pair(0.0, 1.0);
  for (const auto& [name, c] : cdfs) {
    svg::Series s;
    s.label = name + " (" + format_number(std::round(c.within_band * 1000) / 1000) + " in band)";
    s.line = true;
    s.x = c.pct_diff;
    s.y = cdf_levels(c.pct_diff.size());
    plot.series.push_back(std::move(s));
  }
  svg::Series band;
  band.label = "+/-20% band";
  band.line = true;
  band.color = "#bbbbbb";
  band.x = {-kBand, -kBand, kBand, kBand};
  band.y = {0.0, 1.0, 1.0, 0.0};
  plot.series.push_back(std::move(band));
  return svg::render(plot);
}

std::string curves_svg(std::span<const MetricRecord> m, const std::string& task) {
  svg::Plot plot;
  plot.title = "Validation " + task + (task == "type" ? " accuracy" : " Huber loss");
  plot.xlabel = "iteration";
  plot.ylabel = task == "type" ? "accuracy" : "Huber";
  std::map<std::string, std::map<int, std::pair<double, int>>> acc;
  for (const MetricRecord& r : m) {
    if (r.task != task) continue;
    auto& cell = acc[r.model][r.iteration];
    cell.first += r.value;
    cell.second += 1;
  }
  for (const auto& [model, pts] : acc) {
    svg::Series s;
    s.label = model;
    s.line = true;
    for (const auto& [it, v] : pts) {
      s.x.push_back(it);
      s.y.push_back(v.first / v.second);
    }
    plot.series.push_back(std::move(s));
  }
  return svg::render(plot);
}

}  // namespace apiarius::eval
