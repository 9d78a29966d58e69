// Command-line entry point: synth | preprocess | validate | train | eval | ablate | analyze.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "apiarius/analysis.hpp"
#include "apiarius/config.hpp"
#include "apiarius/csv.hpp"
#include "apiarius/eval.hpp"
#include "apiarius/pipeline.hpp"
#include "apiarius/svg.hpp"

namespace fs = std::filesystem;
using namespace apiarius;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class ValidationFailure : public Error {
 public:
  using Error::Error;
};

struct Settings {
  synth::SynthConfig synth;
  gpn::ModelConfig model;
  uint64_t seed = 1;
  int folds = 2;
  int runs = 3;
  bool unlabeled_val_hives = false;
  std::string models = "gpn-unlabeled,gpn-labeled,baseline-mlp";
  std::string train_model = "gpn-unlabeled";
  std::string fidelity = "spectrogram";
  std::string exclude = "none";
  double window_start = 23.5;
  double window_hours = 1.0;
  int grid_steps = 8;
  int gallery = 8;

  void bind(config::Binder& b) {
    b.bind("seed", seed);
    b.bind("synth.hives", synth.n_hives);
    b.bind("synth.days", synth.n_days);
    b.bind("synth.start_date", synth.start_date);
    b.bind("synth.fidelity", fidelity);
    b.bind("synth.label_cadence", synth.label_cadence);
    b.bind("synth.initial_frames_lo", synth.initial_frames_lo);
    b.bind("synth.initial_frames_hi", synth.initial_frames_hi);
    b.bind("synth.growth_per_day", synth.growth_per_day);
    b.bind("synth.gain_lo", synth.gain_lo);
    b.bind("synth.gain_hi", synth.gain_hi);
    b.bind("synth.disease_fraction", synth.disease_fraction);
    b.bind("synth.severity_step_days", synth.severity_step_days);
    b.bind("synth.circadian_alpha", synth.circadian_alpha);
    b.bind("synth.peak_hour", synth.peak_hour);
    b.bind("synth.band_amplitude", synth.band_amplitude);
    b.bind("synth.noise_ref", synth.noise_ref);
    b.bind("synth.noise_slope", synth.noise_slope);
    b.bind("synth.thermo_tau", synth.thermo_tau);
    b.bind("model.d_z", model.d_z);
    b.bind("model.pretrain_iters", model.pretrain_iters);
    b.bind("model.joint_iters", model.joint_iters);
    b.bind("model.lr_main", model.lr_main);
    b.bind("model.lr_disease", model.lr_disease);
    b.bind("model.huber_delta", model.huber_delta);
    b.bind("model.w_frames", model.w_frames);
    b.bind("model.w_type", model.w_type);
    b.bind("model.w_severity", model.w_severity);
    b.bind("model.kl_weight", model.kl_weight);
    b.bind("model.batch_pretrain", model.batch_pretrain);
    b.bind("model.batch_joint", model.batch_joint);
    b.bind("model.n_classes", model.n_classes);
    b.bind("model.head_frames", model.head_frames);
    b.bind("model.head_type", model.head_type);
    b.bind("model.head_severity", model.head_severity);
    b.bind("model.elbo_samples", model.elbo_samples);
    b.bind("model.grad_samples", model.grad_samples);
    b.bind("model.loss_every", model.loss_every);
    b.bind("model.metric_every", model.metric_every);
    b.bind("model.exclude", exclude);
    b.bind("train.model", train_model);
    b.bind("eval.folds", folds);
    b.bind("eval.runs", runs);
    b.bind("eval.models", models);
    b.bind("eval.unlabeled_val_hives", unlabeled_val_hives);
    b.bind("analysis.window_start", window_start);
    b.bind("analysis.window_hours", window_hours);
    b.bind("analysis.grid_steps", grid_steps);
    b.bind("analysis.gallery", gallery);
  }

  void apply_preset(const std::string& preset) {
    if (preset == "desk") {
      model = gpn::ModelConfig::desk();
      synth.n_hives = 8;
      synth.n_days = 30;
      folds = 2;
      runs = 3;
    } else if (preset == "full") {
      model = gpn::ModelConfig{};
      synth.n_hives = 26;
      synth.n_days = 60;
      folds = 10;
      runs = 10;
    } else {
      throw UsageError("unknown preset '" + preset + "' (desk or full)");
    }
  }

  /// Derived fields after all overrides.
  void finish() {
    synth.seed = seed;
    if (fidelity == "spectrogram") {
      synth.fidelity = synth::Fidelity::kSpectrogram;
    } else if (fidelity == "waveform") {
      synth.fidelity = synth::Fidelity::kWaveform;
    } else {
      throw UsageError("synth.fidelity must be spectrogram or waveform");
    }
    model = gpn::exclude_modality(model, gpn::parse_modality(exclude));
    model.validate();
    synth.validate();
  }
};

struct Options {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::string out, data, cache, checkpoint;
  std::optional<int> hives, days;
  std::optional<std::string> fidelity, model;
};

int thread_count(const Options& o) {
  if (o.threads) return std::max(1, *o.threads);
  if (const char* env = std::getenv("APIARIUS_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw UsageError("APIARIUS_THREADS must be an integer");
    }
  }
  return 1;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void require(const std::string& value, const std::string& flag, const std::string& cmd) {
  if (value.empty()) throw UsageError(cmd + " needs " + flag);
}

/// Rejects outputs that would overwrite an input directory.
void distinct(const std::string& out, const std::vector<std::string>& inputs) {
  const fs::path o = fs::weakly_canonical(out);
  for (const std::string& in : inputs) {
    if (in.empty()) continue;
    const fs::path i = fs::weakly_canonical(in);
    auto [a, b] = std::mismatch(i.begin(), i.end(), o.begin(), o.end());
    if (a == i.end() || b == o.end()) {
      throw UsageError("output directory " + out + " overlaps input " + in);
    }
  }
}

struct Run {
  std::string command;
  Options opt;
  Settings s;
  config::Binder binder;
  int threads = 1;

  Run(std::string cmd, Options o) : command(std::move(cmd)), opt(std::move(o)) {
    s.apply_preset(opt.preset);
    s.bind(binder);
  }

  void configure(const config::KeyValues* base = nullptr) {
    try {
      if (base) {
        for (const auto& [k, v] : *base) {
          if (binder.known(k)) binder.set(k, v);
        }
      }
      if (!opt.config_file.empty()) {
        // A snapshot from an earlier run is a valid config; its bookkeeping keys are skipped.
        for (const auto& [k, v] : config::read_file(opt.config_file)) {
          if (k == "command" || k == "preset" || k == "threads" || k.rfind("input.", 0) == 0) continue;
          binder.set(k, v);
        }
      }
      for (const std::string& kv : opt.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        binder.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (opt.seed) s.seed = *opt.seed;
      if (opt.hives) s.synth.n_hives = *opt.hives;
      if (opt.days) s.synth.n_days = *opt.days;
      if (opt.fidelity) s.fidelity = *opt.fidelity;
      if (opt.model) s.train_model = *opt.model;
      threads = thread_count(opt);
      s.finish();
    } catch (const UsageError&) {
      throw;
    } catch (const Error& e) {
      // missing config file, unknown keys, unparsable or out-of-range values
      throw UsageError(e.what());
    }
  }

  void snapshot(const fs::path& dir) const {
    config::KeyValues kv = binder.snapshot();
    kv["command"] = command;
    kv["preset"] = opt.preset;
    kv["threads"] = std::to_string(threads);
    if (!opt.data.empty()) kv["input.data"] = opt.data;
    if (!opt.cache.empty()) kv["input.cache"] = opt.cache;
    if (!opt.checkpoint.empty()) kv["input.checkpoint"] = opt.checkpoint;
    config::write_file(dir / "config.txt", kv);
  }
};

// --- subcommands ----------------------------------------------------------------------

int cmd_synth(Run& r) {
  require(r.opt.out, "--out", "synth");
  r.configure();
  fs::create_directories(r.opt.out);
  synth::SynthOutput out = synth::generate_dataset(r.s.synth, r.opt.out);
  r.snapshot(r.opt.out);
  std::cout << "wrote " << out.samples.size() << " samples and " << out.labels.size()
            << " labels to " << r.opt.out << "\n";
  return 0;
}

int cmd_preprocess(Run& r) {
  require(r.opt.data, "--data", "preprocess");
  require(r.opt.out, "--out", "preprocess");
  r.configure();
  distinct(r.opt.out, {r.opt.data});
  pipeline::PreprocessReport rep = pipeline::preprocess(r.opt.data, r.opt.out);
  csv::Table t{{"hive", "date", "n_samples", "reason"}, {}};
  for (const auto& s : rep.skipped) {
    t.rows.push_back({s.hive_id, format_day(s.date), std::to_string(s.n_samples), s.reason});
  }
  csv::write(fs::path(r.opt.out) / "skipped.csv", t);
  r.snapshot(r.opt.out);
  std::cout << "cached " << rep.days_cached << " days, skipped " << rep.skipped.size()
            << ", failed audio samples " << rep.failed_samples << "\n";
  return 0;
}

int cmd_validate(Run& r) {
  require(r.opt.data, "--data", "validate");
  require(r.opt.out, "--out", "validate");
  r.configure();
  distinct(r.opt.out, {r.opt.data});
  const fs::path out = r.opt.out;
  fs::create_directories(out);
  data::Dataset ds = data::read_dataset(r.opt.data);
  data::ValidationReport rep = data::validate_ranges(ds.samples);
  csv::Table flags{{"hive", "timestamp", "channel", "kind", "value"}, {}};
  for (const auto& f : rep.flags) {
    flags.rows.push_back({f.hive_id, std::to_string(f.timestamp), f.channel, f.kind,
                          csv::format_number(f.value)});
  }
  csv::write(out / "flags.csv", flags);

  data::AssembleResult as = data::assemble_days(ds.samples);
  if (!as.days.empty()) {
    data::CorrelationMatrix cm = data::correlation_matrix(as.days);
    csv::Table corr{{"a", "b", "r"}, {}};
    for (int i = 0; i < data::kCorrFeatures; ++i) {
      for (int j = 0; j < data::kCorrFeatures; ++j) {
        corr.rows.push_back({data::kCorrNames[static_cast<std::size_t>(i)],
                             data::kCorrNames[static_cast<std::size_t>(j)],
                             cm.defined(i, j) ? csv::format_number(cm.r(i, j)) : "nan"});
      }
    }
    csv::write(out / "correlations.csv", corr);
    csv::Table ols{{"feature", "r2", "status"}, {}};
    for (const auto& o : data::ols_cross_predict(as.days)) {
      ols.rows.push_back({o.feature, o.r2 ? csv::format_number(*o.r2) : "nan", o.status});
    }
    csv::write(out / "ols.csv", ols);
    data::CircadianResult c = data::circadian_peak_hour(as.days);
    csv::Table circ{{"slot", "hour", "mean_amp"}, {}};
    svg::Series prof;
    prof.label = "mean amplitude";
    prof.line = true;
    for (int s = 0; s < kSamplesPerDay; ++s) {
      circ.rows.push_back({std::to_string(s), csv::format_number(s * 0.25),
                           csv::format_number(c.profile[static_cast<std::size_t>(s)])});
      prof.x.push_back(s * 0.25);
      prof.y.push_back(c.profile[static_cast<std::size_t>(s)]);
    }
    csv::write(out / "circadian.csv", circ);
    svg::Plot p;
    p.title = "Circadian amplitude profile (peak " + csv::format_number(c.hour) + " h)";
    p.xlabel = "hour of day (UTC)";
    p.ylabel = "mean amplitude";
    p.series.push_back(prof);
    svg::write(out / "circadian.svg", svg::render(p));
  }
  r.snapshot(out);
  std::cout << rep.n_samples << " samples, " << rep.flags.size() << " flags, " << as.days.size()
            << " complete days\n";
  if (!rep.ok()) throw ValidationFailure("validation flagged " + std::to_string(rep.flags.size()) +
                                         " readings (see flags.csv)");
  return 0;
}

void write_curve(const fs::path& path, const std::vector<gpn::LossPoint>& curve) {
  csv::Table t{{"iteration", "phase", "total", "recon", "kl", "frames", "type", "severity"}, {}};
  for (const auto& p : curve) {
    t.rows.push_back({std::to_string(p.iteration), p.phase, csv::format_number(p.total),
                      csv::format_number(p.recon), csv::format_number(p.kl),
                      csv::format_number(p.frames), csv::format_number(p.type),
                      csv::format_number(p.severity)});
  }
  csv::write(path, t);
}

int cmd_train(Run& r) {
  require(r.opt.data, "--data", "train");
  require(r.opt.cache, "--cache", "train");
  require(r.opt.out, "--out", "train");
  r.configure();
  distinct(r.opt.out, {r.opt.data, r.opt.cache});
  const fs::path out = r.opt.out;
  fs::create_directories(out);
  const eval::ModelKind kind = eval::parse_model(r.s.train_model);
  pipeline::LoadedData d = pipeline::load(r.opt.data, r.opt.cache);
  if (d.cv.labeled.empty()) throw Error("no labeled days to train on");
  std::vector<data::InspectionLabel> all_labels;
  for (const auto& l : d.cv.labeled) all_labels.push_back(l.label);
  const data::NormStats norm = data::fit_normalization(d.days, all_labels);
  std::vector<gpn::Example> ex;
  std::set<std::size_t> labeled_days;
  for (const auto& l : d.cv.labeled) {
    ex.push_back({l.day, gpn::make_target(l.label, norm), l.label});
    labeled_days.insert(l.day);
  }
  gpn::ModelConfig cfg = r.s.model;
  cfg.semi_supervised = kind == eval::ModelKind::kGpnUnlabeled;
  gpn::TrainContext ctx;
  ctx.days = d.cv.days;
  ctx.norm = &norm;
  if (kind == eval::ModelKind::kBaselineMlp) {
    gpn::BaselineModel m = gpn::baseline_mlp(ctx, ex, cfg, split_seed(r.s.seed, 1));
    std::vector<ag::Parameter*> ps = {&m.params.trunk_w, &m.params.trunk_b, &m.params.frames_w,
                                      &m.params.frames_b, &m.params.type_w, &m.params.type_b,
                                      &m.params.severity_w, &m.params.severity_b};
    ag::save_checkpoint(out / "baseline.ckpt", ps);
  } else {
    std::vector<std::size_t> pool;
    if (cfg.semi_supervised) {
      for (std::size_t i = 0; i < d.cv.days.size(); ++i) pool.push_back(i);
    } else {
      pool.assign(labeled_days.begin(), labeled_days.end());
    }
    Rng init(split_seed(r.s.seed, 1));
    gpn::GpnParams params = gpn::init_gpn(cfg, init);
    gpn::Trainer pre(cfg, params, split_seed(r.s.seed, 2));
    pre.pretrain(ctx, pool);
    gpn::Trainer joint(cfg, params, split_seed(r.s.seed, 3));
    joint.train_joint(ctx, ex, cfg.semi_supervised ? std::span<const std::size_t>(pool)
                                                   : std::span<const std::size_t>());
    gpn::save_gpn(out / "model.ckpt", params);
  }
  csv::Table nt{{"channel", "min", "max"}, {}};
  for (int c = 0; c < data::kEnvChannels; ++c) {
    nt.rows.push_back({data::kEnvNames[static_cast<std::size_t>(c)],
                       csv::format_number(norm.min[static_cast<std::size_t>(c)]),
                       csv::format_number(norm.max[static_cast<std::size_t>(c)])});
  }
  csv::write(out / "norm.csv", nt);
  write_curve(out / "curve.csv", ctx.curve);
  r.snapshot(out);
  std::cout << "trained " << r.s.train_model << " on " << d.cv.days.size() << " days ("
            << ex.size() << " labeled)\n";
  return 0;
}

/// Settings recorded next to a checkpoint, used as the base configuration.
config::KeyValues checkpoint_settings(const std::string& checkpoint) {
  fs::path dir = checkpoint;
  if (!fs::is_directory(dir)) dir = dir.parent_path();
  if (!fs::exists(dir / "config.txt")) {
    throw UsageError("checkpoint " + checkpoint + " has no config.txt next to it");
  }
  config::KeyValues kv = config::read_file(dir / "config.txt");
  config::KeyValues out;
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) == 0 || k == "train.model") out[k] = v;
  }
  return out;
}

int cmd_eval(Run& r) {
  if (r.opt.checkpoint.empty()) {
    throw UsageError("eval needs --checkpoint (a train output directory or model file)");
  }
  require(r.opt.data, "--data", "eval");
  require(r.opt.cache, "--cache", "eval");
  require(r.opt.out, "--out", "eval");
  const config::KeyValues base = checkpoint_settings(r.opt.checkpoint);
  r.configure(&base);
  distinct(r.opt.out, {r.opt.data, r.opt.cache, r.opt.checkpoint});
  const fs::path out = r.opt.out;
  fs::create_directories(out);
  pipeline::LoadedData d = pipeline::load(r.opt.data, r.opt.cache);
  const auto models = split_list(r.s.models);

  std::vector<eval::MetricRecord> metrics;
  std::vector<eval::PredictionRow> preds;
  std::vector<eval::RunMetric> finals;
  for (int run = 0; run < r.s.runs; ++run) {
    const uint64_t seed = split_seed(r.s.seed, static_cast<uint64_t>(run));
    eval::FoldPlan plan = eval::partition_folds(d.hives, std::min<int>(r.s.folds, static_cast<int>(d.hives.size())), seed);
    eval::PretrainCache cache;
    for (const std::string& m : models) {
      eval::CvOptions o;
      o.model = eval::parse_model(m);
      o.cfg = r.s.model;
      o.run_id = "run" + std::to_string(run);
      o.seed = seed;
      o.threads = r.threads;
      o.cache = &cache;
      o.unlabeled_val_hives = r.s.unlabeled_val_hives;
      o.checkpoint_dir = out / "checkpoints" / o.run_id;
      eval::CvResult res = eval::run_cv(d.cv, plan, o);
      for (const auto& f : res.folds) {
        if (f.empty) std::cerr << "warning: " << m << " fold " << f.fold << " has no labeled validation day\n";
      }
      eval::write_curve_csv(out / ("curve_" + m + "_" + o.run_id + ".csv"), res);
      auto fm = eval::final_metrics(res, r.s.model.huber_delta);
      finals.insert(finals.end(), fm.begin(), fm.end());
      metrics.insert(metrics.end(), res.metrics.begin(), res.metrics.end());
      preds.insert(preds.end(), res.predictions.begin(), res.predictions.end());
      std::cout << o.run_id << " " << m << ":";
      for (const auto& f : fm) std::cout << " " << f.task << "=" << f.value;
      std::cout << "\n";
    }
  }
  eval::write_metrics_csv(out / "metrics.csv", metrics);
  eval::write_predictions_csv(out / "predictions.csv", preds);
  std::vector<eval::Aggregate> agg = eval::aggregate_runs(finals);
  eval::write_aggregate_csv(out / "summary.csv", agg);
  std::vector<std::pair<std::string, eval::CdfResult>> cdfs;
  for (const std::string& m : models) {
    std::vector<double> p, l;
    for (const auto& row : preds) {
      if (row.model == m && row.task == "frames") {
        p.push_back(row.pred);
        l.push_back(row.label);
      }
    }
    cdfs.emplace_back(m, eval::cdf_frames(p, l));
  }
  eval::write_cdf_csv(out / "cdf.csv", cdfs);
  svg::write(out / "scatter.svg", eval::scatter_svg(preds, "Predicted vs inspected frames"));
  svg::write(out / "cdf.svg", eval::cdf_svg(cdfs));
  for (const char* task : eval::kTasks) {
    svg::write(out / (std::string("curves_") + task + ".svg"), eval::curves_svg(metrics, task));
  }
  r.snapshot(out);
  return 0;
}

int cmd_ablate(Run& r) {
  require(r.opt.data, "--data", "ablate");
  require(r.opt.cache, "--cache", "ablate");
  require(r.opt.out, "--out", "ablate");
  config::KeyValues base;
  if (!r.opt.checkpoint.empty()) base = checkpoint_settings(r.opt.checkpoint);
  r.configure(&base);
  distinct(r.opt.out, {r.opt.data, r.opt.cache, r.opt.checkpoint});
  const fs::path out = r.opt.out;
  fs::create_directories(out);
  pipeline::LoadedData d = pipeline::load(r.opt.data, r.opt.cache);
  csv::Table t{{"run", "excluded", "task", "value", "delta"}, {}};
  std::map<std::pair<std::string, std::string>, std::vector<double>> deltas;
  for (int run = 0; run < r.s.runs; ++run) {
    const uint64_t seed = split_seed(r.s.seed, static_cast<uint64_t>(run));
    eval::FoldPlan plan = eval::partition_folds(d.hives, std::min<int>(r.s.folds, static_cast<int>(d.hives.size())), seed);
    eval::PretrainCache cache;
    eval::CvOptions o;
    o.cfg = r.s.model;
    o.run_id = "run" + std::to_string(run);
    o.seed = seed;
    o.threads = r.threads;
    o.cache = &cache;
    o.unlabeled_val_hives = r.s.unlabeled_val_hives;
    o.checkpoint_dir = out / "checkpoints" / o.run_id;
    eval::AblationResult a = eval::run_ablation_suite(d.cv, plan, o);
    for (const auto& row : a.rows) {
      t.rows.push_back({o.run_id, row.excluded, row.task, csv::format_number(row.value),
                        csv::format_number(row.delta)});
      deltas[{row.excluded, row.task}].push_back(row.delta);
    }
  }
  csv::write(out / "ablation_runs.csv", t);
  std::vector<eval::AblationRow> mean_rows;
  for (const auto& [key, v] : deltas) {
    double s = 0.0;
    for (double x : v) s += x;
    mean_rows.push_back({key.first, key.second, 0.0, s / static_cast<double>(v.size())});
  }
  // value column: mean metric per configuration
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> vals;
  for (const auto& row : t.rows) {
    auto& c = vals[{row[1], row[2]}];
    c.first += csv::parse_number(row[3]);
    c.second += 1;
  }
  for (auto& m : mean_rows) {
    const auto& c = vals[{m.excluded, m.task}];
    m.value = c.first / c.second;
  }
  eval::write_ablation_csv(out / "ablation.csv", mean_rows);
  r.snapshot(out);
  for (const auto& m : mean_rows) {
    if (m.task == "frames") std::cout << "exclude " << m.excluded << ": frames " << m.value
                                      << " (delta " << m.delta << ")\n";
  }
  return 0;
}

std::string class_label(int severity, int type) {
  if (severity < 0) return "unknown";
  if (severity == 0) return "healthy";
  std::string t = type == synth::kDiseaseA ? "A" : type == synth::kDiseaseB ? "B" : "?";
  return t + "/" + data::severity_name(static_cast<data::Severity>(severity));
}

int cmd_analyze(Run& r) {
  if (r.opt.checkpoint.empty()) throw UsageError("analyze needs --checkpoint");
  require(r.opt.data, "--data", "analyze");
  require(r.opt.cache, "--cache", "analyze");
  require(r.opt.out, "--out", "analyze");
  r.configure();
  distinct(r.opt.out, {r.opt.data, r.opt.cache, r.opt.checkpoint});
  const fs::path out = r.opt.out;
  fs::create_directories(out);
  fs::path ckpt = r.opt.checkpoint;
  if (fs::is_directory(ckpt)) ckpt /= "model.ckpt";
  gpn::GpnParams p = gpn::load_gpn(ckpt);
  pipeline::LoadedData d = pipeline::load(r.opt.data, r.opt.cache);
  const auto classes = pipeline::day_classes(d);

  const int steps = r.s.grid_steps;
  auto tiles = analysis::latent_grid_decode(p.dec, p.d_z, -2.0, 2.0, steps);
  svg::write(out / "latent_grid.svg",
             svg::tile_sheet(tiles, steps, "Decoded latent grid over [-2, 2]^2", {}, 72));

  auto emb = analysis::embed_days(p, d.cv.days);
  for (std::size_t i = 0; i < emb.size(); ++i) {
    emb[i].severity = classes[i].first;
    emb[i].type = classes[i].second;
  }
  analysis::PcaModel pca = analysis::fit_pca(emb);
  csv::Table pt{{"component", "ratio"}, {}};
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(pca.ratios.size(), 10); ++i) {
    pt.rows.push_back({std::to_string(i + 1), csv::format_number(pca.ratios(i))});
  }
  csv::write(out / "pca.csv", pt);
  analysis::Projection proj = analysis::project_and_tag(pca, emb);
  analysis::write_projection(out / "projection.csv", out / "projection.svg", proj);

  std::vector<std::string> labels;
  for (const auto& c : classes) labels.push_back(class_label(c.first, c.second));
  auto spectra = analysis::class_mean_spectra(d.cv.days, labels, r.s.window_start, r.s.window_hours);
  const std::vector<double> hz = dsp::pooled_row_hz();
  csv::Table st{{"class", "row", "hz", "value"}, {}};
  svg::Plot sp;
  sp.title = "Class mean spectra";
  sp.xlabel = "frequency (Hz)";
  sp.ylabel = "normalized dB";
  csv::Table ar{{"class", "days_samples", "amp_ratio"}, {}};
  for (const auto& c : spectra) {
    svg::Series s;
    s.label = c.label;
    s.line = true;
    for (int i = 0; i < gpn::kSide; ++i) {
      st.rows.push_back({c.label, std::to_string(i), csv::format_number(hz[static_cast<std::size_t>(i)]),
                         csv::format_number(c.spectrum(i))});
      s.x.push_back(hz[static_cast<std::size_t>(i)]);
      s.y.push_back(c.spectrum(i));
    }
    sp.series.push_back(std::move(s));
    ar.rows.push_back({c.label, std::to_string(c.n_samples), csv::format_number(c.amp_ratio)});
  }
  csv::write(out / "class_spectra.csv", st);
  csv::write(out / "class_amplitude.csv", ar);
  svg::write(out / "class_spectra.svg", svg::render(sp));

  std::vector<double> mags;
  for (const auto& day : d.cv.days) mags.push_back(analysis::integrated_magnitude(day));
  analysis::SweepResult sw = analysis::pc1_magnitude_sweep(pca, emb, mags);
  csv::Table swt{{"rank", "hive", "date", "pc1", "magnitude"}, {}};
  svg::Series ss;
  ss.label = "days";
  for (std::size_t i = 0; i < sw.order.size(); ++i) {
    const auto& e = emb[sw.order[i]];
    swt.rows.push_back({std::to_string(i), e.hive_id, format_day(e.date),
                        csv::format_number(sw.pc1[i]), csv::format_number(sw.magnitude[i])});
    ss.x.push_back(static_cast<double>(i));
    ss.y.push_back(sw.magnitude[i]);
  }
  csv::write(out / "sweep.csv", swt);
  svg::Plot swp;
  swp.title = "Integrated magnitude by PC-1 rank (r = " + csv::format_number(sw.r) + ")";
  swp.xlabel = "PC-1 rank";
  swp.ylabel = "integrated magnitude";
  swp.series.push_back(ss);
  svg::write(out / "sweep.svg", svg::render(swp));

  Rng pick(split_seed(r.s.seed, 77));
  const int n = std::min<int>(r.s.gallery, static_cast<int>(d.cv.days.size()));
  Eigen::MatrixXf cols(data::kPixels, n);
  std::uniform_int_distribution<std::size_t> dd(0, d.cv.days.size() - 1);
  std::uniform_int_distribution<int> ds(0, kSamplesPerDay - 1);
  for (int i = 0; i < n; ++i) cols.col(i) = d.cv.days[dd(pick)].spectra.col(ds(pick));
  analysis::Gallery g = analysis::reconstruction_gallery(p, cols);
  analysis::write_gallery(out / "gallery.svg", out / "gallery.csv", g);

  double mean_bce = 0.0;
  for (double b : g.bce) mean_bce += b / static_cast<double>(g.bce.size());
  csv::Table sum{{"key", "value"}, {}};
  sum.rows.push_back({"pc1_ratio", csv::format_number(pca.ratios(0))});
  sum.rows.push_back({"healthy_low_gap", csv::format_number(proj.healthy_low_gap)});
  sum.rows.push_back({"healthy_low_within_std", csv::format_number(proj.healthy_low_within_std)});
  sum.rows.push_back({"sweep_r", csv::format_number(sw.r)});
  sum.rows.push_back({"gallery_mean_bce", csv::format_number(mean_bce)});
  csv::write(out / "summary.csv", sum);
  r.snapshot(out);
  std::cout << "PC-1 " << pca.ratios(0) << ", healthy/low gap " << proj.healthy_low_gap
            << " vs within std " << proj.healthy_low_within_std << ", sweep r " << sw.r << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Hive-strength pipeline: synthetic data, preprocessing, training and analysis"};
  app.require_subcommand(1, 1);
  Options opt;
  auto common = [&](CLI::App* c) {
    c->add_option("--preset", opt.preset, "desk or full")->capture_default_str();
    c->add_option("--config", opt.config_file, "key=value config file");
    c->add_option("--set", opt.sets, "override one key (key=value), repeatable");
    c->add_option("--seed", opt.seed, "master seed");
    c->add_option("--threads", opt.threads, "worker cap (default: APIARIUS_THREADS or 1)");
    c->add_option("--out", opt.out, "output directory");
  };
  auto inputs = [&](CLI::App* c) {
    c->add_option("--data", opt.data, "dataset root");
    c->add_option("--cache", opt.cache, "spectrogram cache root");
  };
  CLI::App* synth_c = app.add_subcommand("synth", "generate a synthetic dataset");
  common(synth_c);
  synth_c->add_option("--hives", opt.hives, "number of hives");
  synth_c->add_option("--days", opt.days, "days per hive");
  synth_c->add_option("--fidelity", opt.fidelity, "spectrogram or waveform");
  CLI::App* pre_c = app.add_subcommand("preprocess", "compute the spectrogram cache");
  common(pre_c);
  pre_c->add_option("--data", opt.data, "dataset root");
  CLI::App* val_c = app.add_subcommand("validate", "sensor data validation report");
  common(val_c);
  val_c->add_option("--data", opt.data, "dataset root");
  CLI::App* train_c = app.add_subcommand("train", "train one model on all hives");
  common(train_c);
  inputs(train_c);
  train_c->add_option("--model", opt.model, "gpn-unlabeled, gpn-labeled or baseline-mlp");
  CLI::App* eval_c = app.add_subcommand("eval", "hive-grouped cross-validation");
  common(eval_c);
  inputs(eval_c);
  eval_c->add_option("--checkpoint", opt.checkpoint, "train output directory or model file");
  CLI::App* abl_c = app.add_subcommand("ablate", "environment modality ablation");
  common(abl_c);
  inputs(abl_c);
  abl_c->add_option("--checkpoint", opt.checkpoint, "train output providing model settings");
  CLI::App* ana_c = app.add_subcommand("analyze", "latent-space figures");
  common(ana_c);
  inputs(ana_c);
  ana_c->add_option("--checkpoint", opt.checkpoint, "trained model file or directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    Run r(sub->get_name(), opt);
    if (sub == synth_c) return cmd_synth(r);
    if (sub == pre_c) return cmd_preprocess(r);
    if (sub == val_c) return cmd_validate(r);
    if (sub == train_c) return cmd_train(r);
    if (sub == eval_c) return cmd_eval(r);
    if (sub == abl_c) return cmd_ablate(r);
    if (sub == ana_c) return cmd_analyze(r);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << sub->help();
    return 2;
  } catch (const ValidationFailure& e) {
    std::cerr << "validation failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
