#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "apiarius/eval.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::eval;

namespace {

std::vector<std::string> hive_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("H" + std::to_string(100 + i));
  return out;
}

gpn::ModelConfig quick() {
  gpn::ModelConfig c = gpn::ModelConfig::desk();
  c.pretrain_iters = 20;
  c.joint_iters = 10;
  c.metric_every = 10;
  c.loss_every = 5;
  c.grad_samples = 8;
  c.elbo_samples = 2;
  return c;
}

synth::SynthConfig small_world() {
  synth::SynthConfig s;
  s.n_hives = 4;
  s.n_days = 8;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("partition_folds sizes") {
  std::vector<int> s = partition_folds(hive_names(26), 10, 1).sizes();
  std::sort(s.begin(), s.end());
  CHECK(s == std::vector<int>{2, 2, 2, 2, 3, 3, 3, 3, 3, 3});
  for (int n : partition_folds(hive_names(10), 10, 5).sizes()) CHECK(n == 1);
  CHECK_THROWS(partition_folds(hive_names(3), 4, 1));
}

TEST_CASE("partition_folds is a function of the seed") {
  FoldPlan a = partition_folds(hive_names(26), 10, 42);
  FoldPlan b = partition_folds(hive_names(26), 10, 42);
  CHECK(a.fold_of == b.fold_of);
  // input order does not matter
  auto names = hive_names(26);
  std::reverse(names.begin(), names.end());
  CHECK(partition_folds(names, 10, 42).fold_of == a.fold_of);
  bool differs = false;
  for (uint64_t s = 43; s < 50 && !differs; ++s) {
    differs = partition_folds(hive_names(26), 10, s).fold_of != a.fold_of;
  }
  CHECK(differs);
}

TEST_CASE("random plans never share a hive between train and validation") {
  Rng rng(2024);
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 40)(rng);
    const int k = std::uniform_int_distribution<int>(2, n)(rng);
    FoldPlan p = partition_folds(hive_names(n), k, rng());
    for (int f = 0; f < k; ++f) {
      std::vector<std::string> val = p.hives(f), train;
      for (const auto& [h, fold] : p.fold_of) {
        if (fold != f) train.push_back(h);
      }
      std::set<std::string> vs(val.begin(), val.end());
      for (const auto& h : train) violations += vs.count(h) ? 1 : 0;
      CHECK_NOTHROW(assert_disjoint(train, val));
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("assert_disjoint detects leakage") {
  std::vector<std::string> a = {"H1", "H2"}, b = {"H3", "H2"};
  CHECK_THROWS_AS(assert_disjoint(a, b), Error);
}

TEST_CASE("cdf_frames band rule") {
  std::vector<double> p = {5.0, 10.0, 20.0}, l = {5.0, 10.0, 20.0};
  CHECK(cdf_frames(p, l).within_band == 1.0);

  std::vector<double> p2 = {12.0}, l2 = {10.0};
  CdfResult r = cdf_frames(p2, l2);
  CHECK(r.pct_diff[0] == doctest::Approx(0.2));
  CHECK(r.within_band == 1.0);

  std::vector<double> p3 = {12.5, 7.0}, l3 = {10.0, 10.0};
  CHECK(cdf_frames(p3, l3).within_band == 0.0);

  CdfResult sorted = cdf_frames(std::vector<double>{3.0, 1.0, 9.0}, std::vector<double>{1.0, 1.0, 1.0});
  CHECK(std::is_sorted(sorted.abs_diff.begin(), sorted.abs_diff.end()));
  auto lv = cdf_levels(4);
  CHECK(lv.back() == 1.0);
  CHECK(lv.front() == 0.25);
}

TEST_CASE("aggregate_runs mean and population std") {
  std::vector<RunMetric> r = {{"m", "run0", "frames", 0.01}, {"m", "run1", "frames", 0.03},
                              {"m", "run0", "type", 0.5}, {"m", "run1", "type", 0.5}};
  auto a = aggregate_runs(r);
  REQUIRE(a.size() == 2);
  CHECK(a[0].task == "frames");
  CHECK(a[0].mean == doctest::Approx(0.02));
  CHECK(a[0].std == doctest::Approx(0.01));
  CHECK(a[0].n == 2);
  CHECK(a[1].std == 0.0);
}

TEST_CASE("model names") {
  for (auto m : {ModelKind::kGpnUnlabeled, ModelKind::kGpnLabeled, ModelKind::kBaselineMlp}) {
    CHECK(parse_model(model_name(m)) == m);
  }
  CHECK_THROWS(parse_model("svm"));
}

TEST_CASE("run_cv end to end on a small world") {
  test::SynthCv w = test::synth_cv(small_world());
  REQUIRE(w.hives.size() == 4);
  REQUIRE_FALSE(w.cv.labeled.empty());
  FoldPlan plan = partition_folds(w.hives, 2, 9);

  CvOptions opt;
  opt.cfg = quick();
  opt.seed = 9;
  SUBCASE("cached and uncached pretraining give identical results") {
    CvResult a = run_cv(w.cv, plan, opt);
    PretrainCache cache;
    opt.cache = &cache;
    CvResult b = run_cv(w.cv, plan, opt);
    CvResult c = run_cv(w.cv, plan, opt);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
      CHECK(a.metrics[i].value == b.metrics[i].value);
      CHECK(b.metrics[i].value == c.metrics[i].value);
    }
    for (const FoldReport& f : a.folds) {
      std::set<std::string> t(f.train_hives.begin(), f.train_hives.end());
      for (const auto& h : f.val_hives) CHECK(t.count(h) == 0);
    }
    // every metric iteration is on the metric grid
    for (const auto& m : a.metrics) CHECK(m.iteration % opt.cfg.metric_every == 0);
    auto fm = final_metrics(a, opt.cfg.huber_delta);
    CHECK(fm.size() == 4);
  }
  SUBCASE("threads do not change results") {
    CvResult a = run_cv(w.cv, plan, opt);
    opt.threads = 2;
    CvResult b = run_cv(w.cv, plan, opt);
    REQUIRE(a.predictions.size() == b.predictions.size());
    for (std::size_t i = 0; i < a.predictions.size(); ++i) {
      CHECK(a.predictions[i].pred == b.predictions[i].pred);
    }
  }
  SUBCASE("baseline predictions cover each validation label") {
    opt.model = ModelKind::kBaselineMlp;
    CvResult r = run_cv(w.cv, plan, opt);
    std::size_t n_frames = 0;
    for (const auto& p : r.predictions) n_frames += p.task == "frames" ? 1 : 0;
    CHECK(n_frames == w.cv.labeled.size());
  }
}

TEST_CASE("validation-hive unlabeled days stay out of the training hive set") {
  test::SynthCv w = test::synth_cv(small_world());
  FoldPlan plan = partition_folds(w.hives, 2, 5);
  CvOptions opt;
  opt.cfg = quick();
  opt.unlabeled_val_hives = true;
  CvResult a = run_cv(w.cv, plan, opt);
  for (const FoldReport& f : a.folds) {
    std::set<std::string> t(f.train_hives.begin(), f.train_hives.end());
    for (const auto& h : f.val_hives) CHECK(t.count(h) == 0);
  }
  // the labeled-only model ignores the switch
  opt.model = ModelKind::kGpnLabeled;
  CvResult b = run_cv(w.cv, plan, opt);
  opt.unlabeled_val_hives = false;
  CvResult c = run_cv(w.cv, plan, opt);
  REQUIRE(b.predictions.size() == c.predictions.size());
  for (std::size_t i = 0; i < b.predictions.size(); ++i) CHECK(b.predictions[i].pred == c.predictions[i].pred);
}

TEST_CASE("a fold without labeled validation days is flagged empty") {
  test::SynthCv w = test::synth_cv(small_world());
  // drop every label of the first hive so its fold has nothing to validate
  FoldPlan plan = partition_folds(w.hives, 4, 1);
  std::erase_if(w.cv.labeled, [&](const data::LabeledDay& l) { return l.label.hive_id == w.hives[0]; });
  CvOptions opt;
  opt.cfg = quick();
  opt.model = ModelKind::kBaselineMlp;
  CvResult r = run_cv(w.cv, plan, opt);
  int empty = 0;
  for (const FoldReport& f : r.folds) empty += f.empty ? 1 : 0;
  CHECK(empty == 1);
}

TEST_CASE("ablation suite reports deltas against the full model") {
  test::SynthCv w = test::synth_cv(small_world());
  FoldPlan plan = partition_folds(w.hives, 2, 4);
  CvOptions opt;
  opt.cfg = quick();
  PretrainCache cache;
  opt.cache = &cache;
  AblationResult a = run_ablation_suite(w.cv, plan, opt);
  std::set<std::string> excluded;
  for (const auto& r : a.rows) {
    excluded.insert(r.excluded);
    if (r.excluded == "none") CHECK(r.delta == 0.0);
  }
  CHECK(excluded == std::set<std::string>{"none", "humidity", "temperature", "pressure"});
}

TEST_CASE("metrics and predictions csv round trip") {
  test::TempDir tmp("csv");
  std::vector<MetricRecord> m = {{"run0", "gpn-labeled", 1, 200, "frames", 0.125}};
  std::vector<PredictionRow> p = {{"run0", "gpn-labeled", 1, "H01", 19000, "frames", 11.5, 12.0}};
  write_metrics_csv(tmp / "m.csv", m);
  write_predictions_csv(tmp / "p.csv", p);
  auto m2 = read_metrics_csv(tmp / "m.csv");
  auto p2 = read_predictions_csv(tmp / "p.csv");
  REQUIRE(m2.size() == 1);
  CHECK(m2[0].value == 0.125);
  CHECK(m2[0].iteration == 200);
  REQUIRE(p2.size() == 1);
  CHECK(p2[0].hive_id == "H01");
  CHECK(p2[0].date == 19000);
  CHECK(p2[0].pred == 11.5);
}
