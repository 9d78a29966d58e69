#include <doctest.h>

#include <cmath>

#include "apiarius/gpn.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::gpn;

namespace {

ModelConfig tiny() {
  ModelConfig c = ModelConfig::desk();
  c.pretrain_iters = 5;
  c.joint_iters = 5;
  c.batch_pretrain = 2;
  c.elbo_samples = 2;
  c.grad_samples = 4;
  c.loss_every = 1;
  c.metric_every = 5;
  return c;
}

/// Days with random spectra and smoothly varying env readings.
std::vector<ModelDay> toy_days(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<ModelDay> out;
  for (int i = 0; i < n; ++i) {
    ModelDay d;
    d.hive_id = "H0" + std::to_string(i % 3);
    d.date = 19000 + i;
    d.spectra.resize(kPixels, kSamplesPerDay);
    for (Eigen::Index k = 0; k < d.spectra.size(); ++k) {
      d.spectra.data()[k] = static_cast<float>(uniform(rng, 0.0, 1.0));
    }
    d.env.resize(kEnvWidth, kSamplesPerDay);
    for (int c = 0; c < kEnvWidth; ++c) {
      for (int s = 0; s < kSamplesPerDay; ++s) d.env(c, s) = 10.0 * c + uniform(rng, 0.0, 5.0);
    }
    d.features.setConstant(data::kFeatureCount, kSamplesPerDay, 0.01f);
    out.push_back(std::move(d));
  }
  return out;
}

data::NormStats toy_norm() {
  data::NormStats n;
  for (int c = 0; c < kEnvWidth; ++c) {
    n.min[c] = 10.0 * c;
    n.max[c] = 10.0 * c + 5.0;
  }
  return n;
}

std::vector<Example> examples_for(const std::vector<ModelDay>& days, int frames) {
  const data::NormStats norm = toy_norm();
  std::vector<Example> ex;
  for (std::size_t i = 0; i < days.size(); ++i) {
    data::InspectionLabel l;
    l.hive_id = days[i].hive_id;
    l.date = days[i].date;
    l.frames_bees = frames;
    ex.push_back({i, make_target(l, norm), l});
  }
  return ex;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("encoder and decoder shape pipeline") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.d_z = 3;
  Rng rng(1);
  GpnParams p = init_gpn(cfg, rng);
  CHECK(p.enc.fc_w.value.shape == ag::Shape::mat(64 * 3 * 3, 6));

  ag::Tape t;
  ag::Var x = t.constant(ag::Tensor::zeros(ag::Shape::map(2, 1, 56, 56)));
  Posterior q = encode(bind(t, p.enc), x, cfg.d_z);
  CHECK(q.mu.shape() == ag::Shape::mat(2, 3));
  CHECK(q.logvar.shape() == ag::Shape::mat(2, 3));
  ag::Var y = decode(bind(t, p.dec), q.mu);
  CHECK(y.shape() == ag::Shape::map(2, 1, 56, 56));
  CHECK(y.value().data.minCoeff() > 0.0);
  CHECK(y.value().data.maxCoeff() < 1.0);

  // every layer of the decoder, by construction: 7 7 14 14 28 28 56
  int side = 7;
  std::vector<int> sides;
  for (int s : kDecoderStrides) sides.push_back(side *= s);
  CHECK(sides == std::vector<int>{7, 14, 14, 28, 28, 56, 56});
}

TEST_CASE("encode is deterministic and finite on a blank input") {
  Rng rng(2);
  GpnParams p = init_gpn(ModelConfig::desk(), rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(56, 56).cwiseAbs();
  Encoding a = encode(x, p.enc, p.d_z);
  Encoding b = encode(x, p.enc, p.d_z);
  CHECK(a.mu == b.mu);
  CHECK(a.logvar == b.logvar);
  Encoding z = encode(Eigen::MatrixXd::Zero(56, 56), p.enc, p.d_z);
  CHECK(z.mu.allFinite());
  CHECK(z.logvar.allFinite());
}

TEST_CASE("encode_means matches per-sample encode") {
  Rng rng(3);
  GpnParams p = init_gpn(ModelConfig::desk(), rng);
  Eigen::MatrixXf s = Eigen::MatrixXf::Random(kPixels, 40).cwiseAbs();
  Eigen::MatrixXd m = encode_means(s, p.enc, p.d_z);
  REQUIRE(m.cols() == 40);
  for (int j : {0, 17, 39}) {
    Eigen::MatrixXd img =
        Eigen::Map<const Eigen::Matrix<float, 56, 56, Eigen::RowMajor>>(s.col(j).data()).cast<double>();
    CHECK((encode(img, p.enc, p.d_z).mu - m.col(j)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("reparameterize") {
  Eigen::VectorXd mu(2);
  mu << 0.3, -1.2;
  SUBCASE("vanishing variance") {
    Rng rng(4);
    Eigen::VectorXd lv = Eigen::VectorXd::Constant(2, -10.0);
    CHECK((reparameterize(mu, lv, rng) - mu).cwiseAbs().maxCoeff() < 1e-2);
  }
  SUBCASE("fixed seed") {
    Rng a(9), b(9);
    Eigen::VectorXd lv = Eigen::VectorXd::Zero(2);
    CHECK(reparameterize(mu, lv, a) == reparameterize(mu, lv, b));
  }
  SUBCASE("Monte Carlo mean") {
    Rng rng(10);
    Eigen::VectorXd lv = Eigen::VectorXd::Constant(2, std::log(0.25));
    const int n = 100000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(2);
    for (int i = 0; i < n; ++i) acc += reparameterize(mu, lv, rng);
    acc /= n;
    CHECK(((acc - mu).array().abs() < 3.0 * 0.5 / std::sqrt(n)).all());
  }
}

TEST_CASE("elbo_loss terms") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(56, 56, 0.5);
  ElboTerms e = elbo_loss(x, x, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2));
  CHECK(e.kl == 0.0);
  CHECK(e.recon == doctest::Approx(std::log(2.0)));
  CHECK(e.total == doctest::Approx(e.recon + e.kl));
  Eigen::VectorXd mu = Eigen::VectorXd::Ones(2);
  ElboTerms f = elbo_loss(x, x, mu, Eigen::VectorXd::Zero(2), 2.0);
  CHECK(f.kl == doctest::Approx(1.0 / kPixels));
  CHECK(f.total == doctest::Approx(f.recon + 2.0 * f.kl));
}

TEST_CASE("predict_day with zero weights returns the head biases") {
  Rng rng(5);
  PredictorParams p = init_predictor(kSamplesPerDay * (2 + kEnvWidth), 3, rng);
  for (ag::Parameter* q : {&p.trunk_w, &p.trunk_b, &p.frames_w, &p.type_w, &p.severity_w}) {
    q->value.data.setZero();
  }
  p.frames_b.value.data.setConstant(0.4);
  p.severity_b.value.data.setConstant(-1.0);
  p.type_b.value.data << 0.1, 0.5, -0.2;
  DayTensor d{Eigen::MatrixXd::Random(kSamplesPerDay, 2), Eigen::MatrixXd::Random(kSamplesPerDay, 6)};
  DayPrediction out = predict_day(d, p);
  CHECK(out.frames == doctest::Approx(sigmoid(0.4)));
  CHECK(out.severity == doctest::Approx(sigmoid(-1.0)));
  CHECK(out.type() == 1);
}

TEST_CASE("day_features layout is sample-major") {
  DayTensor d{Eigen::MatrixXd::Random(kSamplesPerDay, 2), Eigen::MatrixXd::Random(kSamplesPerDay, 6)};
  Eigen::VectorXd f = day_features(d);
  REQUIRE(f.size() == kSamplesPerDay * 8);
  CHECK(f(5 * 8 + 1) == d.latents(5, 1));
  CHECK(f(5 * 8 + 2 + 3) == d.env(5, 3));
}

TEST_CASE("exclude_modality masks both channels") {
  ModelConfig c = ModelConfig::desk();
  CHECK(exclude_modality(c, Modality::kNone).env_mask == c.env_mask);
  ModelConfig t = exclude_modality(c, Modality::kTemperature);
  auto days = toy_days(1, 1);
  Eigen::MatrixXd e = normalized_env(days[0], toy_norm(), t.env_mask);
  CHECK(e.row(data::kTempIn).isZero());
  CHECK(e.row(data::kTempExt).isZero());
  CHECK_FALSE(e.row(data::kHumidIn).isZero());
  CHECK(exclude_modality(c, Modality::kPressure).env_mask ==
        std::array<bool, 6>{true, true, true, true, false, false});
  CHECK(parse_modality("humidity") == Modality::kHumidity);
  CHECK_THROWS(parse_modality("light"));
}

TEST_CASE("config validation rejects nonsense") {
  ModelConfig c = ModelConfig::desk();
  CHECK_NOTHROW(c.validate());
  c.d_z = 0;
  CHECK_THROWS(c.validate());
  c = ModelConfig::desk();
  c.grad_samples = 4;
  c.elbo_samples = 8;
  CHECK_THROWS(c.validate());
}

TEST_CASE("train_joint with zero task weights leaves the predictor untouched") {
  ModelConfig cfg = tiny();
  cfg.w_frames = cfg.w_type = cfg.w_severity = 0.0;
  Rng rng(6);
  GpnParams p = init_gpn(cfg, rng);
  const PredictorParams before = p.pred;
  const Eigen::MatrixXd enc_before = p.enc.fc_w.value.data;
  auto days = toy_days(3, 7);
  auto ex = examples_for(days, 10);
  data::NormStats norm = toy_norm();
  TrainContext ctx;
  ctx.days = days;
  ctx.norm = &norm;
  Trainer tr(cfg, p, 8);
  tr.train_joint(ctx, ex, {});
  CHECK(p.pred.trunk_w.value.data == before.trunk_w.value.data);
  CHECK(p.pred.frames_b.value.data == before.frames_b.value.data);
  CHECK(p.pred.type_w.value.data == before.type_w.value.data);
  CHECK(p.pred.severity_w.value.data == before.severity_w.value.data);
  // the ELBO still trains the encoder
  CHECK(p.enc.fc_w.value.data != enc_before);
}

TEST_CASE("train_joint needs labeled days") {
  ModelConfig cfg = tiny();
  Rng rng(6);
  GpnParams p = init_gpn(cfg, rng);
  auto days = toy_days(1, 1);
  data::NormStats norm = toy_norm();
  TrainContext ctx;
  ctx.days = days;
  ctx.norm = &norm;
  Trainer tr(cfg, p, 8);
  CHECK_THROWS(tr.train_joint(ctx, {}, {}));
}

TEST_CASE("sampled backprop leaves the forward loss unchanged") {
  // Taped and untaped means coincide, so only the gradient path differs.
  ModelConfig full = tiny();
  full.grad_samples = kSamplesPerDay;
  full.elbo_samples = 0;
  ModelConfig part = full;
  part.grad_samples = 8;
  Rng rng(12);
  GpnParams p = init_gpn(full, rng);
  auto days = toy_days(2, 13);
  auto ex = examples_for(days, 12);
  data::NormStats norm = toy_norm();
  TrainContext ctx;
  ctx.days = days;
  ctx.norm = &norm;
  GpnParams pa = p, pb = p;
  Trainer ta(full, pa, 1), tb(part, pb, 1);
  auto a = ta.joint_step(ctx, ex, false);
  auto b = tb.joint_step(ctx, ex, false);
  CHECK(a.frames == doctest::Approx(b.frames).epsilon(1e-9));
  CHECK(a.type == doctest::Approx(b.type).epsilon(1e-9));
}

TEST_CASE("pretraining lowers the reconstruction loss") {
  ModelConfig cfg = tiny();
  cfg.pretrain_iters = 60;
  cfg.batch_pretrain = 4;
  Rng rng(14);
  GpnParams p = init_gpn(cfg, rng);
  // smooth structured inputs: a bright horizontal band
  std::vector<ModelDay> days = toy_days(2, 15);
  for (auto& d : days) {
    for (int s = 0; s < kSamplesPerDay; ++s) {
      Eigen::Map<Eigen::MatrixXf> img(d.spectra.col(s).data(), 56, 56);
      img.setConstant(0.1f);
      img.middleRows(20 + s % 8, 4).setConstant(0.9f);
    }
  }
  TrainContext ctx;
  ctx.days = days;
  std::vector<std::size_t> pool = {0, 1};
  Trainer tr(cfg, p, 3);
  tr.pretrain(ctx, pool);
  REQUIRE(ctx.curve.size() == 60);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) first += ctx.curve[static_cast<std::size_t>(i)].recon;
  for (int i = 50; i < 60; ++i) last += ctx.curve[static_cast<std::size_t>(i)].recon;
  CHECK(last < first);
}

TEST_CASE("baseline features and constant-label convergence") {
  ModelConfig cfg = tiny();
  cfg.joint_iters = 400;
  cfg.batch_joint = 4;
  auto days = toy_days(4, 16);
  auto ex = examples_for(days, 10);
  data::NormStats norm = toy_norm();
  std::vector<std::size_t> idx = {0, 1, 2, 3};
  FeatureNorm fn = fit_feature_norm(days, idx);
  CHECK(baseline_features(days[0], fn, norm, cfg.env_mask).size() == kSamplesPerDay * kBaselineFeatures);
  CHECK(kBaselineFeatures == 22);
  TrainContext ctx;
  ctx.days = days;
  ctx.norm = &norm;
  BaselineModel m = baseline_mlp(ctx, ex, cfg, 17);
  auto pred = predict_baseline(m, days, ex, norm, cfg);
  for (const auto& d : pred) CHECK(std::abs(norm.frames_raw(d.frames) - 10.0) < 0.5);
}

TEST_CASE("gpn checkpoint round trip infers the latent width") {
  test::TempDir tmp("gpn");
  ModelConfig cfg = ModelConfig::desk();
  cfg.d_z = 4;
  Rng rng(18);
  GpnParams p = init_gpn(cfg, rng);
  save_gpn(tmp / "m.ckpt", p);
  GpnParams q = load_gpn(tmp / "m.ckpt");
  CHECK(q.d_z == 4);
  CHECK(q.dec.tconv_w[3].value.data == p.dec.tconv_w[3].value.data);
  CHECK(q.pred.type_b.value.data == p.pred.type_b.value.data);
}
