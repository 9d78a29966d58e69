#include "apiarius/gpn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace apiarius::gpn {

using ag::Parameter;
using ag::Shape;
using ag::Tensor;
using ag::Var;

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kNone: return "none";
    case Modality::kHumidity: return "humidity";
    case Modality::kTemperature: return "temperature";
    case Modality::kPressure: return "pressure";
  }
  return "none";
}

Modality parse_modality(const std::string& text) {
  for (Modality m : {Modality::kNone, Modality::kHumidity, Modality::kTemperature,
                     Modality::kPressure}) {
    if (text == modality_name(m)) return m;
  }
  throw Error("unknown modality '" + text + "'");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.pretrain_iters = 2000;
  c.joint_iters = 200;
  c.lr_main = 1e-3;
  c.lr_disease = 1e-3 * (1e-4 / 3e-5);
  c.batch_pretrain = 4;
  c.batch_joint = 1;
  c.elbo_samples = 4;
  c.grad_samples = 16;
  return c;
}

void ModelConfig::validate() const {
  if (d_z < 1) throw Error("d_z must be >= 1");
  if (!(lr_main > 0.0) || !(lr_disease > 0.0)) throw Error("learning rates must be > 0");
  if (n_classes < 2) throw Error("need at least two disease classes");
  if (!(huber_delta > 0.0)) throw Error("huber_delta must be > 0");
  if (pretrain_iters < 0 || joint_iters < 0) throw Error("iteration counts must be >= 0");
  if (batch_pretrain < 1 || batch_joint < 1) throw Error("batch sizes must be >= 1");
  if (grad_samples < 1 || grad_samples > kSamplesPerDay) {
    throw Error("grad_samples must lie in [1, 96]");
  }
  if (elbo_samples < 0 || elbo_samples > grad_samples) {
    throw Error("elbo_samples must lie in [0, grad_samples]");
  }
  if (loss_every < 1 || metric_every < 1) throw Error("logging cadences must be >= 1");
  if (w_frames < 0.0 || w_type < 0.0 || w_severity < 0.0 || kl_weight < 0.0) {
    throw Error("loss weights must be >= 0");
  }
}

ModelConfig exclude_modality(ModelConfig cfg, Modality m) {
  auto off = [&](int a, int b) { cfg.env_mask[a] = cfg.env_mask[b] = false; };
  switch (m) {
    case Modality::kNone: break;
    case Modality::kTemperature: off(data::kTempIn, data::kTempExt); break;
    case Modality::kHumidity: off(data::kHumidIn, data::kHumidExt); break;
    case Modality::kPressure: off(data::kPressIn, data::kPressExt); break;
  }
  return cfg;
}

// --- parameters ---------------------------------------------------------------------

namespace {

Parameter weight(std::string name, int in, int out) {
  return Parameter(std::move(name), Tensor::zeros(Shape::mat(in, out)));
}
Parameter bias(std::string name, int n) {
  return Parameter(std::move(name), Tensor::zeros(Shape::vec(n)));
}

void shape_gpn(GpnParams& g, int d_z) {
  g.d_z = d_z;
  int cin = 1;
  for (int i = 0; i < 4; ++i) {
    const int cout = kEncoderChannels[i];
    const std::string base = "enc.conv" + std::to_string(i);
    g.enc.conv_w[i] = weight(base + ".w", 9 * cin, cout);
    g.enc.conv_b[i] = bias(base + ".b", cout);
    cin = cout;
  }
  g.enc.fc_w = weight("enc.fc.w", 64 * 3 * 3, 2 * d_z);
  g.enc.fc_b = bias("enc.fc.b", 2 * d_z);
  g.dec.fc_w = weight("dec.fc.w", d_z, 64 * 7 * 7);
  g.dec.fc_b = bias("dec.fc.b", 64 * 7 * 7);
  cin = 64;
  for (int i = 0; i < kDecoderLayers; ++i) {
    const int k = kDecoderStrides[i] == 2 ? 4 : 3;
    const int cout = kDecoderChannels[i];
    const std::string base = "dec.tconv" + std::to_string(i);
    g.dec.tconv_w[i] = weight(base + ".w", cin, k * k * cout);
    g.dec.tconv_b[i] = bias(base + ".b", cout);
    cin = cout;
  }
}

PredictorParams shape_predictor(const std::string& prefix, int in_width, int n_classes) {
  PredictorParams p;
  p.trunk_w = weight(prefix + "trunk.w", in_width, kTrunkWidth);
  p.trunk_b = bias(prefix + "trunk.b", kTrunkWidth);
  p.frames_w = weight(prefix + "frames.w", kTrunkWidth, 1);
  p.frames_b = bias(prefix + "frames.b", 1);
  p.type_w = weight(prefix + "type.w", kTrunkWidth, n_classes);
  p.type_b = bias(prefix + "type.b", n_classes);
  p.severity_w = weight(prefix + "severity.w", kTrunkWidth, 1);
  p.severity_b = bias(prefix + "severity.b", 1);
  return p;
}

void init_predictor_values(PredictorParams& p, int in_width, Rng& rng) {
  ag::he_init(p.trunk_w, in_width, rng);
  ag::he_init(p.frames_w, kTrunkWidth, rng);
  ag::he_init(p.type_w, kTrunkWidth, rng);
  ag::he_init(p.severity_w, kTrunkWidth, rng);
}

std::vector<Parameter*> predictor_list(PredictorParams& p) {
  return {&p.trunk_w, &p.trunk_b, &p.frames_w, &p.frames_b,
          &p.type_w,  &p.type_b,  &p.severity_w, &p.severity_b};
}

}  // namespace

std::vector<Parameter*> GpnParams::encoder() {
  std::vector<Parameter*> v;
  for (int i = 0; i < 4; ++i) {
    v.push_back(&enc.conv_w[i]);
    v.push_back(&enc.conv_b[i]);
  }
  v.push_back(&enc.fc_w);
  v.push_back(&enc.fc_b);
  return v;
}

std::vector<Parameter*> GpnParams::decoder() {
  std::vector<Parameter*> v{&dec.fc_w, &dec.fc_b};
  for (int i = 0; i < kDecoderLayers; ++i) {
    v.push_back(&dec.tconv_w[i]);
    v.push_back(&dec.tconv_b[i]);
  }
  return v;
}

std::vector<Parameter*> GpnParams::predictor() { return predictor_list(pred); }

std::vector<Parameter*> GpnParams::all() {
  auto v = encoder();
  for (Parameter* p : decoder()) v.push_back(p);
  for (Parameter* p : predictor()) v.push_back(p);
  return v;
}

std::vector<const Parameter*> GpnParams::all() const {
  auto v = const_cast<GpnParams*>(this)->all();
  return {v.begin(), v.end()};
}

PredictorParams init_predictor(int in_width, int n_classes, Rng& rng) {
  PredictorParams p = shape_predictor("pred.", in_width, n_classes);
  init_predictor_values(p, in_width, rng);
  return p;
}

GpnParams init_gpn(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  GpnParams g;
  shape_gpn(g, cfg.d_z);
  int cin = 1;
  for (int i = 0; i < 4; ++i) {
    ag::he_init(g.enc.conv_w[i], 9 * cin, rng);
    cin = kEncoderChannels[i];
  }
  ag::he_init(g.enc.fc_w, 64 * 9, rng);
  // Start near a unit-variance posterior so the KL term begins small.
  g.enc.fc_w.value.data *= 0.1;
  ag::he_init(g.dec.fc_w, cfg.d_z, rng);
  cin = 64;
  for (int i = 0; i < kDecoderLayers; ++i) {
    const int s = kDecoderStrides[i];
    const int k = s == 2 ? 4 : 3;
    ag::he_init(g.dec.tconv_w[i], cin * k * k / (s * s), rng);
    cin = kDecoderChannels[i];
  }
  g.pred = init_predictor(kSamplesPerDay * (cfg.d_z + kEnvWidth), cfg.n_classes, rng);
  return g;
}

// --- graph builders ---------------------------------------------------------------

namespace {
Var bind_one(ag::Tape& t, Parameter& p, bool trainable) {
  return trainable ? t.param(p) : t.constant(p.value);
}
}  // namespace

EncoderVars bind(ag::Tape& t, EncoderParams& p, bool trainable) {
  EncoderVars v;
  for (int i = 0; i < 4; ++i) {
    v.conv_w[i] = bind_one(t, p.conv_w[i], trainable);
    v.conv_b[i] = bind_one(t, p.conv_b[i], trainable);
  }
  v.fc_w = bind_one(t, p.fc_w, trainable);
  v.fc_b = bind_one(t, p.fc_b, trainable);
  return v;
}

DecoderVars bind(ag::Tape& t, DecoderParams& p, bool trainable) {
  DecoderVars v;
  v.fc_w = bind_one(t, p.fc_w, trainable);
  v.fc_b = bind_one(t, p.fc_b, trainable);
  for (int i = 0; i < kDecoderLayers; ++i) {
    v.tconv_w[i] = bind_one(t, p.tconv_w[i], trainable);
    v.tconv_b[i] = bind_one(t, p.tconv_b[i], trainable);
  }
  return v;
}

PredictorVars bind(ag::Tape& t, PredictorParams& p, bool trainable) {
  return {bind_one(t, p.trunk_w, trainable),    bind_one(t, p.trunk_b, trainable),
          bind_one(t, p.frames_w, trainable),   bind_one(t, p.frames_b, trainable),
          bind_one(t, p.type_w, trainable),     bind_one(t, p.type_b, trainable),
          bind_one(t, p.severity_w, trainable), bind_one(t, p.severity_b, trainable)};
}

Posterior encode(const EncoderVars& e, Var x, int d_z) {
  if (x.shape().rank != 4 || x.shape()[1] != 1 || x.shape()[2] != kSide ||
      x.shape()[3] != kSide) {
    throw ShapeError("encode: expected (N,1,56,56), got " + x.shape().str());
  }
  Var h = x;
  for (int i = 0; i < 4; ++i) h = ag::maxpool2(ag::relu(ag::conv2d(h, e.conv_w[i], e.conv_b[i])));
  Var out = ag::dense(ag::flatten(h), e.fc_w, e.fc_b);
  return {ag::slice_features(out, 0, d_z),
          ag::clamp(ag::slice_features(out, d_z, d_z), -10.0, 10.0)};
}

Var decode(const DecoderVars& d, Var z) {
  Var h = ag::unflatten(ag::relu(ag::dense(z, d.fc_w, d.fc_b)), 64, 7, 7);
  for (int i = 0; i < kDecoderLayers; ++i) {
    const int s = kDecoderStrides[i];
    h = ag::tconv2d(h, d.tconv_w[i], d.tconv_b[i], s == 2 ? 4 : 3, s, 1);
    h = i + 1 < kDecoderLayers ? ag::relu(h) : ag::sigmoid(h);
  }
  return h;
}

HeadVars predict(const PredictorVars& p, Var features) {
  Var h = ag::relu(ag::dense(features, p.trunk_w, p.trunk_b));
  return {ag::sigmoid(ag::dense(h, p.frames_w, p.frames_b)), ag::dense(h, p.type_w, p.type_b),
          ag::sigmoid(ag::dense(h, p.severity_w, p.severity_b))};
}

ElboVars elbo(Var x, Var recon, Var mu, Var logvar, double kl_weight) {
  Var r = ag::bce(recon, x);
  Var kl = ag::scale(ag::kl_diag_gauss(mu, logvar), 1.0 / kPixels);
  return {ag::add(r, ag::scale(kl, kl_weight)), r, kl};
}

namespace {
Var sample_latent(ag::Tape& t, Var mu, Var logvar, Rng& rng) {
  Eigen::MatrixXd eps(mu.value().data.rows(), mu.value().data.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = standard_normal(rng);
  Var n = t.constant(Tensor(mu.shape(), std::move(eps)));
  return ag::add(mu, ag::mul(ag::exp(ag::scale(logvar, 0.5)), n));
}
}  // namespace

Tensor images(const Eigen::MatrixXf& spectra) {
  if (spectra.rows() != kPixels) throw ShapeError("images: expected 3136-row spectra block");
  const int n = static_cast<int>(spectra.cols());
  Eigen::MatrixXd d(1, static_cast<Eigen::Index>(n) * kPixels);
  Eigen::Map<Eigen::MatrixXd>(d.data(), kPixels, n) = spectra.cast<double>();
  return Tensor(Shape::map(n, 1, kSide, kSide), std::move(d));
}

Tensor images(const Eigen::MatrixXf& spectra, std::span<const int> columns) {
  if (spectra.rows() != kPixels) throw ShapeError("images: expected 3136-row spectra block");
  const int n = static_cast<int>(columns.size());
  Eigen::MatrixXd d(1, static_cast<Eigen::Index>(n) * kPixels);
  Eigen::Map<Eigen::MatrixXd> m(d.data(), kPixels, n);
  for (int j = 0; j < n; ++j) m.col(j) = spectra.col(columns[j]).cast<double>();
  return Tensor(Shape::map(n, 1, kSide, kSide), std::move(d));
}

// --- value-level operations -------------------------------------------------------

Encoding encode(const Eigen::MatrixXd& x56, EncoderParams& p, int d_z) {
  if (x56.rows() != kSide || x56.cols() != kSide) {
    throw ShapeError("encode: expected 56x56 input");
  }
  ag::Tape t;
  Eigen::MatrixXd d(1, kPixels);
  Eigen::Map<Eigen::Matrix<double, kSide, kSide, Eigen::RowMajor>>(d.data()) = x56;
  Var x = t.constant(Tensor(Shape::map(1, 1, kSide, kSide), std::move(d)));
  Posterior q = encode(bind(t, p, false), x, d_z);
  return {q.mu.value().data.col(0), q.logvar.value().data.col(0)};
}

Eigen::MatrixXd encode_means(const Eigen::MatrixXf& spectra, EncoderParams& p, int d_z) {
  constexpr Eigen::Index kChunk = 32;
  Eigen::MatrixXd out(d_z, spectra.cols());
  for (Eigen::Index c0 = 0; c0 < spectra.cols(); c0 += kChunk) {
    const Eigen::Index n = std::min(kChunk, spectra.cols() - c0);
    ag::Tape t;
    Var x = t.constant(images(spectra.middleCols(c0, n)));
    out.middleCols(c0, n) = encode(bind(t, p, false), x, d_z).mu.value().data;
  }
  return out;
}

Eigen::MatrixXd decode(const Eigen::VectorXd& z, DecoderParams& p) {
  ag::Tape t;
  Var zv = t.constant(Tensor(Shape::mat(1, static_cast<int>(z.size())), z));
  const Eigen::MatrixXd& d = decode(bind(t, p, false), zv).value().data;
  return Eigen::Map<const Eigen::Matrix<double, kSide, kSide, Eigen::RowMajor>>(d.data());
}

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar,
                               Rng& rng) {
  if (mu.size() != logvar.size()) throw ShapeError("reparameterize: mu/logvar size mismatch");
  Eigen::VectorXd z(mu.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    z(i) = mu(i) + std::exp(0.5 * logvar(i)) * standard_normal(rng);
  }
  return z;
}

ElboTerms elbo_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& recon,
                    const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, double kl_weight) {
  if (x.rows() != recon.rows() || x.cols() != recon.cols()) {
    throw ShapeError("elbo_loss: input/reconstruction shape mismatch");
  }
  ag::Tape t;
  auto vec = [&](const Eigen::VectorXd& v) {
    return t.constant(Tensor(Shape::mat(1, static_cast<int>(v.size())), v));
  };
  auto img = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd d = Eigen::Map<const Eigen::MatrixXd>(m.data(), m.size(), 1);
    return t.constant(Tensor(Shape::mat(1, static_cast<int>(m.size())), std::move(d)));
  };
  ElboVars e = elbo(img(x), img(recon), vec(mu), vec(logvar), kl_weight);
  return {e.total.item(), e.recon.item(), e.kl.item()};
}

int DayPrediction::type() const {
  Eigen::Index i = 0;
  type_logits.maxCoeff(&i);
  return static_cast<int>(i);
}

Eigen::VectorXd day_features(const DayTensor& day) {
  if (day.latents.rows() != kSamplesPerDay || day.env.rows() != kSamplesPerDay) {
    throw ShapeError("day tensor must have exactly 96 rows, got " +
                     std::to_string(day.latents.rows()) + " latent / " +
                     std::to_string(day.env.rows()) + " env");
  }
  if (day.env.cols() != kEnvWidth) throw ShapeError("day tensor env must have 6 columns");
  const Eigen::Index w = day.latents.cols() + kEnvWidth;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(kSamplesPerDay, w);
  rows << day.latents, day.env;
  return Eigen::Map<const Eigen::VectorXd>(rows.data(), rows.size());
}

namespace {
std::vector<DayPrediction> run_heads(PredictorParams& p, const Eigen::MatrixXd& feats) {
  ag::Tape t;
  Var x = t.constant(Tensor(Shape::mat(static_cast<int>(feats.cols()),
                                       static_cast<int>(feats.rows())),
                            feats));
  HeadVars h = predict(bind(t, p, false), x);
  std::vector<DayPrediction> out(static_cast<std::size_t>(feats.cols()));
  for (Eigen::Index j = 0; j < feats.cols(); ++j) {
    auto& o = out[static_cast<std::size_t>(j)];
    o.frames = h.frames.value().data(0, j);
    o.type_logits = h.type.value().data.col(j);
    o.severity = h.severity.value().data(0, j);
  }
  return out;
}
}  // namespace

DayPrediction predict_day(const DayTensor& day, PredictorParams& p) {
  Eigen::VectorXd f = day_features(day);
  if (f.size() != p.trunk_w.value.data.cols()) {
    throw ShapeError("predict_day: day width " + std::to_string(f.size()) +
                     " does not match predictor input " +
                     std::to_string(p.trunk_w.value.data.cols()));
  }
  return run_heads(p, f).front();
}

// --- training data ----------------------------------------------------------------

ModelDay make_model_day(const data::HiveDay& day, Eigen::MatrixXf spectra) {
  if (day.samples.size() != static_cast<std::size_t>(kSamplesPerDay)) {
    throw ShapeError("model day needs 96 samples");
  }
  if (spectra.rows() != kPixels || spectra.cols() != kSamplesPerDay) {
    throw ShapeError("model day spectra must be 3136 x 96");
  }
  ModelDay m;
  m.hive_id = day.hive_id;
  m.date = day.date;
  m.spectra = std::move(spectra);
  m.env.resize(kEnvWidth, kSamplesPerDay);
  m.features.resize(data::kFeatureCount, kSamplesPerDay);
  for (int s = 0; s < kSamplesPerDay; ++s) {
    const auto& smp = day.samples[static_cast<std::size_t>(s)];
    for (int c = 0; c < kEnvWidth; ++c) m.env(c, s) = smp.env[static_cast<std::size_t>(c)];
    for (int f = 0; f < data::kFeatureCount; ++f) {
      m.features(f, s) = smp.audio.has_features ? smp.audio.features[static_cast<std::size_t>(f)]
                                                : 0.0f;
    }
  }
  return m;
}

Target make_target(const data::InspectionLabel& label, const data::NormStats& norm) {
  return {norm.frames(label.frames_bees), label.disease_type, norm.severity(label.severity)};
}

Eigen::MatrixXd normalized_env(const ModelDay& day, const data::NormStats& norm,
                               const std::array<bool, kEnvWidth>& mask) {
  Eigen::MatrixXd e(kEnvWidth, day.env.cols());
  for (int c = 0; c < kEnvWidth; ++c) {
    const double span = norm.max[c] - norm.min[c];
    if (!mask[static_cast<std::size_t>(c)] || !(span > 0.0)) {
      e.row(c).setZero();
    } else {
      e.row(c) = (day.env.row(c).array() - norm.min[c]) / span;
    }
  }
  return e;
}

// --- training ---------------------------------------------------------------------

namespace {

void zero_all(std::span<Parameter* const> ps) {
  for (Parameter* p : ps) p->zero_grad();
}

/// Replaces columns `index` of a constant (N,F) block with a taped (M,F) block. Gradient
/// reaches the taped rows only, multiplied by `grad_scale`.
Var splice(ag::Tape& t, const Eigen::MatrixXd& base, Var sub, std::vector<int> index,
           double grad_scale) {
  Eigen::MatrixXd out = base;
  const Eigen::MatrixXd& s = sub.value().data;
  for (std::size_t j = 0; j < index.size(); ++j) out.col(index[j]) = s.col(static_cast<Eigen::Index>(j));
  const int si = sub.id;
  const Eigen::Index m = s.cols();
  return t.record(Tensor(Shape::mat(static_cast<int>(base.cols()), static_cast<int>(base.rows())),
                         std::move(out)),
                  t.requires_grad(si), [=](ag::Tape& tt, const Eigen::MatrixXd& g) {
                    Eigen::MatrixXd gs(g.rows(), m);
                    for (std::size_t j = 0; j < index.size(); ++j) {
                      gs.col(static_cast<Eigen::Index>(j)) = grad_scale * g.col(index[j]);
                    }
                    tt.accumulate(si, gs);
                  });
}

std::vector<int> pick_sorted(Rng& rng, int n, int k) {
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  if (k >= n) return all;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> d(i, n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(d(rng))]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

Tensor target_row(const std::vector<double>& v) {
  Eigen::MatrixXd d(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) d(0, static_cast<Eigen::Index>(i)) = v[i];
  return Tensor(Shape::mat(static_cast<int>(v.size()), 1), std::move(d));
}

}  // namespace

Trainer::Trainer(const ModelConfig& cfg, GpnParams& params, uint64_t seed)
    : cfg_(cfg), p_(params), rng_(seed) {
  cfg_.validate();
}

ElboTerms Trainer::elbo_step(const TrainContext& ctx, std::span<const std::size_t> pool) {
  if (pool.empty()) throw Error("ELBO step needs a non-empty sample pool");
  std::vector<Parameter*> params = p_.encoder();
  for (Parameter* q : p_.decoder()) params.push_back(q);
  zero_all(params);

  const int b = cfg_.batch_pretrain;
  Eigen::MatrixXd x(1, static_cast<Eigen::Index>(b) * kPixels);
  Eigen::Map<Eigen::MatrixXd> cols(x.data(), kPixels, b);
  std::uniform_int_distribution<std::size_t> pick_day(0, pool.size() - 1);
  std::uniform_int_distribution<int> pick_slot(0, kSamplesPerDay - 1);
  for (int i = 0; i < b; ++i) {
    const ModelDay& d = ctx.days[pool[pick_day(rng_)]];
    cols.col(i) = d.spectra.col(pick_slot(rng_)).cast<double>();
  }
  ag::Tape t;
  Var xv = t.constant(Tensor(Shape::map(b, 1, kSide, kSide), std::move(x)));
  Posterior q = encode(bind(t, p_.enc), xv, cfg_.d_z);
  Var recon = decode(bind(t, p_.dec), sample_latent(t, q.mu, q.logvar, rng_));
  ElboVars e = elbo(xv, recon, q.mu, q.logvar, cfg_.kl_weight);
  t.backward(e.total);
  adam_.step(params, cfg_.lr_main);
  return {e.total.item(), e.recon.item(), e.kl.item()};
}

void Trainer::pretrain(TrainContext& ctx, std::span<const std::size_t> pool) {
  if (pool.empty()) throw Error("pretrain: no days in the pool");
  for (int it = 0; it < cfg_.pretrain_iters; ++it) {
    ElboTerms e = elbo_step(ctx, pool);
    ++ctx.iteration;
    if ((it + 1) % cfg_.loss_every == 0) {
      ctx.curve.push_back({ctx.iteration, "pretrain", e.total, e.recon, e.kl, 0, 0, 0});
    }
    if (ctx.on_metric && ctx.iteration % cfg_.metric_every == 0) ctx.on_metric(ctx.iteration);
  }
}

Trainer::JointParts Trainer::joint_step(const TrainContext& ctx, std::span<const Example> batch,
                                        bool apply) {
  if (batch.empty()) throw Error("joint step needs at least one labeled day");
  if (ctx.norm == nullptr) throw Error("joint step needs normalization statistics");
  const int b = static_cast<int>(batch.size());
  const int g = cfg_.grad_samples;
  const int dz = cfg_.d_z;
  const bool sampled = g < kSamplesPerDay;

  // Taped subset per day, plus the ELBO positions within it.
  std::vector<int> taped_cols, elbo_pos, splice_cols;
  Eigen::MatrixXf taped(kPixels, static_cast<Eigen::Index>(b) * g);
  Eigen::MatrixXd env(kEnvWidth, static_cast<Eigen::Index>(b) * kSamplesPerDay);
  Eigen::MatrixXd mu_all;
  if (sampled) mu_all.resize(dz, static_cast<Eigen::Index>(b) * kSamplesPerDay);
  for (int i = 0; i < b; ++i) {
    const ModelDay& d = ctx.days[batch[static_cast<std::size_t>(i)].day];
    std::vector<int> cols = pick_sorted(rng_, kSamplesPerDay, g);
    for (int j = 0; j < g; ++j) {
      taped.col(static_cast<Eigen::Index>(i) * g + j) = d.spectra.col(cols[static_cast<std::size_t>(j)]);
      splice_cols.push_back(i * kSamplesPerDay + cols[static_cast<std::size_t>(j)]);
    }
    for (int j : pick_sorted(rng_, g, cfg_.elbo_samples)) elbo_pos.push_back(i * g + j);
    env.middleCols(static_cast<Eigen::Index>(i) * kSamplesPerDay, kSamplesPerDay) =
        normalized_env(d, *ctx.norm, cfg_.env_mask);
    if (sampled) {
      mu_all.middleCols(static_cast<Eigen::Index>(i) * kSamplesPerDay, kSamplesPerDay) =
          encode_means(d.spectra, p_.enc, dz);
    }
  }

  std::vector<Parameter*> main = p_.encoder();
  for (Parameter* q : p_.decoder()) main.push_back(q);
  main.insert(main.end(), {&p_.pred.trunk_w, &p_.pred.trunk_b, &p_.pred.frames_w,
                           &p_.pred.frames_b, &p_.pred.severity_w, &p_.pred.severity_b});
  std::vector<Parameter*> disease = {&p_.pred.type_w, &p_.pred.type_b};
  zero_all(main);
  zero_all(disease);

  ag::Tape t;
  EncoderVars ev = bind(t, p_.enc);
  Var x = t.constant(images(taped));
  Posterior q = encode(ev, x, dz);
  Var mu = sampled ? splice(t, mu_all, q.mu, splice_cols, static_cast<double>(kSamplesPerDay) / g)
                   : q.mu;
  Var features = ag::reshape(
      ag::concat_features(mu, t.constant(Tensor(
                                  Shape::mat(b * kSamplesPerDay, kEnvWidth), env))),
      Shape::mat(b, kSamplesPerDay * (dz + kEnvWidth)));
  HeadVars h = predict(bind(t, p_.pred), features);

  std::vector<double> tf, ts;
  std::vector<int> tc;
  for (const Example& e : batch) {
    tf.push_back(e.target.frames);
    ts.push_back(e.target.severity);
    tc.push_back(e.target.type);
  }
  Var l_frames = ag::huber(h.frames, t.constant(target_row(tf)), cfg_.huber_delta);
  Var l_sev = ag::huber(h.severity, t.constant(target_row(ts)), cfg_.huber_delta);
  Var l_type = ag::softmax_ce(h.type, tc);

  JointParts parts;
  Var total = t.constant(Tensor::zeros(Shape::scalar()));
  if (cfg_.head_frames) total = ag::add(total, ag::scale(l_frames, cfg_.w_frames));
  if (cfg_.head_type) total = ag::add(total, ag::scale(l_type, cfg_.w_type));
  if (cfg_.head_severity) total = ag::add(total, ag::scale(l_sev, cfg_.w_severity));
  if (!elbo_pos.empty()) {
    Var emu = ag::gather_samples(q.mu, elbo_pos);
    Var elv = ag::gather_samples(q.logvar, elbo_pos);
    Eigen::MatrixXf ex(kPixels, static_cast<Eigen::Index>(elbo_pos.size()));
    for (std::size_t j = 0; j < elbo_pos.size(); ++j) {
      ex.col(static_cast<Eigen::Index>(j)) = taped.col(elbo_pos[j]);
    }
    Var xv = t.constant(images(ex));
    Var recon = decode(bind(t, p_.dec), sample_latent(t, emu, elv, rng_));
    ElboVars e = elbo(xv, recon, emu, elv, cfg_.kl_weight);
    total = ag::add(total, e.total);
    parts.elbo = {e.total.item(), e.recon.item(), e.kl.item()};
  }
  parts.total = total.item();
  parts.frames = l_frames.item();
  parts.type = l_type.item();
  parts.severity = l_sev.item();
  if (apply) {
    t.backward(total);
    adam_.step(main, cfg_.lr_main);
    adam_.step(disease, cfg_.lr_disease);
  }
  return parts;
}

void Trainer::train_joint(TrainContext& ctx, std::span<const Example> labeled,
                          std::span<const std::size_t> unlabeled) {
  if (labeled.empty()) throw Error("train_joint: no labeled days");
  std::uniform_int_distribution<std::size_t> pick(0, labeled.size() - 1);
  std::vector<Example> batch(static_cast<std::size_t>(cfg_.batch_joint));
  for (int it = 0; it < cfg_.joint_iters; ++it) {
    for (Example& e : batch) e = labeled[pick(rng_)];
    JointParts jp = joint_step(ctx, batch);
    if (cfg_.semi_supervised && !unlabeled.empty()) elbo_step(ctx, unlabeled);
    ++ctx.iteration;
    if ((it + 1) % cfg_.loss_every == 0) {
      ctx.curve.push_back({ctx.iteration, "joint", jp.total, jp.elbo.recon, jp.elbo.kl, jp.frames,
                           jp.type, jp.severity});
    }
    if (ctx.on_metric && ctx.iteration % cfg_.metric_every == 0) ctx.on_metric(ctx.iteration);
  }
}

std::vector<DayPrediction> predict_examples(GpnParams& p, std::span<const ModelDay> days,
                                            std::span<const Example> examples,
                                            const data::NormStats& norm, const ModelConfig& cfg) {
  std::map<std::size_t, Eigen::VectorXd> cache;
  Eigen::MatrixXd feats(kSamplesPerDay * (p.d_z + kEnvWidth),
                        static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::size_t di = examples[i].day;
    auto it = cache.find(di);
    if (it == cache.end()) {
      const ModelDay& d = days[di];
      DayTensor dt{encode_means(d.spectra, p.enc, p.d_z).transpose(),
                   normalized_env(d, norm, cfg.env_mask).transpose()};
      it = cache.emplace(di, day_features(dt)).first;
    }
    feats.col(static_cast<Eigen::Index>(i)) = it->second;
  }
  if (examples.empty()) return {};
  return run_heads(p.pred, feats);
}

// --- baseline ---------------------------------------------------------------------

namespace {
float log_feature(float v) { return std::log10(std::max(v, 1e-9f)); }
}  // namespace

FeatureNorm fit_feature_norm(std::span<const ModelDay> days, std::span<const std::size_t> which) {
  FeatureNorm n;
  n.min.fill(std::numeric_limits<double>::infinity());
  n.max.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t di : which) {
    const auto& f = days[di].features;
    for (int r = 0; r < data::kFeatureCount; ++r) {
      for (Eigen::Index s = 0; s < f.cols(); ++s) {
        const double v = log_feature(f(r, s));
        n.min[static_cast<std::size_t>(r)] = std::min(n.min[static_cast<std::size_t>(r)], v);
        n.max[static_cast<std::size_t>(r)] = std::max(n.max[static_cast<std::size_t>(r)], v);
      }
    }
  }
  if (which.empty()) {
    n.min.fill(0.0);
    n.max.fill(1.0);
  }
  return n;
}

Eigen::VectorXd baseline_features(const ModelDay& day, const FeatureNorm& fnorm,
                                  const data::NormStats& norm,
                                  const std::array<bool, kEnvWidth>& mask) {
  Eigen::MatrixXd env = normalized_env(day, norm, mask);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(kSamplesPerDay,
                                                                              kBaselineFeatures);
  for (int s = 0; s < kSamplesPerDay; ++s) {
    for (int r = 0; r < data::kFeatureCount; ++r) {
      const auto k = static_cast<std::size_t>(r);
      const double span = fnorm.max[k] - fnorm.min[k];
      rows(s, r) = span > 0.0 ? (log_feature(day.features(r, s)) - fnorm.min[k]) / span : 0.0;
    }
    rows.row(s).tail(kEnvWidth) = env.col(s).transpose();
  }
  return Eigen::Map<const Eigen::VectorXd>(rows.data(), rows.size());
}

BaselineModel baseline_mlp(TrainContext& ctx, std::span<const Example> labeled,
                           const ModelConfig& cfg, uint64_t seed,
                           const std::function<void(BaselineModel&, int)>& on_metric) {
  cfg.validate();
  if (labeled.empty()) throw Error("baseline_mlp: no labeled days");
  if (ctx.norm == nullptr) throw Error("baseline_mlp: missing normalization statistics");
  Rng rng(seed);
  BaselineModel m;
  std::vector<std::size_t> which;
  for (const Example& e : labeled) which.push_back(e.day);
  m.fnorm = fit_feature_norm(ctx.days, which);
  constexpr int kWidth = kSamplesPerDay * kBaselineFeatures;
  m.params = init_predictor(kWidth, cfg.n_classes, rng);

  std::map<std::size_t, Eigen::VectorXd> cache;
  for (std::size_t di : which) {
    if (!cache.count(di)) {
      cache.emplace(di, baseline_features(ctx.days[di], m.fnorm, *ctx.norm, cfg.env_mask));
    }
  }
  std::vector<Parameter*> main = {&m.params.trunk_w,  &m.params.trunk_b,   &m.params.frames_w,
                                  &m.params.frames_b, &m.params.severity_w, &m.params.severity_b};
  std::vector<Parameter*> disease = {&m.params.type_w, &m.params.type_b};
  ag::Adam adam;
  std::uniform_int_distribution<std::size_t> pick(0, labeled.size() - 1);
  const int b = cfg.batch_joint;
  for (int it = 0; it < cfg.joint_iters; ++it) {
    Eigen::MatrixXd x(kWidth, b);
    std::vector<double> tf, ts;
    std::vector<int> tc;
    for (int i = 0; i < b; ++i) {
      const Example& e = labeled[pick(rng)];
      x.col(i) = cache.at(e.day);
      tf.push_back(e.target.frames);
      ts.push_back(e.target.severity);
      tc.push_back(e.target.type);
    }
    zero_all(main);
    zero_all(disease);
    ag::Tape t;
    HeadVars h = predict(bind(t, m.params), t.constant(Tensor(Shape::mat(b, kWidth), x)));
    Var lf = ag::huber(h.frames, t.constant(target_row(tf)), cfg.huber_delta);
    Var ls = ag::huber(h.severity, t.constant(target_row(ts)), cfg.huber_delta);
    Var lt = ag::softmax_ce(h.type, tc);
    Var total = t.constant(Tensor::zeros(Shape::scalar()));
    if (cfg.head_frames) total = ag::add(total, ag::scale(lf, cfg.w_frames));
    if (cfg.head_type) total = ag::add(total, ag::scale(lt, cfg.w_type));
    if (cfg.head_severity) total = ag::add(total, ag::scale(ls, cfg.w_severity));
    t.backward(total);
    adam.step(main, cfg.lr_main);
    adam.step(disease, cfg.lr_disease);
    ++ctx.iteration;
    if ((it + 1) % cfg.loss_every == 0) {
      ctx.curve.push_back({ctx.iteration, "baseline", total.item(), 0, 0, lf.item(), lt.item(),
                           ls.item()});
    }
    if (on_metric && ctx.iteration % cfg.metric_every == 0) on_metric(m, ctx.iteration);
  }
  return m;
}

std::vector<DayPrediction> predict_baseline(BaselineModel& m, std::span<const ModelDay> days,
                                            std::span<const Example> examples,
                                            const data::NormStats& norm, const ModelConfig& cfg) {
  if (examples.empty()) return {};
  Eigen::MatrixXd feats(kSamplesPerDay * kBaselineFeatures,
                        static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    feats.col(static_cast<Eigen::Index>(i)) =
        baseline_features(days[examples[i].day], m.fnorm, norm, cfg.env_mask);
  }
  return run_heads(m.params, feats);
}

// --- checkpoints ------------------------------------------------------------------

void save_gpn(const std::filesystem::path& path, GpnParams& p) {
  auto all = p.all();
  ag::save_checkpoint(path, all);
}

GpnParams load_gpn(const std::filesystem::path& path) {
  auto loaded = ag::read_checkpoint(path);
  int d_z = 0, k = 0;
  for (const Parameter& q : loaded) {
    if (q.name == "enc.fc.b") d_z = q.value.shape[0] / 2;
    if (q.name == "pred.type.b") k = q.value.shape[0];
  }
  if (d_z < 1 || k < 2) throw IoError(path.string() + ": not a GPN checkpoint");
  GpnParams g;
  shape_gpn(g, d_z);
  g.pred = shape_predictor("pred.", kSamplesPerDay * (d_z + kEnvWidth), k);
  auto all = g.all();
  ag::load_checkpoint(path, all);
  return g;
}

}  // namespace apiarius::gpn
