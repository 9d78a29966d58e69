#include "apiarius/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "apiarius/csv.hpp"
#include "apiarius/svg.hpp"

namespace apiarius::analysis {

Eigen::MatrixXd as_image(const Eigen::VectorXf& column) {
  if (column.size() != gpn::kPixels) throw ShapeError("as_image: expected 3136 entries");
  return Eigen::Map<const Eigen::Matrix<float, gpn::kSide, gpn::kSide, Eigen::RowMajor>>(
             column.data())
      .cast<double>();
}

std::vector<DayEmbedding> embed_days(gpn::GpnParams& p, std::span<const gpn::ModelDay> days) {
  std::vector<DayEmbedding> out;
  for (const gpn::ModelDay& d : days) {
    Eigen::MatrixXd mu = gpn::encode_means(d.spectra, p.enc, p.d_z);  // d_z x 96
    out.push_back({d.hive_id, d.date, Eigen::Map<const Eigen::VectorXd>(mu.data(), mu.size()), -1,
                   -1});
  }
  return out;
}

std::vector<Eigen::MatrixXd> latent_grid_decode(gpn::DecoderParams& dec, int d_z, double lo,
                                                double hi, int steps) {
  if (steps < 1) throw Error("latent_grid_decode: steps must be >= 1");
  if (d_z < 1) throw Error("latent_grid_decode: d_z must be >= 1");
  auto at = [&](int i) { return steps == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (steps - 1); };
  std::vector<Eigen::MatrixXd> tiles;
  const int rows = d_z >= 2 ? steps : 1;
  for (int r = rows - 1; r >= 0; --r) {
    for (int c = 0; c < steps; ++c) {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(d_z);
      z(0) = at(c);
      if (d_z >= 2) z(1) = at(r);
      tiles.push_back(gpn::decode(z, dec));
    }
  }
  return tiles;
}

PcaModel fit_pca(const Eigen::MatrixXd& X) {
  if (X.rows() < 2) throw Error("fit_pca: need at least two embeddings");
  PcaModel m;
  m.mean = X.colwise().mean().transpose();
  Eigen::MatrixXd c = X.rowwise() - m.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
  const Eigen::VectorXd s2 = svd.singularValues().array().square();
  const double total = s2.sum();
  m.components = svd.matrixV().transpose();
  m.ratios = total > 0.0 ? Eigen::VectorXd(s2 / total) : Eigen::VectorXd::Zero(s2.size());
  for (Eigen::Index i = 0; i < m.components.rows(); ++i) {
    Eigen::Index j = 0;
    m.components.row(i).cwiseAbs().maxCoeff(&j);
    if (m.components(i, j) < 0.0) m.components.row(i) *= -1.0;
  }
  return m;
}

PcaModel fit_pca(std::span<const DayEmbedding> e) {
  if (e.empty()) throw Error("fit_pca: no embeddings");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(e.size()), e.front().z.size());
  for (std::size_t i = 0; i < e.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = e[i].z.transpose();
  return fit_pca(X);
}

Eigen::MatrixXd project(const PcaModel& pca, const Eigen::MatrixXd& X) {
  return (X.rowwise() - pca.mean.transpose()) * pca.components.transpose();
}

namespace {
Eigen::MatrixXd stack(std::span<const DayEmbedding> e) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(e.size()), e.empty() ? 0 : e.front().z.size());
  for (std::size_t i = 0; i < e.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = e[i].z.transpose();
  return X;
}
}  // namespace

Projection project_and_tag(const PcaModel& pca, std::span<const DayEmbedding> e) {
  Projection out;
  const Eigen::MatrixXd P = project(pca, stack(e));
  std::map<int, std::vector<Eigen::Index>> by;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.rows.push_back({e[i].hive_id, e[i].date, P(r, 0), P.cols() > 1 ? P(r, 1) : 0.0,
                        e[i].severity, e[i].type});
    if (e[i].severity >= 0) by[e[i].severity].push_back(r);
  }
  for (const auto& [sev, idx] : by) {
    ClassCentroid c;
    c.severity = sev;
    c.n = static_cast<int>(idx.size());
    for (Eigen::Index r : idx) {
      c.pc1 += P(r, 0) / c.n;
      if (P.cols() > 1) c.pc2 += P(r, 1) / c.n;
    }
    double ss = 0.0;
    for (Eigen::Index r : idx) ss += (P(r, 0) - c.pc1) * (P(r, 0) - c.pc1);
    c.pc1_std = std::sqrt(ss / c.n);
    out.centroids.push_back(c);
  }
  auto find = [&](int sev) -> const ClassCentroid* {
    for (const auto& c : out.centroids) {
      if (c.severity == sev) return &c;
    }
    return nullptr;
  };
  const ClassCentroid* h = find(0);
  const ClassCentroid* l = find(1);
  if (h && l) {
    out.healthy_low_gap = std::abs(h->pc1 - l->pc1);
    const double pooled = (h->n * h->pc1_std * h->pc1_std + l->n * l->pc1_std * l->pc1_std) /
                          (h->n + l->n);
    out.healthy_low_within_std = std::sqrt(pooled);
  }
  return out;
}

void write_projection(const std::filesystem::path& csv_path, const std::filesystem::path& svg_path,
                      const Projection& p) {
  csv::Table t{{"hive", "date", "pc1", "pc2", "severity", "type"}, {}};
  for (const ScatterRow& r : p.rows) {
    t.rows.push_back({r.hive_id, format_day(r.date), csv::format_number(r.pc1),
                      csv::format_number(r.pc2), std::to_string(r.severity),
                      std::to_string(r.type)});
  }
  csv::write(csv_path, t);
  csv::Table c{{"severity", "n", "pc1", "pc2", "pc1_std"}, {}};
  for (const ClassCentroid& k : p.centroids) {
    c.rows.push_back({std::to_string(k.severity), std::to_string(k.n), csv::format_number(k.pc1),
                      csv::format_number(k.pc2), csv::format_number(k.pc1_std)});
  }
  std::filesystem::path cp = csv_path;
  cp.replace_filename(csv_path.stem().string() + "_centroids.csv");
  csv::write(cp, c);

  static const char* kNames[] = {"none", "low", "moderate", "severe"};
  static const char* kColors[] = {"#2c7bb6", "#fdae61", "#f46d43", "#a50026"};
  svg::Plot plot;
  plot.title = "Day embeddings on PC-1 / PC-2";
  plot.xlabel = "PC-1";
  plot.ylabel = "PC-2";
  std::map<int, svg::Series> by;
  for (const ScatterRow& r : p.rows) {
    svg::Series& s = by[r.severity];
    const bool known = r.severity >= 0 && r.severity <= 3;
    s.label = known ? std::string("severity ") + kNames[r.severity] : "unlabeled";
    s.color = known ? kColors[r.severity] : "#999999";
    s.x.push_back(r.pc1);
    s.y.push_back(r.pc2);
  }
  for (auto& [k, s] : by) plot.series.push_back(std::move(s));
  svg::write(svg_path, svg::render(plot));
}

std::vector<ClassSpectrum> class_mean_spectra(std::span<const gpn::ModelDay> days,
                                              std::span<const std::string> labels,
                                              double start_hour, double hours) {
  if (labels.size() != days.size()) throw ShapeError("class_mean_spectra: one label per day");
  if (!(hours > 0.0)) throw Error("class_mean_spectra: window must be positive");
  std::map<std::string, ClassSpectrum> by;
  std::map<std::string, int> day_count;
  for (std::size_t i = 0; i < days.size(); ++i) {
    ClassSpectrum& c = by[labels[i]];
    if (c.spectrum.size() == 0) {
      c.label = labels[i];
      c.spectrum = Eigen::VectorXd::Zero(gpn::kSide);
      c.profile = Eigen::VectorXd::Zero(kSamplesPerDay);
    }
    ++day_count[labels[i]];
    for (int s = 0; s < kSamplesPerDay; ++s) {
      c.profile(s) += days[i].features(data::kFeatureCount - 1, s);
      const double h = s * 0.25;
      const double off = std::fmod(h - start_hour + 48.0, 24.0);
      if (off >= hours) continue;
      const Eigen::MatrixXd img = as_image(days[i].spectra.col(s));
      c.spectrum += img.rowwise().mean();
      ++c.n_samples;
    }
  }
  std::vector<ClassSpectrum> out;
  for (auto& [k, c] : by) {
    if (c.n_samples > 0) c.spectrum /= c.n_samples;
    c.profile /= day_count[k];
    const double lo = c.profile.minCoeff();
    c.amp_ratio = lo > 0.0 ? c.profile.maxCoeff() / lo : 0.0;
    out.push_back(std::move(c));
  }
  return out;
}

double integrated_magnitude(const gpn::ModelDay& day) {
  return day.spectra.cast<double>().sum();
}

SweepResult pc1_magnitude_sweep(const PcaModel& pca, std::span<const DayEmbedding> e,
                                std::span<const double> magnitudes) {
  if (magnitudes.size() != e.size()) throw ShapeError("pc1_magnitude_sweep: one magnitude per day");
  if (e.size() < 2) throw Error("pc1_magnitude_sweep: need at least two days");
  const Eigen::MatrixXd P = project(pca, stack(e));
  SweepResult s;
  s.order.resize(e.size());
  std::iota(s.order.begin(), s.order.end(), std::size_t{0});
  std::stable_sort(s.order.begin(), s.order.end(), [&](std::size_t a, std::size_t b) {
    return P(static_cast<Eigen::Index>(a), 0) < P(static_cast<Eigen::Index>(b), 0);
  });
  const auto n = static_cast<Eigen::Index>(e.size());
  Eigen::VectorXd rank(n), mag(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = s.order[static_cast<std::size_t>(i)];
    rank(i) = static_cast<double>(i);
    mag(i) = magnitudes[k];
    s.pc1.push_back(P(static_cast<Eigen::Index>(k), 0));
    s.magnitude.push_back(magnitudes[k]);
  }
  const Eigen::VectorXd a = rank.array() - rank.mean();
  const Eigen::VectorXd b = mag.array() - mag.mean();
  const double den = a.norm() * b.norm();
  s.r = den > 0.0 ? a.dot(b) / den : 0.0;
  return s;
}

Gallery reconstruction_gallery(gpn::GpnParams& p, const Eigen::MatrixXf& spectra) {
  Gallery g;
  const Eigen::MatrixXd mu = gpn::encode_means(spectra, p.enc, p.d_z);
  for (Eigen::Index i = 0; i < spectra.cols(); ++i) {
    Eigen::MatrixXd x = as_image(spectra.col(i));
    Eigen::MatrixXd r = gpn::decode(mu.col(i), p.dec);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(p.d_z);
    g.bce.push_back(gpn::elbo_loss(x, r, zero, zero).recon);
    g.inputs.push_back(std::move(x));
    g.recons.push_back(std::move(r));
  }
  return g;
}

void write_gallery(const std::filesystem::path& svg_path, const std::filesystem::path& csv_path,
                   const Gallery& g) {
  std::vector<Eigen::MatrixXd> tiles = g.inputs;
  tiles.insert(tiles.end(), g.recons.begin(), g.recons.end());
  std::vector<std::string> captions;
  for (std::size_t i = 0; i < g.inputs.size(); ++i) captions.push_back("input " + std::to_string(i));
  for (std::size_t i = 0; i < g.recons.size(); ++i) {
    captions.push_back("bce " + csv::format_number(std::round(g.bce[i] * 1e4) / 1e4));
  }
  svg::write(svg_path, svg::tile_sheet(tiles, std::max<int>(1, static_cast<int>(g.inputs.size())),
                                       "Inputs (top) and reconstructions (bottom)", captions));
  csv::Table t{{"pair", "bce"}, {}};
  for (std::size_t i = 0; i < g.bce.size(); ++i) {
    t.rows.push_back({std::to_string(i), csv::format_number(g.bce[i])});
  }
  csv::write(csv_path, t);
}

}  // namespace apiarius::analysis
