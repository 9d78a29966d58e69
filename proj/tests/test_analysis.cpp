#include <doctest.h>

#include <cmath>

#include "apiarius/analysis.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::analysis;

namespace {

Eigen::MatrixXd gaussian(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  return x;
}

std::vector<DayEmbedding> embeddings_from(const Eigen::MatrixXd& rows, const std::vector<int>& sev) {
  std::vector<DayEmbedding> out;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    DayEmbedding e;
    e.hive_id = "H01";
    e.date = static_cast<Day>(19000 + i);
    e.z = rows.row(i).transpose();
    e.severity = sev.empty() ? 0 : sev[static_cast<std::size_t>(i)];
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_CASE("latent grid tile count") {
  Rng rng(1);
  gpn::GpnParams p = gpn::init_gpn(gpn::ModelConfig::desk(), rng);
  auto tiles = latent_grid_decode(p.dec, p.d_z, -2.0, 2.0, 8);
  REQUIRE(tiles.size() == 64);
  for (const auto& t : tiles) {
    CHECK(t.rows() == 56);
    CHECK(t.cols() == 56);
  }
}

TEST_CASE("pca orthonormal components and ordered ratios") {
  Eigen::MatrixXd x = gaussian(300, 6, 2);
  x.col(0) *= 4.0;
  x.col(3) *= 2.0;
  PcaModel m = fit_pca(x);
  const Eigen::MatrixXd gram = m.components * m.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index i = 1; i < m.ratios.size(); ++i) CHECK(m.ratios(i) <= m.ratios(i - 1));
  CHECK(m.ratios.sum() == doctest::Approx(1.0));
  // sign rule: largest-magnitude entry of each component is positive
  for (Eigen::Index r = 0; r < m.components.rows(); ++r) {
    Eigen::Index j = 0;
    m.components.row(r).cwiseAbs().maxCoeff(&j);
    CHECK(m.components(r, j) > 0.0);
  }
}

TEST_CASE("pca of points on a line") {
  Eigen::MatrixXd x(50, 3);
  for (int i = 0; i < 50; ++i) x.row(i) << i, 2.0 * i - 1.0, -0.5 * i;
  PcaModel m = fit_pca(x);
  CHECK(std::abs(m.ratios(0) - 1.0) < 1e-10);
}

TEST_CASE("pca of an isotropic Gaussian splits variance evenly") {
  PcaModel m = fit_pca(gaussian(10000, 2, 3));
  CHECK(std::abs(m.ratios(0) - 0.5) < 0.02);
  CHECK(std::abs(m.ratios(1) - 0.5) < 0.02);
}

TEST_CASE("projection of the mean is the origin") {
  Eigen::MatrixXd x = gaussian(40, 4, 4);
  PcaModel m = fit_pca(x);
  Eigen::MatrixXd p = project(m, m.mean.transpose());
  CHECK(p.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("project_and_tag separates classes along PC-1") {
  Eigen::MatrixXd x = gaussian(40, 3, 5) * 0.1;
  std::vector<int> sev(40);
  for (int i = 0; i < 40; ++i) {
    sev[static_cast<std::size_t>(i)] = i < 20 ? 0 : 1;
    if (i >= 20) x(i, 0) += 5.0;
  }
  auto e = embeddings_from(x, sev);
  Projection p = project_and_tag(fit_pca(e), e);
  CHECK(p.rows.size() == 40);
  CHECK(p.healthy_low_gap == doctest::Approx(5.0).epsilon(0.05));
  CHECK(p.healthy_low_within_std < 0.2);
  test::TempDir tmp("proj");
  write_projection(tmp / "p.csv", tmp / "p.svg", p);
  CHECK(std::filesystem::exists(tmp / "p.svg"));
  CHECK(std::filesystem::exists(tmp / "p_centroids.csv"));
}

TEST_CASE("class_mean_spectra of a single sample is that sample's spectrum") {
  gpn::ModelDay d;
  d.hive_id = "H01";
  d.date = 19000;
  d.spectra = Eigen::MatrixXf::Random(gpn::kPixels, kSamplesPerDay).cwiseAbs();
  d.env.setZero(gpn::kEnvWidth, kSamplesPerDay);
  d.features.setZero(data::kFeatureCount, kSamplesPerDay);
  std::vector<gpn::ModelDay> days = {d};
  std::vector<std::string> labels = {"healthy"};
  auto cs = class_mean_spectra(days, labels, 0.0, 0.25);
  REQUIRE(cs.size() == 1);
  CHECK(cs[0].n_samples == 1);
  Eigen::VectorXd expected = as_image(d.spectra.col(0)).rowwise().mean();
  CHECK((cs[0].spectrum - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("pc1 magnitude sweep") {
  // PC-1 values evenly spaced so rank is affine in PC-1
  Eigen::MatrixXd x(30, 2);
  std::vector<double> mags;
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    const double t = (i * 7) % 30;  // a permutation of 0..29
    x.row(i) << t, 0.01 * standard_normal(rng);
    mags.push_back(3.0 * t + 2.0);
  }
  auto e = embeddings_from(x, {});
  PcaModel m = fit_pca(e);
  SweepResult s = pc1_magnitude_sweep(m, e, mags);
  CHECK(std::abs(std::abs(s.r) - 1.0) < 1e-6);
  PcaModel flipped = m;
  flipped.components.row(0) *= -1.0;
  SweepResult f = pc1_magnitude_sweep(flipped, e, mags);
  CHECK(f.r == doctest::Approx(-s.r).epsilon(1e-12));
  CHECK(std::is_sorted(s.pc1.begin(), s.pc1.end()));
}

TEST_CASE("reconstruction gallery") {
  Rng rng(7);
  gpn::GpnParams untrained = gpn::init_gpn(gpn::ModelConfig::desk(), rng);
  Eigen::MatrixXf cols = Eigen::MatrixXf::Random(gpn::kPixels, 8).cwiseAbs();
  Gallery g = reconstruction_gallery(untrained, cols);
  CHECK(g.inputs.size() + g.recons.size() == 16);
  Eigen::MatrixXf twice(gpn::kPixels, 2);
  twice.col(0) = cols.col(3);
  twice.col(1) = cols.col(3);
  Gallery t = reconstruction_gallery(untrained, twice);
  CHECK(t.recons[0] == t.recons[1]);
  test::TempDir tmp("gal");
  write_gallery(tmp / "g.svg", tmp / "g.csv", g);
  CHECK(std::filesystem::file_size(tmp / "g.svg") > 1000);
}

TEST_CASE("training improves held-out reconstructions by at least 30%") {
  synth::SynthConfig sc;
  sc.n_hives = 2;
  sc.n_days = 2;
  test::SynthCv w = test::synth_cv(sc);
  gpn::ModelConfig cfg = gpn::ModelConfig::desk();
  cfg.pretrain_iters = 400;
  Rng rng(8);
  gpn::GpnParams p = gpn::init_gpn(cfg, rng);
  Eigen::MatrixXf held(gpn::kPixels, 8);
  for (int i = 0; i < 8; ++i) held.col(i) = w.cv.days.back().spectra.col(i * 12);
  auto mean_bce = [](const Gallery& g) {
    double s = 0.0;
    for (double b : g.bce) s += b;
    return s / static_cast<double>(g.bce.size());
  };
  const double before = mean_bce(reconstruction_gallery(p, held));
  gpn::TrainContext ctx;
  ctx.days = w.cv.days;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i + 1 < w.cv.days.size(); ++i) pool.push_back(i);
  gpn::Trainer tr(cfg, p, 9);
  tr.pretrain(ctx, pool);
  const double after = mean_bce(reconstruction_gallery(p, held));
  INFO("bce before " << before << " after " << after);
  CHECK(after <= 0.7 * before);
}
