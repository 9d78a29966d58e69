#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "apiarius/gpn.hpp"

namespace apiarius::analysis {

/// A day's posterior means, sample-major: entry s*d_z + j is latent j of sample s.
struct DayEmbedding {
  std::string hive_id;
  Day date = 0;
  Eigen::VectorXd z;
  int severity = -1;  // 0..3 when known
  int type = -1;
};

std::vector<DayEmbedding> embed_days(gpn::GpnParams& p, std::span<const gpn::ModelDay> days);

/// Decodes an even grid over the first two latent dims (others held at 0). Tiles are
/// ordered row by row with dim 1 descending, dim 0 ascending.
std::vector<Eigen::MatrixXd> latent_grid_decode(gpn::DecoderParams& dec, int d_z, double lo = -2.0,
                                                double hi = 2.0, int steps = 8);

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // one orthonormal component per row
  Eigen::VectorXd ratios;      // explained-variance ratios, nonincreasing
};

/// PCA of the rows of X via SVD of the centered data. Each component's largest-magnitude
/// entry is positive.
PcaModel fit_pca(const Eigen::MatrixXd& X);
PcaModel fit_pca(std::span<const DayEmbedding> e);
Eigen::MatrixXd project(const PcaModel& pca, const Eigen::MatrixXd& X);

struct ScatterRow {
  std::string hive_id;
  Day date = 0;
  double pc1 = 0.0, pc2 = 0.0;
  int severity = -1, type = -1;
};

struct ClassCentroid {
  int severity = 0;
  int n = 0;
  double pc1 = 0.0, pc2 = 0.0;
  double pc1_std = 0.0;
};

struct Projection {
  std::vector<ScatterRow> rows;
  std::vector<ClassCentroid> centroids;  // by severity level
  double healthy_low_gap = 0.0;          // |centroid difference| along PC-1
  double healthy_low_within_std = 0.0;   // pooled within-class std along PC-1
};

Projection project_and_tag(const PcaModel& pca, std::span<const DayEmbedding> e);
void write_projection(const std::filesystem::path& csv_path, const std::filesystem::path& svg_path,
                      const Projection& p);

struct ClassSpectrum {
  std::string label;
  int n_samples = 0;
  Eigen::VectorXd spectrum;   // mean over the window's samples and time bins, 56 rows
  Eigen::VectorXd profile;    // mean amplitude per slot over the day, 96 entries
  double amp_ratio = 0.0;     // max / min of the profile
};

/// Mean pooled-band spectra per class over samples whose slot lies in
/// [start_hour, start_hour + hours) (wrapping past midnight).
std::vector<ClassSpectrum> class_mean_spectra(std::span<const gpn::ModelDay> days,
                                              std::span<const std::string> labels,
                                              double start_hour, double hours);

/// Sum of the 56x56 model-input pixels over a day's 96 samples.
double integrated_magnitude(const gpn::ModelDay& day);

struct SweepResult {
  double r = 0.0;  // Pearson correlation between PC-1 rank and magnitude
  std::vector<std::size_t> order;  // embedding indices sorted by PC-1
  std::vector<double> pc1;
  std::vector<double> magnitude;   // in PC-1 order
};

SweepResult pc1_magnitude_sweep(const PcaModel& pca, std::span<const DayEmbedding> e,
                                std::span<const double> magnitudes);

struct Gallery {
  std::vector<Eigen::MatrixXd> inputs, recons;
  std::vector<double> bce;
};

/// Posterior-mean reconstructions of spectra columns (3136 x N).
Gallery reconstruction_gallery(gpn::GpnParams& p, const Eigen::MatrixXf& spectra);
void write_gallery(const std::filesystem::path& svg_path, const std::filesystem::path& csv_path,
                   const Gallery& g);

/// Image orientation used in figures: frequency rows, 56x56.
Eigen::MatrixXd as_image(const Eigen::VectorXf& column);

}  // namespace apiarius::analysis
