#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include "apiarius/common.hpp"

namespace apiarius::dsp {

inline constexpr int kSampleRate = 16384;
inline constexpr int kClipSeconds = 56;
inline constexpr int kClipLength = kClipSeconds * kSampleRate;
inline constexpr int kNFft = 2048;
inline constexpr int kNBins = kNFft / 2 + 1;
inline constexpr int kWindow = 1092;
inline constexpr int kHop = 546;
inline constexpr int kFrames = kClipLength / kHop;  // 1680, tail frame zero-padded
inline constexpr int kMels = 128;
inline constexpr double kFMax = 8192.0;
inline constexpr int kPooledRows = 61;
inline constexpr int kTimeBins = 56;
inline constexpr int kTimePool = kFrames / kTimeBins;  // 30
inline constexpr int kCropRows = 56;
inline constexpr double kDbRange = 80.0;
inline constexpr double kPowerFloor = 1e-10;
inline constexpr int kFftBands = 15;
inline constexpr double kFftBandMaxHz = 2667.0;

static_assert(kFrames == 1680 && kTimePool * kTimeBins == kFrames);

/// Mono PCM audio, amplitudes in [-1, 1].
struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = kSampleRate;
};

/// Pads with zeros or truncates to exactly 56 s.
Waveform conform(Eigen::VectorXd samples, int sample_rate = kSampleRate);

/// HTK mel scale.
inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Periodic Hann window.
Eigen::VectorXd hann_window(int length);

/// Triangular, area-normalized mel filters; rows are bands, columns FFT bins.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mel_filterbank(
    int n_mels = kMels, int n_fft = kNFft, double sample_rate = kSampleRate,
    double fmax = kFMax) {
  if (fmax > sample_rate / 2.0) throw Error("mel_filterbank: fmax exceeds Nyquist");
  if (n_mels < 1 || n_fft < 2) throw Error("mel_filterbank: bad geometry");
  const int n_bins = n_fft / 2 + 1;
  const double mel_max = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mel_max * i / (n_mels + 1));

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> fb =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double area_norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      const double w = std::max(0.0, std::min(rise, fall));
      fb(m, k) = static_cast<Scalar>(w * area_norm);
    }
  }
  return fb;
}

/// Center frequency (Hz) of each mel band.
std::vector<double> mel_centers(int n_mels = kMels, double fmax = kFMax);

/// Half-open mel-band ranges of the 61 frequency pooling groups.
std::array<std::pair<int, int>, kPooledRows> pooled_groups();

/// Representative frequency of each pooled row (mean of its mel centers).
std::vector<double> pooled_row_hz();

/// Index of the pooled row whose frequency is closest to `hz`.
int pooled_row_of(double hz);

/// One-sided power |X|^2 of the Hann STFT: kNBins x kFrames.
Eigen::MatrixXd stft_power(const Waveform& w);

/// 128 x 1680 mel power spectrogram.
Eigen::MatrixXd mel_spectrogram(const Waveform& w);

/// Mean-pools 128 x 1680 down to 61 x 56.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> downsample_pool(
    const Eigen::MatrixBase<Derived>& mel) {
  using Scalar = typename Derived::Scalar;
  if (mel.rows() != kMels || mel.cols() != kFrames) {
    throw ShapeError("downsample_pool: expected 128x1680, got " + std::to_string(mel.rows()) +
                     "x" + std::to_string(mel.cols()));
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pooled(kPooledRows, kTimeBins);
  const auto groups = pooled_groups();
  for (int g = 0; g < kPooledRows; ++g) {
    const auto [lo, hi] = groups[g];
    for (int t = 0; t < kTimeBins; ++t) {
      pooled(g, t) = mel.block(lo, t * kTimePool, hi - lo, kTimePool).mean();
    }
  }
  return pooled;
}

/// Keeps the lowest 56 pooled rows, converts to dB, clips to an 80 dB range below the
/// maximum and rescales to [0, 1]. A constant input maps to all ones.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> crop_normalize(
    const Eigen::MatrixBase<Derived>& pooled) {
  using Scalar = typename Derived::Scalar;
  if (pooled.rows() != kPooledRows || pooled.cols() != kTimeBins) {
    throw ShapeError("crop_normalize: expected 61x56, got " + std::to_string(pooled.rows()) +
                     "x" + std::to_string(pooled.cols()));
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> db =
      pooled.topRows(kCropRows).unaryExpr([](Scalar p) {
        return static_cast<Scalar>(10.0 * std::log10(static_cast<double>(p) + kPowerFloor));
      });
  const Scalar top = db.maxCoeff();
  db = db.cwiseMax(static_cast<Scalar>(top - kDbRange));
  const Scalar bottom = db.minCoeff();
  if (!(top > bottom)) {
    return Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Ones(kCropRows, kTimeBins);
  }
  return ((db.array() - bottom) / (top - bottom)).matrix();
}

/// Full chain: waveform -> 56 x 56 model input.
Eigen::MatrixXd spectrogram56(const Waveform& w);

/// Handcrafted baseline features.
struct FftFeatures {
  std::array<double, kFftBands> band_mags{};
  double mean_amp = 0.0;
};

FftFeatures fft_features(const Waveform& w);

/// Frequency edges of the baseline bands.
inline double fft_band_width() { return kFftBandMaxHz / kFftBands; }

// --- file formats -------------------------------------------------------------

/// Reads 16-bit PCM or 32-bit float mono WAV. Throws on other encodings.
Waveform read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono WAV (samples clamped to [-1, 1]).
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Raw float32 little-endian samples at 16384 Hz.
Waveform read_raw_f32(const std::filesystem::path& path);

/// Matrix blob: uint32 rows, uint32 cols, then float32 row-major, all little-endian.
void write_matrix_blob(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_blob(std::istream& in);

}  // namespace apiarius::dsp
