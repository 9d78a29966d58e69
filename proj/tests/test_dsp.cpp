#include <doctest.h>

#include <cmath>
#include <numbers>

#include "apiarius/dsp.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::dsp;

namespace {

Waveform tone(double hz, double amp = 0.1) {
  Waveform w;
  w.samples.resize(kClipLength);
  for (int i = 0; i < kClipLength; ++i) {
    w.samples(i) = amp * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate);
  }
  return w;
}

Eigen::Index argmax_row(const Eigen::MatrixXd& m) {
  Eigen::Index r = 0;
  m.rowwise().sum().maxCoeff(&r);
  return r;
}

}  // namespace

TEST_CASE("mel scale reference points") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)).epsilon(1e-14));
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5).epsilon(1e-12));
}

TEST_CASE("mel filterbank geometry") {
  auto fb = mel_filterbank<double>(kMels, kNFft, kSampleRate, kFMax);
  CHECK(fb.rows() == 128);
  CHECK(fb.cols() == 1025);
  CHECK(fb.minCoeff() >= 0.0);
  for (int m = 0; m < kMels; ++m) CHECK(fb.row(m).sum() > 0.0);
  CHECK_THROWS_AS(mel_filterbank<double>(kMels, kNFft, kSampleRate, 9000.0), Error);
}

TEST_CASE("shape chain 128x1680 to 61x56 to 56x56") {
  Waveform w = tone(440.0);
  Eigen::MatrixXd mel = mel_spectrogram(w);
  CHECK(mel.rows() == 128);
  CHECK(mel.cols() == 1680);
  CHECK(kTimePool == 30);
  Eigen::MatrixXd pooled = downsample_pool(mel);
  CHECK(pooled.rows() == 61);
  CHECK(pooled.cols() == 56);
  Eigen::MatrixXd s = crop_normalize(pooled);
  CHECK(s.rows() == 56);
  CHECK(s.cols() == 56);
  CHECK(s.minCoeff() >= 0.0);
  CHECK(s.maxCoeff() <= 1.0);
  CHECK(spectrogram56(w) == s);
}

TEST_CASE("pooling groups partition the 128 mel bands") {
  auto g = pooled_groups();
  CHECK(g.front().first == 0);
  CHECK(g.back().second == kMels);
  for (int i = 1; i < kPooledRows; ++i) CHECK(g[i].first == g[i - 1].second);
  for (const auto& [lo, hi] : g) {
    CHECK(hi - lo >= 2);
    CHECK(hi - lo <= 3);
  }
}

TEST_CASE("zero waveform gives a zero mel spectrogram") {
  Waveform w{Eigen::VectorXd::Zero(kClipLength), kSampleRate};
  CHECK(mel_spectrogram(w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("wrong sample rate is rejected") {
  Waveform w{Eigen::VectorXd::Zero(kClipLength), 8000};
  CHECK_THROWS_AS(mel_spectrogram(w), Error);
}

TEST_CASE("pure tone lands in the mel band whose filter peaks nearest to it") {
  const double hz = 1000.0;
  auto fb = mel_filterbank<double>(kMels, kNFft, kSampleRate, kFMax);
  const int bin = static_cast<int>(std::lround(hz * kNFft / kSampleRate));
  Eigen::Index expected = 0;
  fb.col(bin).maxCoeff(&expected);
  CHECK(argmax_row(mel_spectrogram(tone(hz))) == expected);
}

TEST_CASE("pure tone localizes in the 56x56 input") {
  for (double hz : {300.0, 645.0, 1200.0}) {
    Eigen::MatrixXd s = spectrogram56(tone(hz));
    CHECK(std::abs(argmax_row(s) - pooled_row_of(hz)) <= 1);
  }
}

TEST_CASE("downsample_pool of a constant is constant") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(kMels, kFrames, 3.5);
  Eigen::MatrixXd p = downsample_pool(c);
  CHECK((p.array() - 3.5).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(downsample_pool(Eigen::MatrixXd::Zero(100, kFrames)), ShapeError);
}

TEST_CASE("crop_normalize degenerate and range rules") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(kPooledRows, kTimeBins, 2.0);
  CHECK(crop_normalize(c).isOnes());

  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(kPooledRows, kTimeBins, 1e-12);
  r(0, 0) = 1.0;
  Eigen::MatrixXd s = crop_normalize(r);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  // everything more than 80 dB below the peak is clipped to zero
  CHECK(s(5, 5) == doctest::Approx(0.0));
}

TEST_CASE("fft_features") {
  Waveform zero{Eigen::VectorXd::Zero(kClipLength), kSampleRate};
  FftFeatures z = fft_features(zero);
  for (double b : z.band_mags) CHECK(b == 0.0);
  CHECK(z.mean_amp == 0.0);

  FftFeatures f = fft_features(tone(100.0));
  for (int b = 1; b < kFftBands; ++b) CHECK(f.band_mags[0] > f.band_mags[b]);
  CHECK(f.mean_amp == doctest::Approx(0.1 * 2.0 / std::numbers::pi).epsilon(1e-3));
}

TEST_CASE("conform pads and truncates to 56 s") {
  CHECK(conform(Eigen::VectorXd::Ones(100)).samples.size() == kClipLength);
  CHECK(conform(Eigen::VectorXd::Ones(kClipLength + 7)).samples.size() == kClipLength);
}

TEST_CASE("wav round trip within 16-bit quantization") {
  test::TempDir tmp("wav");
  Waveform w = tone(523.0, 0.4);
  write_wav(tmp / "t.wav", w);
  Waveform back = read_wav(tmp / "t.wav");
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK((back.samples - w.samples).cwiseAbs().maxCoeff() < 1.0 / 32767.0);
}

TEST_CASE("matrix blob round trip") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(5, 7);
  std::stringstream ss;
  write_matrix_blob(ss, m);
  Eigen::MatrixXd back = read_matrix_blob(ss);
  CHECK((back - m).cwiseAbs().maxCoeff() < 1e-6);
}
