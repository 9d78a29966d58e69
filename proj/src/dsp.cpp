#include "apiarius/dsp.hpp"

#include <bit>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <unsupported/Eigen/FFT>

namespace apiarius::dsp {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

Waveform conform(Eigen::VectorXd samples, int sample_rate) {
  if (sample_rate != kSampleRate) {
    throw Error("expected sample rate " + std::to_string(kSampleRate) + ", got " +
                std::to_string(sample_rate));
  }
  const Eigen::Index n = samples.size();
  samples.conservativeResize(kClipLength);
  if (n < kClipLength) samples.tail(kClipLength - n).setZero();
  return Waveform{std::move(samples), sample_rate};
}

Eigen::VectorXd hann_window(int length) {
  Eigen::VectorXd w(length);
  for (int n = 0; n < length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  }
  return w;
}

std::vector<double> mel_centers(int n_mels, double fmax) {
  const double mel_max = hz_to_mel(fmax);
  std::vector<double> centers(n_mels);
  for (int m = 0; m < n_mels; ++m) centers[m] = mel_to_hz(mel_max * (m + 1) / (n_mels + 1));
  return centers;
}

std::array<std::pair<int, int>, kPooledRows> pooled_groups() {
  std::array<std::pair<int, int>, kPooledRows> groups;
  for (int g = 0; g < kPooledRows; ++g) {
    groups[g] = {g * kMels / kPooledRows, (g + 1) * kMels / kPooledRows};
  }
  return groups;
}

std::vector<double> pooled_row_hz() {
  const auto centers = mel_centers();
  std::vector<double> rows;
  rows.reserve(kPooledRows);
  for (const auto& [lo, hi] : pooled_groups()) {
    double sum = 0.0;
    for (int m = lo; m < hi; ++m) sum += centers[m];
    rows.push_back(sum / (hi - lo));
  }
  return rows;
}

int pooled_row_of(double hz) {
  const auto rows = pooled_row_hz();
  int best = 0;
  for (int r = 1; r < kPooledRows; ++r) {
    if (std::abs(rows[r] - hz) < std::abs(rows[best] - hz)) best = r;
  }
  return best;
}

namespace {

void check_waveform(const Waveform& w) {
  if (w.sample_rate != kSampleRate) {
    throw Error("expected sample rate " + std::to_string(kSampleRate) + ", got " +
                std::to_string(w.sample_rate));
  }
  if (w.samples.size() != kClipLength) {
    throw ShapeError("waveform must hold " + std::to_string(kClipLength) + " samples, got " +
                     std::to_string(w.samples.size()));
  }
}

/// Calls visit(frame_index, spectrum) for every STFT frame.
template <typename Visit>
void for_each_frame(const Waveform& w, Visit&& visit) {
  check_waveform(w);
  static const Eigen::VectorXd window = hann_window(kWindow);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(kNFft, 0.0);
  std::vector<std::complex<double>> spectrum;
  for (int t = 0; t < kFrames; ++t) {
    const Eigen::Index start = static_cast<Eigen::Index>(t) * kHop;
    const Eigen::Index avail = std::min<Eigen::Index>(kWindow, kClipLength - start);
    std::fill(frame.begin(), frame.end(), 0.0);
    for (Eigen::Index n = 0; n < avail; ++n) frame[n] = w.samples[start + n] * window[n];
    fft.fwd(spectrum, frame);
    visit(t, spectrum);
  }
}

}  // namespace

Eigen::MatrixXd stft_power(const Waveform& w) {
  Eigen::MatrixXd power(kNBins, kFrames);
  for_each_frame(w, [&](int t, const std::vector<std::complex<double>>& spec) {
    for (int k = 0; k < kNBins; ++k) power(k, t) = std::norm(spec[k]);
  });
  return power;
}

Eigen::MatrixXd mel_spectrogram(const Waveform& w) {
  static const Eigen::MatrixXd fb = mel_filterbank();
  return fb * stft_power(w);
}

Eigen::MatrixXd spectrogram56(const Waveform& w) {
  return crop_normalize(downsample_pool(mel_spectrogram(w)));
}

FftFeatures fft_features(const Waveform& w) {
  Eigen::VectorXd mean_mag = Eigen::VectorXd::Zero(kNBins);
  for_each_frame(w, [&](int, const std::vector<std::complex<double>>& spec) {
    for (int k = 0; k < kNBins; ++k) mean_mag[k] += std::abs(spec[k]);
  });
  mean_mag /= kFrames;

  FftFeatures features;
  const double width = fft_band_width();
  std::array<int, kFftBands> counts{};
  for (int k = 0; k < kNBins; ++k) {
    const double f = static_cast<double>(k) * kSampleRate / kNFft;
    const int band = static_cast<int>(f / width);
    if (band >= kFftBands) break;
    features.band_mags[band] += mean_mag[k];
    ++counts[band];
  }
  for (int b = 0; b < kFftBands; ++b) features.band_mags[b] /= counts[b];
  features.mean_amp = w.samples.cwiseAbs().mean();
  return features;
}

// --- WAV ----------------------------------------------------------------------

namespace {

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw IoError("unexpected end of file");
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw IoError(path.string() + ": not a RIFF file");
  read_le<uint32_t>(in);
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw IoError(path.string() + ": not a WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const uint32_t size = read_le<uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_le<uint16_t>(in);
      channels = read_le<uint16_t>(in);
      rate = read_le<uint32_t>(in);
      read_le<uint32_t>(in);
      read_le<uint16_t>(in);
      bits = read_le<uint16_t>(in);
      in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw IoError(path.string() + ": data chunk before fmt chunk");
      if (channels != 1) throw IoError(path.string() + ": only mono audio is supported");
      Eigen::VectorXd samples;
      if (format == 1 && bits == 16) {
        samples.resize(size / 2);
        std::vector<int16_t> raw(size / 2);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 2));
        for (std::size_t i = 0; i < raw.size(); ++i) samples[i] = raw[i] / 32768.0;
      } else if (format == 3 && bits == 32) {
        samples.resize(size / 4);
        std::vector<float> raw(size / 4);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
        for (std::size_t i = 0; i < raw.size(); ++i) samples[i] = raw[i];
      } else {
        throw IoError(path.string() + ": unsupported WAV encoding (format " +
                      std::to_string(format) + ", " + std::to_string(bits) + " bits)");
      }
      if (!in) throw IoError(path.string() + ": truncated data chunk");
      return Waveform{std::move(samples), static_cast<int>(rate)};
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw IoError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto n = static_cast<uint32_t>(w.samples.size());
  out.write("RIFF", 4);
  write_le<uint32_t>(out, 36 + n * 2);
  out.write("WAVEfmt ", 8);
  write_le<uint32_t>(out, 16);
  write_le<uint16_t>(out, 1);
  write_le<uint16_t>(out, 1);
  write_le<uint32_t>(out, static_cast<uint32_t>(w.sample_rate));
  write_le<uint32_t>(out, static_cast<uint32_t>(w.sample_rate) * 2);
  write_le<uint16_t>(out, 2);
  write_le<uint16_t>(out, 16);
  out.write("data", 4);
  write_le<uint32_t>(out, n * 2);
  std::vector<int16_t> pcm(n);
  for (uint32_t i = 0; i < n; ++i) {
    const double s = std::clamp(w.samples[i], -1.0, 1.0);
    pcm[i] = static_cast<int16_t>(std::lround(std::clamp(s * 32768.0, -32768.0, 32767.0)));
  }
  out.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(n * 2));
  if (!out) throw IoError("write failed for " + path.string());
}

Waveform read_raw_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % 4 != 0) throw IoError(path.string() + ": size is not a multiple of 4 bytes");
  in.seekg(0);
  std::vector<float> raw(bytes / 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  Eigen::VectorXd samples(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) samples[static_cast<Eigen::Index>(i)] = raw[i];
  return Waveform{std::move(samples), kSampleRate};
}

void write_matrix_blob(std::ostream& out, const Eigen::MatrixXd& m) {
  write_le<uint32_t>(out, static_cast<uint32_t>(m.rows()));
  write_le<uint32_t>(out, static_cast<uint32_t>(m.cols()));
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = m.cast<float>();
  out.write(reinterpret_cast<const char*>(f.data()),
            static_cast<std::streamsize>(f.size() * sizeof(float)));
}

Eigen::MatrixXd read_matrix_blob(std::istream& in) {
  const auto rows = read_le<uint32_t>(in);
  const auto cols = read_le<uint32_t>(in);
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
  in.read(reinterpret_cast<char*>(f.data()),
          static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!in) throw IoError("truncated matrix blob");
  return f.cast<double>();
}

}  // namespace apiarius::dsp
