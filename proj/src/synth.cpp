#include "apiarius/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <unsupported/Eigen/FFT>

#include "apiarius/csv.hpp"

namespace apiarius::synth {

namespace fs = std::filesystem;
using std::numbers::pi;

void SynthConfig::validate() const {
  if (n_hives < 1 || n_days < 1) throw Error("synth: need at least one hive and one day");
  if (label_cadence < 1) throw Error("synth: label cadence must be positive");
  if (gain_lo < 0.5 || gain_hi > 2.0 || gain_lo > gain_hi) {
    throw Error("synth: sensor gain range must lie within [0.5, 2.0]");
  }
  for (double hz : band_hz) {
    if (!(hz > 0.0 && hz < dsp::kFftBandMaxHz)) {
      throw Error("synth: base band centers must lie below 2667 Hz");
    }
  }
  for (double w : band_width_hz) {
    if (!(w > 0.0)) throw Error("synth: band widths must be positive");
  }
  if (disease_width_hz <= 0.0) throw Error("synth: disease band width must be positive");
  if (initial_frames_lo < 0.0 || initial_frames_hi < initial_frames_lo) {
    throw Error("synth: bad initial frames range");
  }
  if (severity_step_days < 1) throw Error("synth: severity_step_days must be positive");
  if (thermo_tau <= 0.0 || temp_setpoint_scale <= 0.0) throw Error("synth: bad thermal constants");
}

// --- band model ----------------------------------------------------------------------

namespace {

constexpr double kMinNoiseHz = 20.0;

double gauss_density(double f, double c, double w) {
  const double z = (f - c) / w;
  return std::exp(-0.5 * z * z) / (w * std::sqrt(2.0 * pi));
}

}  // namespace

double BandSpectrumModel::psd(double f) const {
  double s = noise_white * noise_white +
             noise_ref * noise_ref * std::pow(noise_ref_hz / std::max(f, kMinNoiseHz), noise_slope);
  for (const Band& b : bands) {
    s += (1.0 - tone_fraction) * b.magnitude * b.magnitude * gauss_density(f, b.center_hz, b.width_hz);
  }
  return s;
}

double BandSpectrumModel::power() const {
  double p = 0.0;
  for (const Band& b : bands) p += b.magnitude * b.magnitude;
  const double nyq = dsp::kSampleRate / 2.0;
  // closed-form integral of the coloured floor over [0, nyquist], flat below kMinNoiseHz
  const double r2 = noise_ref * noise_ref;
  const double lowband = r2 * std::pow(noise_ref_hz / kMinNoiseHz, noise_slope) * kMinNoiseHz;
  double tail;
  if (std::abs(noise_slope - 1.0) < 1e-12) {
    tail = r2 * noise_ref_hz * std::log(nyq / kMinNoiseHz);
  } else {
    tail = r2 * std::pow(noise_ref_hz, noise_slope) *
           (std::pow(nyq, 1.0 - noise_slope) - std::pow(kMinNoiseHz, 1.0 - noise_slope)) /
           (1.0 - noise_slope);
  }
  return p + lowband + tail + noise_white * noise_white * nyq;
}

BandSpectrumModel band_spectrum(const ColonyState& s, double hour, const SynthConfig& cfg) {
  double alpha = cfg.circadian_alpha;
  double scale = 1.0;
  const bool diseased = s.disease_type != kHealthy && s.severity > 0.0;
  if (s.severity >= 2.0 / 3.0 - 1e-9) {
    scale = 1.0 - cfg.severe_damping * s.severity;
    alpha *= 1.0 - cfg.circadian_damping * s.severity;
  } else if (diseased) {
    scale = 1.0 + cfg.disease_boost;
  }
  const double m = cfg.band_amplitude * s.sensor_gain * s.frames_bees *
                   (1.0 + alpha * std::cos(2.0 * pi * (hour - cfg.peak_hour) / 24.0)) * scale;

  BandSpectrumModel model;
  model.tone_fraction = cfg.tone_fraction;
  model.noise_ref = cfg.noise_ref;
  model.noise_ref_hz = cfg.noise_ref_hz;
  model.noise_slope = cfg.noise_slope;
  model.noise_white = cfg.noise_white;
  for (std::size_t b = 0; b < cfg.band_hz.size(); ++b) {
    model.bands.push_back({cfg.band_hz[b], cfg.band_width_hz[b], std::max(0.0, m * cfg.band_rel[b])});
  }
  if (diseased) {
    const double center = s.disease_type == kDiseaseA ? cfg.disease_a_hz : cfg.disease_b_hz;
    model.bands.push_back({center, cfg.disease_width_hz * (1.0 + 2.0 * s.severity),
                           std::max(0.0, m * cfg.disease_rel * (1.0 + s.severity))});
  }
  return model;
}

// --- colony dynamics --------------------------------------------------------------------

std::vector<HivePlan> plan_hives(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<HivePlan> plans(cfg.n_hives);
  for (int i = 0; i < cfg.n_hives; ++i) {
    Rng rng(split_seed(cfg.seed, 1000 + static_cast<uint64_t>(i)));
    HivePlan& p = plans[i];
    char id[16];
    std::snprintf(id, sizeof id, "H%02d", i + 1);
    p.hive_id = id;
    p.initial.frames_bees = uniform(rng, cfg.initial_frames_lo, cfg.initial_frames_hi);
    p.initial.frames_brood = cfg.brood_ratio * p.initial.frames_bees;
    p.initial.sensor_gain = std::exp(uniform(rng, std::log(cfg.gain_lo), std::log(cfg.gain_hi)));
    p.temp_offset = cfg.hive_temp_offset * standard_normal(rng);
  }
  Rng master(split_seed(cfg.seed, 7));
  std::vector<int> order(cfg.n_hives);
  for (int i = 0; i < cfg.n_hives; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), master);
  const int n_sick = static_cast<int>(std::lround(cfg.disease_fraction * cfg.n_hives));
  for (int j = 0; j < n_sick; ++j) {
    HivePlan& p = plans[order[j]];
    p.disease_type = (j % 2 == 0) ? kDiseaseA : kDiseaseB;
    p.onset_day = std::uniform_int_distribution<int>(0, std::max(0, cfg.n_days / 2))(master);
  }
  return plans;
}

ColonyState evolve_colony(const ColonyState& s, const HivePlan& plan, int day,
                          const SynthConfig& cfg, Rng& rng) {
  ColonyState next = s;
  if (plan.onset_day >= 0 && day >= plan.onset_day) {
    next.disease_type = plan.disease_type;
    const int level = std::min(3, 1 + (day - plan.onset_day) / cfg.severity_step_days);
    next.severity = std::max(s.severity, level / 3.0);
  }
  double growth = cfg.growth_per_day * (1.0 - 1.5 * next.severity);
  if (cfg.growth_jitter > 0.0) growth += cfg.growth_jitter * standard_normal(rng);
  next.frames_bees = std::max(0.0, s.frames_bees + growth);
  next.frames_brood = cfg.brood_ratio * next.frames_bees;
  return next;
}

// --- frequency-domain realization -------------------------------------------------------

namespace {

/// Window response and pooling geometry shared by every direct-path evaluation.
struct SpectralKernel {
  static constexpr double kFine = 2.0;    // Hz, grid on which PSDs are sampled
  static constexpr double kReach = 600.0; // Hz, kernel half-width
  static constexpr double kSub = 0.25;    // Hz, kernel table resolution

  std::vector<double> table;  // |W(d)|^2 at d = i * kSub, i >= 0
  int n_fine = 0;
  int taps = 0;               // kernel half-width in fine steps
  double tail_ratio = 1.0;    // energy of the truncated last frame relative to a full one
  Eigen::MatrixXd pool;       // 61 x 1025: mean of the grouped mel filters
  Eigen::MatrixXd pool_sq;    // squared weights, for degrees of freedom

  SpectralKernel() {
    const Eigen::VectorXd w = dsp::hann_window(dsp::kWindow);
    const int n_table = static_cast<int>(kReach / kSub) + 1;
    table.resize(n_table);
    for (int i = 0; i < n_table; ++i) {
      const double d = i * kSub;
      std::complex<double> acc = 0.0;
      for (int n = 0; n < dsp::kWindow; ++n) {
        acc += w[n] * std::polar(1.0, -2.0 * pi * d * n / dsp::kSampleRate);
      }
      table[i] = std::norm(acc);
    }
    n_fine = static_cast<int>(dsp::kFMax / kFine) + 1;
    taps = static_cast<int>(kReach / kFine);
    const int avail = dsp::kClipLength - (dsp::kFrames - 1) * dsp::kHop;
    tail_ratio = w.head(std::min(avail, dsp::kWindow)).squaredNorm() / w.squaredNorm();

    const Eigen::MatrixXd fb = dsp::mel_filterbank();
    pool = Eigen::MatrixXd::Zero(dsp::kPooledRows, dsp::kNBins);
    const auto groups = dsp::pooled_groups();
    for (int g = 0; g < dsp::kPooledRows; ++g) {
      const auto [lo, hi] = groups[g];
      for (int m = lo; m < hi; ++m) pool.row(g) += fb.row(m);
      pool.row(g) /= (hi - lo);
    }
    pool_sq = pool.cwiseAbs2();
  }

  double at(double d) const {
    const double x = std::abs(d) / kSub;
    const auto i = static_cast<std::size_t>(x);
    if (i + 1 >= table.size()) return 0.0;
    const double t = x - static_cast<double>(i);
    return table[i] * (1.0 - t) + table[i + 1] * t;
  }

  static const SpectralKernel& get() {
    static const SpectralKernel k;
    return k;
  }
};

/// Expected STFT bin powers split into the stochastic part and the pure-tone part.
struct BinPower {
  Eigen::VectorXd noise;
  Eigen::VectorXd tones;
};

BinPower expected_bins(const BandSpectrumModel& model) {
  const SpectralKernel& k = SpectralKernel::get();
  Eigen::VectorXd psd(k.n_fine);
  for (int j = 0; j < k.n_fine; ++j) psd[j] = model.psd(j * SpectralKernel::kFine);
  std::vector<double> taps(2 * k.taps + 1);
  for (int m = -k.taps; m <= k.taps; ++m) taps[m + k.taps] = k.at(m * SpectralKernel::kFine);

  BinPower out{Eigen::VectorXd::Zero(dsp::kNBins), Eigen::VectorXd::Zero(dsp::kNBins)};
  const double bin_hz = static_cast<double>(dsp::kSampleRate) / dsp::kNFft;
  const int per_bin = static_cast<int>(std::lround(bin_hz / SpectralKernel::kFine));
  for (int b = 0; b < dsp::kNBins; ++b) {
    const int centre = b * per_bin;
    const int lo = std::max(0, centre - k.taps), hi = std::min(k.n_fine - 1, centre + k.taps);
    double acc = 0.0;
    for (int j = lo; j <= hi; ++j) acc += psd[j] * taps[j - centre + k.taps];
    out.noise[b] = 0.5 * acc * SpectralKernel::kFine;
  }
  for (const Band& band : model.bands) {
    const double amp2 = 2.0 * model.tone_fraction * band.magnitude * band.magnitude;
    if (amp2 <= 0.0) continue;
    for (int b = 0; b < dsp::kNBins; ++b) {
      out.tones[b] += 0.25 * amp2 * k.at(b * bin_hz - band.center_hz);
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd synth_pooled_power(const ColonyState& s, double hour, const SynthConfig& cfg,
                                   Rng& rng) {
  const SpectralKernel& k = SpectralKernel::get();
  const BinPower bins = expected_bins(band_spectrum(s, hour, cfg));
  const Eigen::VectorXd noise = k.pool * bins.noise;
  const Eigen::VectorXd tones = k.pool * bins.tones;
  const Eigen::VectorXd spread = k.pool_sq * bins.noise.cwiseAbs2();

  Eigen::MatrixXd pooled(dsp::kPooledRows, dsp::kTimeBins);
  for (int r = 0; r < dsp::kPooledRows; ++r) {
    // each pooled cell averages kTimePool frames of approximately chi-square bin powers
    const double dof = spread[r] > 0.0
                           ? std::max(1.0, dsp::kTimePool * noise[r] * noise[r] / spread[r])
                           : 1e6;
    std::gamma_distribution<double> texture(dof, 1.0 / dof);
    for (int t = 0; t < dsp::kTimeBins; ++t) pooled(r, t) = tones[r] + noise[r] * texture(rng);
  }
  pooled.col(dsp::kTimeBins - 1) *= (dsp::kTimePool - 1 + k.tail_ratio) / dsp::kTimePool;
  return pooled;
}

dsp::FftFeatures synth_features(const ColonyState& s, double hour, const SynthConfig& cfg,
                                Rng& /*rng*/) {
  const BandSpectrumModel model = band_spectrum(s, hour, cfg);
  const BinPower bins = expected_bins(model);
  dsp::FftFeatures f;
  std::array<int, dsp::kFftBands> counts{};
  const double width = dsp::fft_band_width();
  for (int b = 0; b < dsp::kNBins; ++b) {
    const double hz = static_cast<double>(b) * dsp::kSampleRate / dsp::kNFft;
    const int band = static_cast<int>(hz / width);
    if (band >= dsp::kFftBands) break;
    // mean |X| of a tone in complex Gaussian noise, exact in both limits
    f.band_mags[band] += std::sqrt(bins.tones[b] + 0.25 * pi * bins.noise[b]);
    ++counts[band];
  }
  for (int b = 0; b < dsp::kFftBands; ++b) f.band_mags[b] /= counts[b];
  f.mean_amp = std::sqrt(2.0 / pi * model.power());
  return f;
}

Eigen::MatrixXd synth_spectrogram_direct(const ColonyState& s, double hour,
                                         const SynthConfig& cfg, Rng& rng) {
  return dsp::crop_normalize(synth_pooled_power(s, hour, cfg, rng));
}

dsp::Waveform synth_waveform(const ColonyState& s, double hour, const SynthConfig& cfg, Rng& rng) {
  const BandSpectrumModel model = band_spectrum(s, hour, cfg);
  const int n = dsp::kClipLength;
  const double fs = dsp::kSampleRate;
  std::vector<std::complex<double>> spectrum(n / 2 + 1);
  for (int j = 1; j < n / 2; ++j) {
    const double sd = std::sqrt(0.25 * n * fs * model.psd(j * fs / n));
    spectrum[j] = {sd * standard_normal(rng), sd * standard_normal(rng)};
  }
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> samples;
  fft.inv(samples, spectrum, n);

  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(samples.data(), n);
  for (const Band& b : model.bands) {
    const double amp = std::sqrt(2.0 * model.tone_fraction) * b.magnitude;
    if (amp <= 0.0) continue;
    const double phase = uniform(rng, 0.0, 2.0 * pi);
    const double step = 2.0 * pi * b.center_hz / fs;
    for (int i = 0; i < n; ++i) x[i] += amp * std::cos(step * i + phase);
  }
  return dsp::Waveform{x.cwiseMax(-1.0).cwiseMin(1.0), dsp::kSampleRate};
}

// --- environment ----------------------------------------------------------------------------

data::EnvReadings synth_env(const ColonyState& s, double hour, const Weather& weather,
                            double hive_temp_offset, const SynthConfig& cfg, Rng& rng) {
  const double diurnal = std::cos(2.0 * pi * (hour - cfg.temp_ext_peak_hour) / 24.0);
  const double t_ext = cfg.temp_ext_mean + weather.temp_offset + cfg.temp_ext_swing * diurnal;
  const double coupling = std::exp(-s.frames_bees / cfg.thermo_tau);
  const double setpoint = cfg.temp_setpoint + hive_temp_offset +
                          cfg.temp_setpoint_gain * (1.0 - std::exp(-s.frames_bees / cfg.temp_setpoint_scale));
  const double h_ext = std::clamp(65.0 + weather.humid_offset - 15.0 * diurnal, 5.0, 100.0);
  const double h_coupling = std::exp(-s.frames_bees / 0.5);
  const double p = weather.pressure + 0.5 * std::cos(2.0 * pi * hour / 12.0);

  data::EnvReadings env;
  env[data::kTempIn] = setpoint + (t_ext - setpoint) * coupling + cfg.temp_noise * standard_normal(rng);
  env[data::kTempExt] = t_ext + 0.3 * standard_normal(rng);
  env[data::kHumidIn] =
      std::clamp(60.0 + (h_ext - 60.0) * h_coupling + standard_normal(rng), 0.0, 100.0);
  env[data::kHumidExt] = std::clamp(h_ext + 1.5 * standard_normal(rng), 0.0, 100.0);
  env[data::kPressIn] = p + 0.1 * standard_normal(rng);
  env[data::kPressExt] = p + 0.1 * standard_normal(rng);
  return env;
}

// --- datasets ---------------------------------------------------------------------------------

data::Severity severity_level(double severity) {
  const int level = static_cast<int>(std::lround(severity * 3.0));
  return static_cast<data::Severity>(std::clamp(level, 0, 3));
}

data::InspectionLabel make_label(const std::string& hive_id, Day date, const ColonyState& s) {
  data::InspectionLabel l;
  l.hive_id = hive_id;
  l.date = date;
  l.frames_bees = static_cast<int>(std::clamp<long>(std::lround(s.frames_bees), 0, 25));
  l.frames_brood = static_cast<int>(std::clamp<long>(std::lround(s.frames_brood), 0, 15));
  l.severity = s.disease_type == kHealthy ? data::Severity::kNone : severity_level(s.severity);
  l.disease_type = l.severity == data::Severity::kNone ? 0 : s.disease_type;
  return l;
}

SynthOutput generate(const SynthConfig& cfg, const fs::path& audio_root) {
  cfg.validate();
  if (cfg.fidelity == Fidelity::kWaveform && audio_root.empty()) {
    throw Error("synth: waveform fidelity needs an output directory for audio files");
  }
  const std::vector<HivePlan> plans = plan_hives(cfg);

  std::vector<Weather> weather(cfg.n_days);
  {
    Rng rng(split_seed(cfg.seed, 3));
    double pressure = 1013.0;
    for (Weather& w : weather) {
      w.temp_offset = 1.5 * standard_normal(rng);
      w.humid_offset = 5.0 * standard_normal(rng);
      pressure = std::clamp(pressure + 2.0 * standard_normal(rng), 990.0, 1035.0);
      w.pressure = pressure;
    }
  }

  SynthOutput out;
  out.samples.reserve(static_cast<std::size_t>(cfg.n_hives) * cfg.n_days * kSamplesPerDay);
  for (std::size_t h = 0; h < plans.size(); ++h) {
    const HivePlan& plan = plans[h];
    const uint64_t hive_seed = split_seed(cfg.seed, 5000 + h);
    Rng dynamics(split_seed(hive_seed, 0xD1));
    ColonyState state = plan.initial;
    for (int d = 0; d < cfg.n_days; ++d) {
      if (d > 0) {
        state = evolve_colony(state, plan, d, cfg, dynamics);
      } else if (plan.onset_day == 0) {
        state.disease_type = plan.disease_type;
        state.severity = 1.0 / 3.0;
      }
      const Day date = cfg.start_date + d;
      out.truth.push_back({plan.hive_id, date, state.frames_bees, state.disease_type,
                           state.severity, state.sensor_gain});
      if (d % cfg.label_cadence == 0) out.labels.push_back(make_label(plan.hive_id, date, state));

      for (int slot = 0; slot < kSamplesPerDay; ++slot) {
        Rng rng(split_seed(hive_seed, 1 + static_cast<uint64_t>(d) * kSamplesPerDay + slot));
        const double hour = slot * (static_cast<double>(kSlotSeconds) / 3600.0);
        data::SensorSample s;
        s.hive_id = plan.hive_id;
        s.sensor_id = "S" + plan.hive_id.substr(1);
        s.timestamp = day_start(date) + slot * kSlotSeconds;
        s.env = synth_env(state, hour, weather[d], plan.temp_offset, cfg, rng);
        if (cfg.fidelity == Fidelity::kSpectrogram) {
          s.audio.kind = data::AudioKind::kInline;
          s.audio.pooled = synth_pooled_power(state, hour, cfg, rng).cast<float>();
          s.audio.features = data::to_feature_vector(synth_features(state, hour, cfg, rng));
        } else {
          const dsp::Waveform w = synth_waveform(state, hour, cfg, rng);
          char name[64];
          std::snprintf(name, sizeof name, "%02d%02d.wav", slot / 4, (slot % 4) * 15);
          const fs::path rel = fs::path("audio") / plan.hive_id / format_day(date) / name;
          dsp::write_wav(audio_root / rel, w);
          // features describe the stored (quantized) audio
          const dsp::Waveform stored = dsp::read_wav(audio_root / rel);
          s.audio.kind = data::AudioKind::kWav;
          s.audio.path = rel.generic_string();
          s.audio.features = data::to_feature_vector(dsp::fft_features(stored));
        }
        s.audio.has_features = true;
        out.samples.push_back(std::move(s));
      }
    }
  }
  return out;
}

void write_truth(const fs::path& path, const std::vector<TruthRow>& truth) {
  csv::Table t;
  t.header = {"hive_id", "date", "frames_real", "disease_type", "severity", "sensor_gain"};
  for (const TruthRow& r : truth) {
    t.rows.push_back({r.hive_id, format_day(r.date), csv::format_number(r.frames_real),
                      std::to_string(r.disease_type), csv::format_number(r.severity),
                      csv::format_number(r.sensor_gain)});
  }
  csv::write(path, t);
}

std::vector<TruthRow> read_truth(const fs::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t hive = t.column("hive_id"), date = t.column("date"),
                    frames = t.column("frames_real"), type = t.column("disease_type"),
                    sev = t.column("severity"), gain = t.column("sensor_gain");
  std::vector<TruthRow> rows;
  for (const auto& row : t.rows) {
    rows.push_back({row[hive], parse_day(row[date]), csv::parse_number(row[frames]),
                    std::stoi(row[type]), csv::parse_number(row[sev]), csv::parse_number(row[gain])});
  }
  return rows;
}

SynthOutput generate_dataset(const SynthConfig& cfg, const fs::path& root) {
  SynthOutput out = generate(cfg, root);
  data::write_dataset(out.samples, out.labels, root);
  write_truth(root / "truth.csv", out.truth);
  return out;
}

}  // namespace apiarius::synth
