#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "apiarius/datastore.hpp"
#include "apiarius/eval.hpp"
#include "apiarius/synth.hpp"

namespace apiarius::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("apiarius-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// A sample with no audio at slot `slot` of `day`.
inline data::SensorSample sample_at(const std::string& hive, Day day, int slot) {
  data::SensorSample s;
  s.hive_id = hive;
  s.sensor_id = "S-" + hive;
  s.timestamp = day_start(day) + slot * kSlotSeconds;
  s.env = {34.0, 20.0, 55.0, 60.0, 1010.0, 1012.0};
  return s;
}

inline std::vector<data::SensorSample> full_day(const std::string& hive, Day day) {
  std::vector<data::SensorSample> out;
  for (int s = 0; s < kSamplesPerDay; ++s) out.push_back(sample_at(hive, day, s));
  return out;
}

/// Small in-memory synthetic dataset with a fixed population and no growth.
inline synth::SynthConfig steady_config(double frames, int hives = 2, int days = 2) {
  synth::SynthConfig c;
  c.n_hives = hives;
  c.n_days = days;
  c.initial_frames_lo = frames;
  c.initial_frames_hi = frames;
  c.growth_per_day = 0.0;
  c.growth_jitter = 0.0;
  c.disease_fraction = 0.0;
  return c;
}

/// In-memory cross-validation data from a generator run (inline-audio fidelity).
struct SynthCv {
  eval::CvData cv;
  std::vector<std::string> hives;
  synth::SynthOutput raw;
};

inline SynthCv synth_cv(const synth::SynthConfig& cfg) {
  SynthCv out;
  out.raw = synth::generate(cfg);
  data::AssembleResult as = data::assemble_days(out.raw.samples);
  for (const data::HiveDay& d : as.days) {
    Eigen::MatrixXf sp(data::kPixels, kSamplesPerDay);
    for (int s = 0; s < kSamplesPerDay; ++s) {
      sp.col(s) = data::flatten_spectrogram(data::sample_spectrogram(d.samples[static_cast<std::size_t>(s)], {}));
    }
    out.cv.days.push_back(gpn::make_model_day(d, std::move(sp)));
    if (out.hives.empty() || out.hives.back() != d.hive_id) out.hives.push_back(d.hive_id);
  }
  out.cv.labeled = data::match_inspections(out.raw.labels, as.days).matched;
  return out;
}

}  // namespace apiarius::test
