#include "apiarius/pipeline.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace apiarius::pipeline {

namespace fs = std::filesystem;

PreprocessReport preprocess(const fs::path& data_root, const fs::path& cache_root) {
  data::Dataset ds = data::read_dataset(data_root);
  PreprocessReport rep;
  std::vector<data::SensorSample> ok;
  ok.reserve(ds.samples.size());
  for (data::SensorSample& s : ds.samples) {
    if (s.audio.kind == data::AudioKind::kWav || s.audio.kind == data::AudioKind::kRawF32) {
      if (data::detect_failed_audio(data::load_waveform(s.audio, data_root))) {
        ++rep.failed_samples;
        continue;
      }
    }
    ok.push_back(std::move(s));
  }
  data::AssembleResult as = data::assemble_days(std::move(ok));
  rep.skipped = as.skipped;
  for (const data::HiveDay& d : as.days) {
    Eigen::MatrixXf spectra(data::kPixels, kSamplesPerDay);
    for (int s = 0; s < kSamplesPerDay; ++s) {
      spectra.col(s) = data::flatten_spectrogram(
          data::sample_spectrogram(d.samples[static_cast<std::size_t>(s)], data_root));
    }
    data::write_day_cache(data::cache_path(cache_root, d.hive_id, d.date), spectra);
    ++rep.days_cached;
  }
  return rep;
}

LoadedData load(const fs::path& data_root, const fs::path& cache_root) {
  data::Dataset ds = data::read_dataset(data_root);
  data::AssembleResult as = data::assemble_days(std::move(ds.samples));
  LoadedData out;
  std::set<std::string> hives;
  for (data::HiveDay& d : as.days) {
    const fs::path p = data::cache_path(cache_root, d.hive_id, d.date);
    if (!fs::exists(p)) continue;  // dropped by preprocessing
    hives.insert(d.hive_id);
    out.cv.days.push_back(gpn::make_model_day(d, data::read_day_cache(p)));
    out.days.push_back(std::move(d));
  }
  if (out.days.empty()) {
    throw IoError("no cached days under " + cache_root.string() + "; run preprocess first");
  }
  data::MatchResult m = data::match_inspections(ds.labels, out.days);
  out.cv.labeled = std::move(m.matched);
  out.discarded = std::move(m.discarded);
  out.hives.assign(hives.begin(), hives.end());
  if (fs::exists(data_root / "truth.csv")) out.truth = synth::read_truth(data_root / "truth.csv");
  return out;
}

std::vector<std::pair<int, int>> day_classes(const LoadedData& d) {
  std::vector<std::pair<int, int>> out(d.cv.days.size(), {-1, -1});
  if (!d.truth.empty()) {
    std::map<std::pair<std::string, Day>, const synth::TruthRow*> by;
    for (const synth::TruthRow& t : d.truth) by[{t.hive_id, t.date}] = &t;
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto it = by.find({d.cv.days[i].hive_id, d.cv.days[i].date});
      if (it == by.end()) continue;
      out[i] = {static_cast<int>(synth::severity_level(it->second->severity)),
                it->second->disease_type};
    }
    return out;
  }
  for (const data::LabeledDay& l : d.cv.labeled) {
    out[l.day] = {static_cast<int>(l.label.severity), l.label.disease_type};
  }
  return out;
}

}  // namespace apiarius::pipeline
