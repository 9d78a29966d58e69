#include "apiarius/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "apiarius/csv.hpp"

namespace apiarius::data {

namespace fs = std::filesystem;

FeatureVector to_feature_vector(const dsp::FftFeatures& f) {
  FeatureVector v{};
  for (int b = 0; b < dsp::kFftBands; ++b) v[b] = static_cast<float>(f.band_mags[b]);
  v[dsp::kFftBands] = static_cast<float>(f.mean_amp);
  return v;
}

bool Audio::operator==(const Audio& o) const {
  if (kind != o.kind || path != o.path || has_features != o.has_features) return false;
  if (std::memcmp(features.data(), o.features.data(), sizeof(float) * features.size()) != 0) {
    return false;
  }
  if (pooled.rows() != o.pooled.rows() || pooled.cols() != o.pooled.cols()) return false;
  return pooled.size() == 0 ||
         std::memcmp(pooled.data(), o.pooled.data(), sizeof(float) * pooled.size()) == 0;
}

int64_t snap_to_grid(int64_t timestamp) {
  const int64_t half = kSlotSeconds / 2;
  const int64_t shifted = timestamp + half;
  int64_t q = shifted / kSlotSeconds;
  if (shifted % kSlotSeconds != 0 && shifted < 0) --q;
  return q * kSlotSeconds;
}

// --- day assembly -------------------------------------------------------------------

AssembleResult assemble_days(std::vector<SensorSample> samples) {
  std::map<std::pair<std::string, Day>, std::vector<SensorSample>> groups;
  for (SensorSample& s : samples) {
    s.timestamp = snap_to_grid(s.timestamp);
    const Day d = day_of(s.timestamp);
    groups[{s.hive_id, d}].push_back(std::move(s));
  }
  AssembleResult result;
  for (auto& [key, group] : groups) {
    std::sort(group.begin(), group.end(),
              [](const SensorSample& a, const SensorSample& b) { return a.timestamp < b.timestamp; });
    const int n = static_cast<int>(group.size());
    bool duplicate = false;
    for (int i = 1; i < n; ++i) duplicate |= group[i].timestamp == group[i - 1].timestamp;
    if (duplicate) {
      result.skipped.push_back({key.first, key.second, n, "duplicate slot"});
    } else if (n != kSamplesPerDay) {
      result.skipped.push_back(
          {key.first, key.second, n, "incomplete (" + std::to_string(n) + "/96 samples)"});
    } else {
      result.days.push_back(HiveDay{key.first, key.second, std::move(group)});
    }
  }
  return result;
}

// --- labels -----------------------------------------------------------------------------

const char* severity_name(Severity s) {
  switch (s) {
    case Severity::kNone: return "none";
    case Severity::kLow: return "low";
    case Severity::kModerate: return "moderate";
    case Severity::kSevere: return "severe";
  }
  throw Error("invalid severity");
}

Severity parse_severity(const std::string& text) {
  if (text == "none") return Severity::kNone;
  if (text == "low") return Severity::kLow;
  if (text == "moderate") return Severity::kModerate;
  if (text == "severe") return Severity::kSevere;
  throw Error("unknown severity '" + text + "'");
}

void check_label(const InspectionLabel& l) {
  const std::string who = l.hive_id + " " + format_day(l.date);
  if (l.frames_bees < 0 || l.frames_bees > 25) {
    throw Error("label " + who + ": frames_bees " + std::to_string(l.frames_bees) +
                " outside [0, 25]");
  }
  if (l.frames_brood < 0 || l.frames_brood > 15) {
    throw Error("label " + who + ": frames_brood " + std::to_string(l.frames_brood) +
                " outside [0, 15]");
  }
  if (l.disease_type < 0) throw Error("label " + who + ": negative disease type");
  if ((l.severity == Severity::kNone) != (l.disease_type == 0)) {
    throw Error("label " + who + ": severity must be none exactly when disease type is 0");
  }
}

MatchResult match_inspections(std::span<const InspectionLabel> labels,
                              std::span<const HiveDay> days) {
  std::map<std::string, std::vector<std::size_t>> by_hive;
  for (std::size_t i = 0; i < days.size(); ++i) by_hive[days[i].hive_id].push_back(i);

  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(labels[a].hive_id, labels[a].date) < std::tie(labels[b].hive_id, labels[b].date);
  });

  std::vector<bool> used(days.size(), false);
  MatchResult result;
  for (std::size_t li : order) {
    const InspectionLabel& label = labels[li];
    std::optional<std::size_t> best;
    int best_gap = 0;
    auto it = by_hive.find(label.hive_id);
    if (it != by_hive.end()) {
      for (std::size_t di : it->second) {
        if (used[di]) continue;
        const int gap = std::abs(days[di].date - label.date);
        if (!best || gap < best_gap || (gap == best_gap && days[di].date < days[*best].date)) {
          best = di;
          best_gap = gap;
        }
      }
    }
    if (!best) {
      result.discarded.push_back({label, -1, "no complete day for hive"});
    } else if (best_gap > kMaxGapDays) {
      result.discarded.push_back(
          {label, best_gap, "nearest complete day is " + std::to_string(best_gap) + " days away"});
    } else {
      used[*best] = true;
      result.matched.push_back({*best, label, best_gap});
    }
  }
  return result;
}

// --- normalization --------------------------------------------------------------------

NormStats fit_normalization(std::span<const HiveDay> train_days,
                            std::span<const InspectionLabel> /*train_labels*/) {
  NormStats stats;
  stats.min.fill(INFINITY);
  stats.max.fill(-INFINITY);
  for (const HiveDay& d : train_days) {
    for (const SensorSample& s : d.samples) {
      for (int c = 0; c < kEnvChannels; ++c) {
        stats.min[c] = std::min(stats.min[c], s.env[c]);
        stats.max[c] = std::max(stats.max[c], s.env[c]);
      }
    }
  }
  for (int c = 0; c < kEnvChannels; ++c) {
    if (!(stats.max[c] > stats.min[c])) {
      throw Error(std::string("fit_normalization: channel ") + kEnvNames[c] +
                  " is constant (or empty) in the training data");
    }
  }
  return stats;
}

// --- validation -------------------------------------------------------------------------

ValidationReport validate_ranges(std::span<const SensorSample> samples,
                                 const ValidationConfig& cfg) {
  ValidationReport report;
  report.n_samples = samples.size();
  const std::array<std::pair<double, double>, kEnvChannels> windows = {{
      {cfg.temp_lo, cfg.temp_hi},
      {cfg.temp_lo, cfg.temp_hi},
      {cfg.humid_lo, cfg.humid_hi},
      {cfg.humid_lo, cfg.humid_hi},
      {cfg.press_lo, cfg.press_hi},
      {cfg.press_lo, cfg.press_hi},
  }};
  const std::array<double, kEnvChannels> steps = {cfg.temp_step,  cfg.temp_step,
                                                  cfg.humid_step, cfg.humid_step,
                                                  cfg.press_step, cfg.press_step};

  std::map<std::string, std::vector<const SensorSample*>> by_hive;
  for (const SensorSample& s : samples) {
    by_hive[s.hive_id].push_back(&s);
    for (int c = 0; c < kEnvChannels; ++c) {
      const double v = s.env[c];
      if (!std::isfinite(v)) {
        report.flags.push_back({s.hive_id, s.timestamp, kEnvNames[c], "non-finite", v});
      } else if (v < windows[c].first || v > windows[c].second) {
        report.flags.push_back({s.hive_id, s.timestamp, kEnvNames[c], "range", v});
      }
    }
  }
  for (auto& [hive, seq] : by_hive) {
    std::sort(seq.begin(), seq.end(), [](const SensorSample* a, const SensorSample* b) {
      return a->timestamp < b->timestamp;
    });
    for (std::size_t i = 1; i < seq.size(); ++i) {
      if (seq[i]->timestamp - seq[i - 1]->timestamp > 4 * kSlotSeconds) continue;
      for (int c = 0; c < kEnvChannels; ++c) {
        const double delta = seq[i]->env[c] - seq[i - 1]->env[c];
        if (std::abs(delta) > steps[c]) {
          report.flags.push_back({hive, seq[i]->timestamp, kEnvNames[c], "smoothness", delta});
        }
      }
    }
  }
  return report;
}

Eigen::MatrixXd feature_table(std::span<const HiveDay> days) {
  Eigen::MatrixXd table(static_cast<Eigen::Index>(days.size()) * kSamplesPerDay, kCorrFeatures);
  Eigen::Index row = 0;
  for (const HiveDay& d : days) {
    for (const SensorSample& s : d.samples) {
      for (int c = 0; c < kEnvChannels; ++c) table(row, c) = s.env[c];
      table(row, 6) = s.audio.has_features ? s.audio.features[dsp::kFftBands] : std::nan("");
      const double hour = slot_of(s.timestamp) * 0.25;
      table(row, 7) = std::sin(2.0 * std::numbers::pi * hour / 24.0);
      ++row;
    }
  }
  return table;
}

CorrelationMatrix correlation_of(const Eigen::MatrixXd& table) {
  if (table.rows() < 2) throw Error("correlation_matrix: need at least 2 samples");
  const Eigen::MatrixXd centered = table.rowwise() - table.colwise().mean();
  const Eigen::VectorXd ss = centered.colwise().squaredNorm();
  CorrelationMatrix out;
  for (int i = 0; i < kCorrFeatures; ++i) {
    for (int j = i; j < kCorrFeatures; ++j) {
      const bool ok = std::isfinite(ss[i]) && std::isfinite(ss[j]) && ss[i] > 0.0 && ss[j] > 0.0;
      double r = std::nan("");
      if (ok) {
        r = (i == j) ? 1.0
                     : std::clamp(centered.col(i).dot(centered.col(j)) / std::sqrt(ss[i] * ss[j]),
                                  -1.0, 1.0);
      }
      out.r(i, j) = out.r(j, i) = r;
      out.defined(i, j) = out.defined(j, i) = ok;
    }
  }
  return out;
}

CorrelationMatrix correlation_matrix(std::span<const HiveDay> days) {
  return correlation_of(feature_table(days));
}

std::vector<OlsResult> ols_cross_predict(const Eigen::MatrixXd& table,
                                         std::span<const std::string> names) {
  const Eigen::Index n = table.rows(), p = table.cols();
  if (static_cast<Eigen::Index>(names.size()) != p) throw Error("ols_cross_predict: name count");
  if (n < p + 1) {
    throw Error("ols_cross_predict: need at least " + std::to_string(p + 1) + " samples, got " +
                std::to_string(n));
  }
  const Eigen::MatrixXd centered = table.rowwise() - table.colwise().mean();
  std::vector<OlsResult> results;
  for (Eigen::Index j = 0; j < p; ++j) {
    OlsResult r{names[j], std::nullopt, "ok"};
    const Eigen::VectorXd y = centered.col(j);
    const double sst = y.squaredNorm();
    if (!std::isfinite(sst) || sst <= 0.0) {
      r.status = "constant target";
      results.push_back(r);
      continue;
    }
    Eigen::MatrixXd x(n, p - 1);
    for (Eigen::Index c = 0, k = 0; c < p; ++c) {
      if (c != j) x.col(k++) = centered.col(c);
    }
    if (!x.allFinite()) {
      r.status = "non-finite predictor";
      results.push_back(r);
      continue;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < p - 1) r.status = "rank-deficient";
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += 1e-8;
    const Eigen::VectorXd beta = gram.ldlt().solve(x.transpose() * y);
    const double sse = (y - x * beta).squaredNorm();
    r.r2 = std::clamp(1.0 - sse / sst, 0.0, 1.0);
    results.push_back(r);
  }
  return results;
}

std::vector<OlsResult> ols_cross_predict(std::span<const HiveDay> days) {
  std::vector<std::string> names(kCorrNames.begin(), kCorrNames.end());
  return ols_cross_predict(feature_table(days), names);
}

CircadianResult circadian_peak_hour(std::span<const HiveDay> days) {
  if (days.empty()) throw Error("circadian_peak_hour: no complete days");
  CircadianResult out;
  for (const HiveDay& d : days) {
    for (const SensorSample& s : d.samples) {
      if (!s.audio.has_features) {
        throw Error("circadian_peak_hour: sample without audio features in " + d.hive_id + " " +
                    format_day(d.date));
      }
      out.profile[slot_of(s.timestamp)] += s.audio.features[dsp::kFftBands];
    }
  }
  for (double& v : out.profile) v /= static_cast<double>(days.size());
  const auto [lo, hi] = std::minmax_element(out.profile.begin(), out.profile.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) {
    out.structured = false;
    out.slot = 0;
  } else {
    out.slot = static_cast<int>(hi - out.profile.begin());
  }
  out.hour = out.slot * (static_cast<double>(kSlotSeconds) / 3600.0);
  return out;
}

bool detect_failed_audio(const dsp::Waveform& w) {
  const Eigen::Index n = w.samples.size();
  if (n < dsp::kClipLength) return true;
  if ((w.samples.array() == 0.0).all()) return true;
  const Eigen::Index clipped = (w.samples.array().abs() >= 0.999).count();
  return clipped > n / 20;
}

// --- records ------------------------------------------------------------------------------

namespace {

constexpr char kRecordMagic[4] = {'A', 'P', 'R', 'C'};
constexpr uint8_t kRecordVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError(path.string() + ": truncated record");
  return v;
}

void put_fixed(std::ostream& out, const std::string& s, std::size_t width, const char* what) {
  if (s.size() >= width) {
    throw Error(std::string(what) + " '" + s + "' longer than " + std::to_string(width - 1) +
                " bytes");
  }
  std::string buf(width, '\0');
  std::memcpy(buf.data(), s.data(), s.size());
  out.write(buf.data(), static_cast<std::streamsize>(width));
}

std::string get_fixed(std::istream& in, std::size_t width, const fs::path& path) {
  std::string buf(width, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(width));
  if (!in) throw IoError(path.string() + ": truncated record");
  return std::string(buf.c_str());
}

void check_id(const std::string& id, const char* what) {
  if (id.empty()) throw Error(std::string(what) + " must not be empty");
  for (char c : id) {
    if (c == '/' || c == '\\' || c == ',' || c == '\0' || c == '\n') {
      throw Error(std::string(what) + " '" + id + "' contains a forbidden character");
    }
  }
}

std::string hhmm(int64_t timestamp) {
  const int minutes = slot_of(timestamp) * static_cast<int>(kSlotSeconds / 60);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d%02d", minutes / 60, minutes % 60);
  return buf;
}

}  // namespace

void write_record(const fs::path& path, const SensorSample& s) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kRecordMagic, 4);
  put<uint8_t>(out, kRecordVersion);
  put<uint8_t>(out, static_cast<uint8_t>(s.audio.kind));
  put<uint8_t>(out, s.audio.has_features ? 1 : 0);
  put<uint8_t>(out, 0);
  put_fixed(out, s.hive_id, kIdBytes, "hive_id");
  put_fixed(out, s.sensor_id, kIdBytes, "sensor_id");
  put<int64_t>(out, s.timestamp);
  for (double v : s.env) put<double>(out, v);
  put_fixed(out, s.audio.path, kPathBytes, "audio path");
  put<uint32_t>(out, static_cast<uint32_t>(s.audio.pooled.rows()));
  put<uint32_t>(out, static_cast<uint32_t>(s.audio.pooled.cols()));
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = s.audio.pooled;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(rm.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(s.audio.features.data()),
            static_cast<std::streamsize>(s.audio.features.size() * sizeof(float)));
  if (!out) throw IoError("write failed for " + path.string());
}

SensorSample read_record(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kRecordMagic, 4) != 0) {
    throw IoError(path.string() + ": not a sample record");
  }
  const auto version = get<uint8_t>(in, path);
  if (version != kRecordVersion) {
    throw IoError(path.string() + ": unsupported record version " + std::to_string(version));
  }
  SensorSample s;
  const auto kind = get<uint8_t>(in, path);
  if (kind > static_cast<uint8_t>(AudioKind::kInline)) {
    throw IoError(path.string() + ": unknown audio kind " + std::to_string(kind));
  }
  s.audio.kind = static_cast<AudioKind>(kind);
  s.audio.has_features = get<uint8_t>(in, path) != 0;
  get<uint8_t>(in, path);
  s.hive_id = get_fixed(in, kIdBytes, path);
  s.sensor_id = get_fixed(in, kIdBytes, path);
  s.timestamp = get<int64_t>(in, path);
  for (double& v : s.env) v = get<double>(in, path);
  s.audio.path = get_fixed(in, kPathBytes, path);
  const auto rows = get<uint32_t>(in, path);
  const auto cols = get<uint32_t>(in, path);
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(float)));
  s.audio.pooled = rm;
  in.read(reinterpret_cast<char*>(s.audio.features.data()),
          static_cast<std::streamsize>(s.audio.features.size() * sizeof(float)));
  if (!in) throw IoError(path.string() + ": truncated record");
  return s;
}

void write_labels(const fs::path& path, std::span<const InspectionLabel> labels) {
  csv::Table t;
  t.header = {"hive_id", "date", "frames_bees", "frames_brood", "disease_type", "severity"};
  for (const InspectionLabel& l : labels) {
    t.rows.push_back({l.hive_id, format_day(l.date), std::to_string(l.frames_bees),
                      std::to_string(l.frames_brood), std::to_string(l.disease_type),
                      severity_name(l.severity)});
  }
  csv::write(path, t);
}

std::vector<InspectionLabel> read_labels(const fs::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t hive = t.column("hive_id"), date = t.column("date"),
                    bees = t.column("frames_bees"), brood = t.column("frames_brood"),
                    type = t.column("disease_type"), sev = t.column("severity");
  std::vector<InspectionLabel> labels;
  for (const auto& row : t.rows) {
    InspectionLabel l;
    l.hive_id = row[hive];
    l.date = parse_day(row[date]);
    l.frames_bees = std::stoi(row[bees]);
    l.frames_brood = std::stoi(row[brood]);
    l.disease_type = std::stoi(row[type]);
    l.severity = parse_severity(row[sev]);
    check_label(l);
    labels.push_back(std::move(l));
  }
  return labels;
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t hive = t.column("hive_id"), date = t.column("date"),
                    n = t.column("n_samples"), complete = t.column("complete");
  std::vector<ManifestRow> rows;
  for (const auto& row : t.rows) {
    rows.push_back({row[hive], parse_day(row[date]), std::stoi(row[n]), row[complete] == "1"});
  }
  return rows;
}

std::vector<ManifestRow> write_dataset(std::span<const SensorSample> samples,
                                       std::span<const InspectionLabel> labels,
                                       const fs::path& root) {
  std::map<std::pair<std::string, int64_t>, std::size_t> seen;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SensorSample& s = samples[i];
    check_id(s.hive_id, "hive_id");
    check_id(s.sensor_id, "sensor_id");
    if (s.hive_id.size() >= kIdBytes || s.sensor_id.size() >= kIdBytes) {
      throw Error("identifier too long in sample #" + std::to_string(i) + " (max " +
                  std::to_string(kIdBytes - 1) + " bytes)");
    }
    for (double v : s.env) {
      if (!std::isfinite(v)) {
        throw Error("sample #" + std::to_string(i) + " of hive " + s.hive_id +
                    " has a non-finite environment reading");
      }
    }
    const auto [it, fresh] = seen.emplace(std::make_pair(s.hive_id, snap_to_grid(s.timestamp)), i);
    if (!fresh) {
      throw Error("duplicate sample for hive " + s.hive_id + " at timestamp " +
                  std::to_string(s.timestamp) + ": samples #" + std::to_string(it->second) +
                  " and #" + std::to_string(i));
    }
  }
  for (const InspectionLabel& l : labels) check_label(l);

  fs::create_directories(root);
  std::map<std::pair<std::string, Day>, int> counts;
  for (const SensorSample& s : samples) {
    SensorSample snapped = s;
    snapped.timestamp = snap_to_grid(s.timestamp);
    const Day d = day_of(snapped.timestamp);
    ++counts[{s.hive_id, d}];
    write_record(root / "hives" / s.hive_id / format_day(d) / (hhmm(snapped.timestamp) + ".rec"),
                 snapped);
  }
  write_labels(root / "labels.csv", labels);

  std::vector<ManifestRow> manifest;
  csv::Table t;
  t.header = {"hive_id", "date", "n_samples", "complete"};
  for (const auto& [key, n] : counts) {
    manifest.push_back({key.first, key.second, n, n == kSamplesPerDay});
    t.rows.push_back({key.first, format_day(key.second), std::to_string(n),
                      n == kSamplesPerDay ? "1" : "0"});
  }
  csv::write(root / "manifest.csv", t);
  return manifest;
}

Dataset read_dataset(const fs::path& root) {
  if (!fs::exists(root / "manifest.csv")) {
    throw IoError(root.string() + ": not a dataset (manifest.csv missing)");
  }
  Dataset ds;
  std::vector<fs::path> files;
  if (fs::exists(root / "hives")) {
    for (const auto& entry : fs::recursive_directory_iterator(root / "hives")) {
      if (entry.is_regular_file() && entry.path().extension() == ".rec") {
        files.push_back(entry.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  ds.samples.reserve(files.size());
  for (const fs::path& f : files) ds.samples.push_back(read_record(f));
  ds.labels = read_labels(root / "labels.csv");
  return ds;
}

dsp::Waveform load_waveform(const Audio& audio, const fs::path& root) {
  switch (audio.kind) {
    case AudioKind::kWav: return dsp::read_wav(root / audio.path);
    case AudioKind::kRawF32: return dsp::read_raw_f32(root / audio.path);
    default: throw Error("sample has no file-backed audio");
  }
}

// --- spectrograms ---------------------------------------------------------------------------

Eigen::VectorXf flatten_spectrogram(const Eigen::MatrixXd& s56) {
  if (s56.rows() != dsp::kCropRows || s56.cols() != dsp::kTimeBins) {
    throw ShapeError("flatten_spectrogram: expected 56x56");
  }
  Eigen::VectorXf v(kPixels);
  for (int r = 0; r < dsp::kCropRows; ++r) {
    for (int c = 0; c < dsp::kTimeBins; ++c) v[r * dsp::kTimeBins + c] = static_cast<float>(s56(r, c));
  }
  return v;
}

Eigen::MatrixXd sample_spectrogram(const SensorSample& s, const fs::path& root) {
  switch (s.audio.kind) {
    case AudioKind::kInline: return dsp::crop_normalize(s.audio.pooled.cast<double>());
    case AudioKind::kWav:
    case AudioKind::kRawF32: {
      dsp::Waveform w = load_waveform(s.audio, root);
      return dsp::spectrogram56(dsp::conform(std::move(w.samples), w.sample_rate));
    }
    case AudioKind::kNone: break;
  }
  throw Error("sample of hive " + s.hive_id + " has no audio");
}

fs::path cache_path(const fs::path& cache_root, const std::string& hive_id, Day date) {
  return cache_root / hive_id / (format_day(date) + ".spec");
}

void write_day_cache(const fs::path& path, const Eigen::MatrixXf& spectra) {
  if (spectra.rows() != kPixels) throw ShapeError("write_day_cache: expected 3136 rows");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (Eigen::Index j = 0; j < spectra.cols(); ++j) {
    const Eigen::Map<const Eigen::Matrix<float, dsp::kCropRows, dsp::kTimeBins, Eigen::RowMajor>>
        img(spectra.col(j).data());
    dsp::write_matrix_blob(out, img.cast<double>());
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Eigen::MatrixXf read_day_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Eigen::MatrixXf spectra(kPixels, kSamplesPerDay);
  for (int j = 0; j < kSamplesPerDay; ++j) {
    const Eigen::MatrixXd img = dsp::read_matrix_blob(in);
    if (img.rows() != dsp::kCropRows || img.cols() != dsp::kTimeBins) {
      throw IoError(path.string() + ": blob " + std::to_string(j) + " is not 56x56");
    }
    spectra.col(j) = flatten_spectrogram(img);
  }
  return spectra;
}

}  // namespace apiarius::data
