#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "apiarius/dsp.hpp"
#include "apiarius/synth.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Concatenated bytes of every file below `root`, in path order.
std::string tree_bytes(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    all += std::filesystem::relative(f, root).string();
    all += slurp(f);
  }
  return all;
}

double band_total(const BandSpectrumModel& m) {
  double s = 0.0;
  for (const Band& b : m.bands) s += b.magnitude;
  return s;
}

}  // namespace

TEST_CASE("colony growth of about one frame per week") {
  SynthConfig c;
  c.growth_jitter = 0.0;
  HivePlan plan;
  plan.hive_id = "H01";
  ColonyState s;
  s.frames_bees = 10.0;
  Rng rng(1);
  for (int d = 1; d <= 7; ++d) s = evolve_colony(s, plan, d, c, rng);
  CHECK(s.frames_bees == doctest::Approx(11.0).epsilon(0.02));

  c.growth_per_day = 0.0;
  ColonyState t;
  t.frames_bees = 10.0;
  ColonyState u = t;
  for (int d = 1; d <= 7; ++d) u = evolve_colony(u, plan, d, c, rng);
  CHECK(u.frames_bees == t.frames_bees);
  CHECK(u.frames_brood == t.frames_brood);
  CHECK(u.severity == t.severity);
}

TEST_CASE("band magnitudes peak at the configured hour") {
  SynthConfig c;
  ColonyState s;
  const double at_peak = band_total(band_spectrum(s, c.peak_hour, c));
  for (double h = 0.25; h < 24.0; h += 0.25) CHECK(band_total(band_spectrum(s, h, c)) <= at_peak);
}

TEST_CASE("an empty colony is only sensor noise") {
  SynthConfig c;
  ColonyState healthy;
  ColonyState empty;
  empty.frames_bees = 0.0;
  empty.frames_brood = 0.0;
  Rng a(2), b(3);
  const double amp_h = dsp::fft_features(synth_waveform(healthy, 0.0, c, a)).mean_amp;
  const double amp_e = dsp::fft_features(synth_waveform(empty, 0.0, c, b)).mean_amp;
  CHECK(amp_e * 10.0 <= amp_h);
}

TEST_CASE("integrated magnitude rises with population") {
  SynthConfig c;
  double last = -1.0;
  for (double f : {2.0, 8.0, 14.0, 20.0}) {
    ColonyState s;
    s.frames_bees = f;
    Rng rng(4);
    double total = 0.0;
    Eigen::MatrixXd p = synth_pooled_power(s, 0.0, c, rng);
    total = p.sum();
    CHECK(total > last);
    last = total;
  }
}

TEST_CASE("waveform and direct spectrogram fidelities agree") {
  SynthConfig c;
  for (double frames : {4.0, 10.0, 18.0}) {
    for (double hour : {0.0, 12.0}) {
      ColonyState s;
      s.frames_bees = frames;
      Rng a(1), b(2);
      Eigen::MatrixXd w = dsp::spectrogram56(synth_waveform(s, hour, c, a));
      Eigen::MatrixXd d = synth_spectrogram_direct(s, hour, c, b);
      INFO("frames " << frames << " hour " << hour);
      CHECK((w - d).cwiseAbs().mean() < 0.02);
      Eigen::VectorXd pw = w.rowwise().mean();
      Eigen::VectorXd pd = d.rowwise().mean();
      CHECK((pw - pd).cwiseAbs().maxCoeff() < 0.03);
    }
  }
}

TEST_CASE("disease spectral deltas sit at their pooled bands") {
  SynthConfig c;
  ColonyState healthy;
  auto delta_peak = [&](int type) {
    ColonyState sick = healthy;
    sick.disease_type = type;
    sick.severity = 1.0 / 3.0;
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(56);
    for (int h = 0; h < 24; h += 3) {
      Rng a(5), b(5);
      delta += (synth_spectrogram_direct(sick, h, c, a) - synth_spectrogram_direct(healthy, h, c, b))
                   .rowwise()
                   .mean();
    }
    Eigen::Index r = 0;
    delta.maxCoeff(&r);
    return static_cast<int>(r);
  };
  CHECK(std::abs(delta_peak(kDiseaseA) - dsp::pooled_row_of(c.disease_a_hz)) <= 1);
  CHECK(std::abs(delta_peak(kDiseaseB) - dsp::pooled_row_of(c.disease_b_hz)) <= 1);
}

TEST_CASE("thermoregulation holds the brood nest steady in strong colonies") {
  SynthConfig c = test::steady_config(6.0, 2, 3);
  SynthOutput out = generate(c);
  std::map<std::string, std::vector<double>> temps;
  for (const auto& s : out.samples) temps[s.hive_id].push_back(s.env[data::kTempIn]);
  for (const auto& [hive, v] : temps) {
    Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
    const double sd = std::sqrt((x.array() - x.mean()).square().mean());
    INFO(hive);
    CHECK(sd < 1.0);
  }
  // a weak colony tracks the outside
  SynthConfig weak = test::steady_config(1.0, 1, 3);
  SynthOutput w = generate(weak);
  std::vector<double> ti;
  for (const auto& s : w.samples) ti.push_back(s.env[data::kTempIn]);
  Eigen::Map<const Eigen::VectorXd> x(ti.data(), static_cast<Eigen::Index>(ti.size()));
  CHECK(std::sqrt((x.array() - x.mean()).square().mean()) > 1.0);
}

TEST_CASE("generate_dataset counts and label cadence") {
  test::TempDir tmp("gen");
  SynthConfig c;
  c.n_hives = 2;
  c.n_days = 3;
  SynthOutput out = generate_dataset(c, tmp / "d");
  CHECK(out.samples.size() == 2u * 3u * 96u);
  CHECK(std::filesystem::exists(tmp / "d" / "truth.csv"));
  CHECK(read_truth(tmp / "d" / "truth.csv").size() == out.truth.size());

  SynthConfig m;
  m.n_hives = 3;
  m.n_days = 30;
  SynthOutput month = generate(m);
  std::map<std::string, std::vector<Day>> by_hive;
  for (const auto& l : month.labels) by_hive[l.hive_id].push_back(l.date);
  CHECK(by_hive.size() == 3);
  for (const auto& [hive, dates] : by_hive) {
    REQUIRE(dates.size() == 5);
    for (std::size_t i = 0; i < dates.size(); ++i) {
      CHECK(dates[i] - m.start_date == static_cast<Day>(7 * i));
    }
  }
  for (const auto& l : month.labels) CHECK_NOTHROW(data::check_label(l));
}

TEST_CASE("generation is bitwise deterministic") {
  test::TempDir tmp("det");
  SynthConfig c;
  c.n_hives = 2;
  c.n_days = 3;
  c.seed = 7;
  generate_dataset(c, tmp / "a");
  generate_dataset(c, tmp / "b");
  CHECK(tree_bytes(tmp / "a") == tree_bytes(tmp / "b"));
  c.seed = 8;
  generate_dataset(c, tmp / "c");
  CHECK(tree_bytes(tmp / "a") != tree_bytes(tmp / "c"));
}

TEST_CASE("waveform fidelity writes readable audio") {
  test::TempDir tmp("wave");
  SynthConfig c;
  c.n_hives = 1;
  c.n_days = 1;
  c.fidelity = Fidelity::kWaveform;
  SynthOutput out = generate_dataset(c, tmp / "d");
  REQUIRE(out.samples.size() == 96);
  CHECK(out.samples[0].audio.kind == data::AudioKind::kWav);
  dsp::Waveform w = data::load_waveform(out.samples[0].audio, tmp / "d");
  CHECK(w.samples.size() == dsp::kClipLength);
  CHECK_FALSE(data::detect_failed_audio(w));
}

TEST_CASE("circadian peak of generated data is near midnight") {
  SynthConfig c = test::steady_config(10.0, 2, 2);
  auto days = data::assemble_days(generate(c).samples).days;
  data::CircadianResult r = data::circadian_peak_hour(days);
  CHECK((r.hour >= 23.0 || r.hour <= 1.0));
}

TEST_CASE("config validation") {
  SynthConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_hives = 0;
  CHECK_THROWS(c.validate());
}
