#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apiarius/datastore.hpp"
#include "apiarius/eval.hpp"
#include "apiarius/synth.hpp"

namespace apiarius::pipeline {

struct PreprocessReport {
  int days_cached = 0;
  int failed_samples = 0;
  std::vector<data::SkipEntry> skipped;
};

/// Computes every complete day's model input and stores it under cache_root. Samples with
/// failed audio are dropped before day assembly, so their day is skipped.
PreprocessReport preprocess(const std::filesystem::path& data_root,
                            const std::filesystem::path& cache_root);

struct LoadedData {
  eval::CvData cv;
  std::vector<data::HiveDay> days;  // same order as cv.days, samples kept for env/features
  std::vector<data::DiscardedLabel> discarded;
  std::vector<std::string> hives;
  std::vector<synth::TruthRow> truth;  // empty unless the dataset carries truth.csv
};

/// Reads the dataset, assembles days, matches labels and loads the cached spectra.
LoadedData load(const std::filesystem::path& data_root, const std::filesystem::path& cache_root);

/// Day-level truth classes for analysis: (severity level, disease type) per cv day, taken
/// from truth.csv when present, else from matched labels (-1 when unknown).
std::vector<std::pair<int, int>> day_classes(const LoadedData& d);

}  // namespace apiarius::pipeline
