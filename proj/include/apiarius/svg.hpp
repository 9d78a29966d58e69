#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace apiarius::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool line = false;  // polyline instead of markers
  std::string color;  // empty: palette
};

struct Plot {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  std::optional<std::pair<double, double>> xrange, yrange;
  bool diagonal = false;  // y = x reference line
  int width = 560, height = 420;
};

std::string render(const Plot& p);

/// Grayscale tiles (values in [0,1], row 0 drawn at the bottom) laid out on a grid.
std::string tile_sheet(const std::vector<Eigen::MatrixXd>& tiles, int columns,
                       const std::string& title, const std::vector<std::string>& captions = {},
                       int tile_px = 112);

void write(const std::filesystem::path& path, const std::string& svg);

std::string escape(const std::string& text);

}  // namespace apiarius::svg
