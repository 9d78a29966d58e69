#include "apiarius/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

#include "apiarius/common.hpp"

namespace apiarius::svg {

namespace {

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 0.5, hi + 0.5};
  const double pad = 0.04 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string base64(const std::vector<uint8_t>& bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) v |= bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[v & 63] : '=';
  }
  return out;
}

void put32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

/// 24-bit BMP; BMP rows run bottom-up, matching row 0 at the bottom.
std::vector<uint8_t> bmp(const Eigen::MatrixXd& m) {
  const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
  const int stride = (3 * w + 3) / 4 * 4;
  std::vector<uint8_t> b;
  b.push_back('B');
  b.push_back('M');
  put32(b, static_cast<uint32_t>(54 + stride * h));
  put32(b, 0);
  put32(b, 54);
  put32(b, 40);
  put32(b, static_cast<uint32_t>(w));
  put32(b, static_cast<uint32_t>(h));
  put16(b, 1);
  put16(b, 24);
  for (int i = 0; i < 6; ++i) put32(b, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double v = std::clamp(m(r, c), 0.0, 1.0);
      // dark-to-bright magma-like ramp
      const auto R = static_cast<uint8_t>(255.0 * std::pow(v, 0.6));
      const auto G = static_cast<uint8_t>(255.0 * std::pow(v, 1.6));
      const auto B = static_cast<uint8_t>(255.0 * (0.35 * std::sin(3.0 * v) + 0.3 * v));
      b.push_back(B);
      b.push_back(G);
      b.push_back(R);
    }
    for (int p = 3 * w; p < stride; ++p) b.push_back(0);
  }
  return b;
}

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render(const Plot& p) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const Series& s : p.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  if (p.diagonal) {
    xlo = ylo = std::min(xlo, ylo);
    xhi = yhi = std::max(xhi, yhi);
  }
  auto [x0, x1] = p.xrange ? *p.xrange : padded(xlo, xhi);
  auto [y0, y1] = p.yrange ? *p.yrange : padded(ylo, yhi);
  const double ml = 64, mr = 130, mt = 36, mb = 48;
  const double pw = p.width - ml - mr, ph = p.height - mt - mb;
  auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return mt + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << p.width << "\" height=\""
    << p.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << p.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
    << escape(p.title) << "</text>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << sx(xv) << "\" y=\"" << mt + ph + 14 << "\" text-anchor=\"middle\">"
      << num(xv) << "</text>\n";
    o << "<text x=\"" << ml - 4 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << num(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << p.height - 10 << "\" text-anchor=\"middle\">"
    << escape(p.xlabel) << "</text>\n";
  o << "<text transform=\"translate(14," << mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(p.ylabel) << "</text>\n";
  if (p.diagonal) {
    o << "<line x1=\"" << sx(x0) << "\" y1=\"" << sy(x0) << "\" x2=\"" << sx(x1) << "\" y2=\""
      << sy(x1) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const Series& s = p.series[k];
    const std::string color = s.color.empty() ? kPalette[k % kPalette.size()] : s.color;
    if (s.line) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
      }
      o << "\"/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o << "<circle cx=\"" << sx(s.x[i]) << "\" cy=\"" << sy(s.y[i]) << "\" r=\"2.5\" fill=\""
          << color << "\" fill-opacity=\"0.7\"/>\n";
      }
    }
    const double ly = mt + 14 + 16 * static_cast<double>(k);
    o << "<rect x=\"" << ml + pw + 10 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\""
      << color << "\"/><text x=\"" << ml + pw + 24 << "\" y=\"" << ly << "\">" << escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string tile_sheet(const std::vector<Eigen::MatrixXd>& tiles, int columns,
                       const std::string& title, const std::vector<std::string>& captions,
                       int tile_px) {
  if (columns < 1) throw Error("tile_sheet: columns must be >= 1");
  const int n = static_cast<int>(tiles.size());
  const int rows = (n + columns - 1) / columns;
  const int gap = 6, top = 30, cap = captions.empty() ? 0 : 14;
  const int w = columns * (tile_px + gap) + gap;
  const int h = top + rows * (tile_px + gap + cap) + gap;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
    << escape(title) << "</text>\n";
  for (int i = 0; i < n; ++i) {
    const int x = gap + (i % columns) * (tile_px + gap);
    const int y = top + (i / columns) * (tile_px + gap + cap);
    o << "<image x=\"" << x << "\" y=\"" << y << "\" width=\"" << tile_px << "\" height=\""
      << tile_px << "\" preserveAspectRatio=\"none\" style=\"image-rendering:pixelated\" "
      << "href=\"data:image/bmp;base64," << base64(bmp(tiles[static_cast<std::size_t>(i)]))
      << "\"/>\n";
    if (static_cast<std::size_t>(i) < captions.size()) {
      o << "<text x=\"" << x + tile_px / 2 << "\" y=\"" << y + tile_px + 11
        << "\" text-anchor=\"middle\">" << escape(captions[static_cast<std::size_t>(i)])
        << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

void write(const std::filesystem::path& path, const std::string& svg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg;
}

}  // namespace apiarius::svg
