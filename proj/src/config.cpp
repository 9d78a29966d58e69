#include "apiarius/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "apiarius/common.hpp"
#include "apiarius/csv.hpp"

namespace apiarius::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

}  // namespace

KeyValues parse(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(source + ":" + std::to_string(n) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(source + ":" + std::to_string(n) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void write_file(const std::filesystem::path& path, const KeyValues& kv) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

void Binder::bind(const std::string& key, int& v) {
  slots_[key] = {[&v, key](const std::string& s) { v = parse_integer<int>(key, s); },
                 [&v] { return std::to_string(v); }};
}

void Binder::bind(const std::string& key, uint64_t& v) {
  slots_[key] = {[&v, key](const std::string& s) { v = parse_integer<uint64_t>(key, s); },
                 [&v] { return std::to_string(v); }};
}

void Binder::bind(const std::string& key, double& v) {
  slots_[key] = {[&v, key](const std::string& s) {
                   try {
                     v = csv::parse_number(s);
                   } catch (const std::exception&) {
                     throw Error("config key '" + key + "': expected a number, got '" + s + "'");
                   }
                 },
                 [&v] { return csv::format_number(v); }};
}

void Binder::bind(const std::string& key, bool& v) {
  slots_[key] = {[&v, key](const std::string& s) {
                   if (s == "true" || s == "1" || s == "yes") {
                     v = true;
                   } else if (s == "false" || s == "0" || s == "no") {
                     v = false;
                   } else {
                     throw Error("config key '" + key + "': expected true/false, got '" + s + "'");
                   }
                 },
                 [&v] { return std::string(v ? "true" : "false"); }};
}

void Binder::bind(const std::string& key, std::string& v) {
  slots_[key] = {[&v](const std::string& s) { v = s; }, [&v] { return v; }};
}

void Binder::set(const std::string& key, const std::string& value) {
  auto it = slots_.find(key);
  if (it == slots_.end()) throw Error("unknown config key '" + key + "'");
  it->second.set(value);
}

void Binder::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

KeyValues Binder::snapshot() const {
  KeyValues kv;
  for (const auto& [k, s] : slots_) kv[k] = s.get();
  return kv;
}

}  // namespace apiarius::config
