#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace apiarius::config {

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys: last one wins.
KeyValues parse(const std::string& text, const std::string& source = "<config>");
KeyValues read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const KeyValues& kv);

/// Maps config keys onto typed variables. Unknown keys and unparsable values are errors.
class Binder {
 public:
  void bind(const std::string& key, int& v);
  void bind(const std::string& key, uint64_t& v);
  void bind(const std::string& key, double& v);
  void bind(const std::string& key, bool& v);
  void bind(const std::string& key, std::string& v);

  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv);
  bool known(const std::string& key) const { return slots_.count(key) != 0; }
  /// Current values of every bound key.
  KeyValues snapshot() const;

 private:
  struct Slot {
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };
  std::map<std::string, Slot> slots_;
};

}  // namespace apiarius::config
