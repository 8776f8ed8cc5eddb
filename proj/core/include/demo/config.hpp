#pragma once

#include <map>
#include <string>
#include <string_view>

namespace demo {

/// Flat key-value configuration. One `dotted.key=value` pair per line,
/// `#` starts a comment, blank lines ignored. Every tunable default in the
/// library has a key here; consumers read through typed getters that fall
/// back to their built-in default when the key is absent.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(std::string_view text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  /// Sorted snapshot of every explicit entry (run-manifest serialization).
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace demo
