#pragma once

// Plain-text helpers shared by every file format in the project.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgp/linalg.hpp"

namespace tgp::text {

// 17 significant digits; parse_double(format_double(x)) == x for finite x.
std::string format_double(double value);
std::string format_double(double value, int significant_digits);
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

// Flat `key = value` document. '#' starts a comment line. Keys must be unique.
class KeyValueDoc {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static KeyValueDoc parse(std::istream& in, const std::string& source);
  static KeyValueDoc load(const std::filesystem::path& path);

  const std::string& source() const { return source_; }
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  std::vector<std::string> keys() const;

  // Accessors mark the key as consumed. Missing keys return nullopt; values that
  // fail to parse throw FormatError pointing at the key's line.
  std::optional<std::string> take_string(const std::string& key);
  std::optional<double> take_double(const std::string& key);
  std::optional<long long> take_int(const std::string& key);
  std::optional<bool> take_bool(const std::string& key);
  // "rows cols v00 v01 ..." in row-major order.
  std::optional<Matrix> take_matrix(const std::string& key);
  // "n v0 v1 ..."
  std::optional<std::vector<double>> take_list(const std::string& key);

  // Throws ConfigError naming the first key no accessor consumed.
  void require_all_consumed() const;

  void set(const std::string& key, std::string value);

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, bool> consumed_;
};

std::string format_matrix(const Matrix& m);
std::string format_list(const std::vector<double>& values);

// Writes to a sibling temporary file and renames it over `path` only after
// `fill` returns. A throwing `fill` leaves no file behind.
void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill);

}  // namespace tgp::text
