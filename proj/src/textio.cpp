#include "tgp/textio.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <system_error>

#include "tgp/errors.hpp"

namespace tgp::text {

std::string format_double(double value) { return format_double(value, 17); }

std::string format_double(double value, int significant_digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, significant_digits);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<long long> parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

namespace {

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(std::istream& in, const std::string& source) {
  KeyValueDoc doc;
  doc.source_ = source;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw FormatError(source, lineno, 0, "expected key = value");
    const std::string key(trim(view.substr(0, eq)));
    if (key.empty()) throw FormatError(source, lineno, 1, "empty key");
    if (doc.entries_.count(key)) throw FormatError(source, lineno, 1, "duplicate key '" + key + "'");
    doc.entries_[key] = Entry{std::string(trim(view.substr(eq + 1))), lineno};
    doc.consumed_[key] = false;
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return parse(in, path.string());
}

std::vector<std::string> KeyValueDoc::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

void KeyValueDoc::fail(const std::string& key, const std::string& what) const {
  throw FormatError(source_, entries_.at(key).line, 0, "key '" + key + "': " + what);
}

std::optional<std::string> KeyValueDoc::take_string(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  consumed_[key] = true;
  return it->second.value;
}

std::optional<double> KeyValueDoc::take_double(const std::string& key) {
  auto s = take_string(key);
  if (!s) return std::nullopt;
  auto v = parse_double(*s);
  if (!v) fail(key, "expected a number, got '" + *s + "'");
  return v;
}

std::optional<long long> KeyValueDoc::take_int(const std::string& key) {
  auto s = take_string(key);
  if (!s) return std::nullopt;
  auto v = parse_int(*s);
  if (!v) fail(key, "expected an integer, got '" + *s + "'");
  return v;
}

std::optional<bool> KeyValueDoc::take_bool(const std::string& key) {
  auto s = take_string(key);
  if (!s) return std::nullopt;
  if (*s == "true" || *s == "1") return true;
  if (*s == "false" || *s == "0") return false;
  fail(key, "expected true or false, got '" + *s + "'");
}

std::optional<Matrix> KeyValueDoc::take_matrix(const std::string& key) {
  auto s = take_string(key);
  if (!s) return std::nullopt;
  auto tokens = split_ws(*s);
  if (tokens.size() < 2) fail(key, "expected 'rows cols values...'");
  auto rows = parse_int(tokens[0]);
  auto cols = parse_int(tokens[1]);
  if (!rows || !cols || *rows < 0 || *cols < 0) fail(key, "bad matrix dimensions");
  if (static_cast<long long>(tokens.size()) - 2 != *rows * *cols) {
    fail(key, "expected " + std::to_string(*rows * *cols) + " values, got " + std::to_string(tokens.size() - 2));
  }
  Matrix m(*rows, *cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    auto v = parse_double(tokens[static_cast<std::size_t>(i) + 2]);
    if (!v) fail(key, "bad number '" + std::string(tokens[static_cast<std::size_t>(i) + 2]) + "'");
    m.data()[i] = *v;
  }
  return m;
}

std::optional<std::vector<double>> KeyValueDoc::take_list(const std::string& key) {
  auto s = take_string(key);
  if (!s) return std::nullopt;
  auto tokens = split_ws(*s);
  if (tokens.empty()) fail(key, "expected 'n values...'");
  auto n = parse_int(tokens[0]);
  if (!n || *n < 0 || static_cast<long long>(tokens.size()) - 1 != *n) fail(key, "list length mismatch");
  std::vector<double> out;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    auto v = parse_double(tokens[i]);
    if (!v) fail(key, "bad number '" + std::string(tokens[i]) + "'");
    out.push_back(*v);
  }
  return out;
}

void KeyValueDoc::require_all_consumed() const {
  for (const auto& [key, used] : consumed_) {
    if (!used) {
      throw ConfigError(source_ + ":" + std::to_string(entries_.at(key).line) + ": unknown key '" + key + "'");
    }
  }
}

void KeyValueDoc::set(const std::string& key, std::string value) {
  entries_[key] = Entry{std::move(value), 0};
  consumed_[key] = false;
}

std::string format_matrix(const Matrix& m) {
  std::string out = std::to_string(m.rows()) + " " + std::to_string(m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    out += ' ';
    out += format_double(m.data()[i]);
  }
  return out;
}

std::string format_list(const std::vector<double>& values) {
  std::string out = std::to_string(values.size());
  for (double v : values) {
    out += ' ';
    out += format_double(v);
  }
  return out;
}

void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    try {
      fill(out);
      out.flush();
      if (!out) throw Error("write failed for " + tmp.string());
    } catch (...) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move output into place at " + path.string());
  }
}

}  // namespace tgp::text
