#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "degen/errors.hpp"

namespace degen {

inline std::string format_double(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

/// Ordered flat key = value report. Keys appear in insertion order so that
/// identical runs serialize to identical text.
class Report {
 public:
  void set(std::string key, std::string value) {
    entries_.emplace_back(std::move(key), std::move(value));
  }
  void set(std::string key, const char* value) { set(std::move(key), std::string(value)); }
  void set(std::string key, double value) { set(std::move(key), format_double(value)); }
  void set(std::string key, bool value) { set(std::move(key), std::string(value ? "yes" : "no")); }
  void set(std::string key, int value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, long value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, long long value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, unsigned long value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, unsigned long long value) {
    set(std::move(key), std::to_string(value));
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += k;
      out += " = ";
      out += v;
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::string csv_text(const std::vector<std::string>& header,
                            const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  return out;
}

/// Write-temp-then-rename so readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open output file: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("short write to output file: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string());
}

/// Machine-readable sibling of an output file: same stem, `.report` suffix.
inline std::filesystem::path sibling_report_path(const std::filesystem::path& path) {
  std::filesystem::path out = path;
  out.replace_extension(".report");
  return out;
}

}  // namespace degen
