#pragma once

// Minimal process runner for the CLI-facing tests: captures stdout and the
// exit code, leaves stderr on the test's own stream.

#include <array>
#include <cstdio>
#include <stdexcept>
#include <string>

#include <sys/wait.h>

struct CliResult {
  int exit_code = -1;
  std::string out;
};

inline CliResult run_cli(const std::string& cmd) {
  CliResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed: " + cmd);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) res.out.append(buf.data(), n);
  int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

inline std::string quoted(const std::string& s) { return "'" + s + "'"; }

// Pulls `key = value` out of a flat report; empty string when absent.
inline std::string report_value(const std::string& text, const std::string& key) {
  const std::string needle = key + " = ";
  std::size_t at = 0;
  while (at < text.size()) {
    std::size_t eol = text.find('\n', at);
    if (eol == std::string::npos) eol = text.size();
    if (text.compare(at, needle.size(), needle) == 0)
      return text.substr(at + needle.size(), eol - at - needle.size());
    at = eol + 1;
  }
  return {};
}
