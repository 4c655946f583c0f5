// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver. Configuration is a flat INI file ("[section]" headers,
// "key = value" lines) plus "--set section.key=value" overrides; every run
// writes its resolved configuration into a run directory named by the hash
// of that configuration.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace m3p::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

// "section.key" -> raw value, in file order of appearance.
std::vector<std::pair<std::string, std::string>> parse_ini(std::string_view text, const std::string& origin);

std::uint64_t fnv1a64(std::string_view bytes);

class RunConfig {
 public:
  // Defaults for `command`, then `file`, then `overrides` ("key=value"), then
  // `seed` (run.seed). File keys outside the command's sections are ignored;
  // any other unknown key is a ConfigError.
  static RunConfig resolve(const std::string& command, const std::optional<std::filesystem::path>& file,
                           const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed);

  const std::string& command() const { return command_; }
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // Comma-separated, trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& key) const;

  // Sorted "key = value" lines grouped by section; parsing it back yields the
  // same configuration.
  std::string canonical() const;
  // 16 lowercase hex digits of FNV-1a over command + canonical().
  std::string hash() const;

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

const std::vector<std::string>& command_names();

// Runs one command line (args exclude the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace m3p::cli
