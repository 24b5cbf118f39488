#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace can::cli {

enum ExitCode { kOk = 0, kConfigFailure = 1, kIoFailure = 2, kCheckFailure = 3 };

// Every key a run config may set: the command keys plus the model keys.
std::vector<std::string> published_keys();

// Flat `key = value` configuration. Unknown keys are rejected by name; unset
// keys fall back to the published default.
class RunConfig {
 public:
  void set(std::string_view key, std::string_view value);
  // `key=value` as given to --set.
  void set_assignment(std::string_view assignment);
  // Blank lines and '#' comments are skipped.
  void parse(std::istream& in, const std::string& source);
  void load_file(const std::string& path);

  bool has(std::string_view key) const;
  std::string get(std::string_view key) const;
  const std::map<std::string, std::string, std::less<>>& explicit_values() const { return values_; }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

// Parses arguments, runs one subcommand and maps failures onto ExitCode.
// Diagnostics go to `err`, progress and results to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace can::cli
