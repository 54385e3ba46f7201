#pragma once

#include <string>
#include <utility>
#include <vector>

namespace pggcn {

/// Entry point behind the pggcn executable. Returns the process exit code:
/// 0 on success, 1 on a runtime failure (bad data, missing files, failed
/// checks), 2 on a usage error (unknown flags, malformed values).
int run_cli(int argc, const char* const* argv);

/// Same, with `args` excluding the program name.
int run_cli(const std::vector<std::string>& args);

/// Joins `path` onto `workdir` unless `path` is absolute or empty.
std::string resolve_path(const std::string& workdir, const std::string& path);

/// Reads `key = value` lines in file order; '#' starts a comment, blank lines
/// are skipped. Values supply defaults for flags not given on the command
/// line (command-line flags always win).
std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path);

}  // namespace pggcn
