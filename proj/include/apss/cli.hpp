#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace apss::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

// Flat key=value lines; '#' starts a comment, blank lines are ignored.
std::map<std::string, std::string> parse_config(const std::string& text);
std::map<std::string, std::string> load_config(const std::filesystem::path& path);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace apss::cli
