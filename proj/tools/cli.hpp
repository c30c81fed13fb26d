#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hiersev::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Runs one command. `args` excludes the program name. Machine-readable
/// output goes to `out`, everything else to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "0.0156863" or the exact rational "4/255".
double parse_fraction(const std::string& text);

}  // namespace hiersev::cli
