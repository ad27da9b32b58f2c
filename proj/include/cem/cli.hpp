#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cem::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one command line. Returns 0 on success, 1 on usage errors and 2 on
/// runtime failures; diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cem::cli
