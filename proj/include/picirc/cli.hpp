#pragma once

#include <string>
#include <vector>

namespace picirc::cli {

/// Entry point of the `picirc` tool. Returns 0 on success, 1 on user error (bad flags,
/// bad input files, invalid arguments) and 2 on internal error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args excludes the program name

}  // namespace picirc::cli
