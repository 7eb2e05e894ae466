#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xai::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kInternal = 3 };

/// Entry point of the xaibench tool. args excludes the program name.
/// Diagnostics go to err; tables and progress to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xai::cli
