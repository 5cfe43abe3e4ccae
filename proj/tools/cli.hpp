#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nca::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntimeAbort = 2, kIo = 3 };

/// Entry point shared by the binary and the in-process tests. args excludes
/// the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nca::cli
