#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace natmotion::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Runs one natmotion command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace natmotion::cli
