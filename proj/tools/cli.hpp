#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace shiftbench::cli {

/// Runs `shiftbench <args...>` (args exclude the program name). Returns the
/// process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace shiftbench::cli
