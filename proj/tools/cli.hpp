#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace berto {

/// Entry point behind the `berto` executable. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace berto
