#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace scrl::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // gradcheck mismatch or an unexpected error
  kBadArguments = 2,
  kDivergence = 3,
  kIoError = 4,
};

// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scrl::cli
