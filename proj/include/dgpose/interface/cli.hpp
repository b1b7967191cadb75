#pragma once

#include <string>
#include <vector>

namespace dgpose::interface {

/// Runs the dgpose command line; returns the process exit status.
/// Usage errors return 2 after printing help to stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace dgpose::interface
