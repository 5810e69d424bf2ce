#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace d3ssl::cli {

// Exit codes: 0 success, 1 validation error (bad flags, config, inputs),
// 2 runtime failure.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::vector<std::string> subcommands();

} // namespace d3ssl::cli
