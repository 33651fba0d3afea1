#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace circuit_lab {

/// Name of the environment variable consulted when neither --seed nor the
/// config sets a seed.
inline constexpr const char* kSeedEnvVar = "CIRCUIT_LAB_SEED";

/// Entry point of the circuit_lab command line. Returns the process exit code;
/// diagnostics go to err, results to out.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace circuit_lab
