#pragma once

// `agnet <command> [--config PATH] [--out DIR] [--seed N] [--set key=value]...`
//
// Commands: synth, train, extract, eval, gradcheck. Every run writes into a
// fresh directory: --out DIR when given (must not exist or be empty),
// otherwise a new timestamped directory under $AGNET_OUT (default "runs").

#include <iosfwd>
#include <span>
#include <string>

namespace agnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kResolvedConfigFile = "resolved_config.txt";

// `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

std::string usage();

}  // namespace agnet::cli
