#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <spdlog/spdlog.h>

namespace sslgm {

using Rng = std::mt19937_64;

/// Seeds a generator from a base seed and a stream index. Distinct streams
/// give decorrelated sequences; the same pair always gives the same sequence.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// Library logger. Verbosity comes from the SSLGM_LOG environment variable
/// (trace, debug, info, warn, error, off); default is warn.
spdlog::logger& log();

}  // namespace sslgm
