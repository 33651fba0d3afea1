#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace circuit_lab {

/// 17 significant digits; round-trips every finite double. NaN prints as "nan".
std::string format_double(double x);

/// Strict parse of the whole field; nullopt-style failure reported via bool.
bool parse_double(std::string_view text, double& out);
bool parse_u64(std::string_view text, std::uint64_t& out);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace circuit_lab
