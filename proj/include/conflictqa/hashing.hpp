#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace conflictqa {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

// Stable 64-bit seed for a (seed, key) pair, identical on every platform.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);

}  // namespace conflictqa
