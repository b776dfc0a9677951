#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace geco::util {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// Per-stage seed fan-out: first 8 bytes (big-endian) of SHA-256("<global>:<label>").
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label);

// Stable per-key seed: splitmix64(seed ^ fnv1a64(key)).
std::uint64_t keyed_seed(std::uint64_t seed, std::string_view key);

}  // namespace geco::util
