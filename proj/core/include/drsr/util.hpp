#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace drsr {

using Rng = std::mt19937_64;

/// splitmix64 finaliser.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31U);
}

/// Derives an independent stream seed from a base seed and a list of tags,
/// e.g. derive_seed(run_seed, {iteration, candidate}).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = mix64(base);
    for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    return h;
}

/// 64-bit FNV-1a.
[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view data,
                                              std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

[[nodiscard]] std::string hex64(std::uint64_t v);

/// Shortest decimal text that parses back to exactly `v`.
[[nodiscard]] std::string format_double(double v);

/// Whole file as bytes. Throws std::runtime_error if it cannot be opened.
[[nodiscard]] std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary file and rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace drsr
