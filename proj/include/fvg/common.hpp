// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fvg {

// ---------------------------------------------------------------------------
// Error hierarchy. Every failure the library reports is one of these; the CLI
// maps them onto process exit codes.
// ---------------------------------------------------------------------------
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SyntaxError : public Error {
public:
    SyntaxError(std::size_t offset, std::string found, std::vector<std::string> expected);
    std::size_t offset() const noexcept { return offset_; }
    const std::string& found() const noexcept { return found_; }
    const std::vector<std::string>& expected() const noexcept { return expected_; }

private:
    std::size_t offset_;
    std::string found_;
    std::vector<std::string> expected_;
};

class SemanticError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class GeometryError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ChecksumError : public Error { using Error::Error; };
class HashMismatchError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class CountError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class MissingArtifactError : public Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. Distributions are implemented here rather than taken from
// <random> because libstdc++/libc++/MSVC disagree on them.
// ---------------------------------------------------------------------------
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent stream seed from a master seed and a path of indices.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept;

class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Hashing and checksums.
// ---------------------------------------------------------------------------
std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
/// First 8 bytes of SHA-256, big-endian. Stable across platforms.
std::uint64_t stable_hash64(std::string_view text);

// ---------------------------------------------------------------------------
// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items are claimed
// dynamically; callers write results into per-item slots so the outcome does
// not depend on scheduling. The first exception thrown is rethrown.
// ---------------------------------------------------------------------------
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Small file helpers.
// ---------------------------------------------------------------------------
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace fvg
