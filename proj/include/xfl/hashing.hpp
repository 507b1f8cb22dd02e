#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace xfl {

/// splitmix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seeded 64-bit string hash (FNV-1a over the bytes, then mixed). Stable
/// across platforms and runs; every hashed feature depends on it.
std::uint64_t hash_bytes(std::string_view data, std::uint64_t seed = 0) noexcept;

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept;

/// Stage seeds derived from a single top-level seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) noexcept;

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::string_view data);
std::string sha256_hex(std::string_view data);
std::string to_hex(const Sha256Digest& digest);

/// Incremental SHA-256 for hashing files and multi-part stage inputs.
class Sha256Builder {
public:
    Sha256Builder();
    ~Sha256Builder();
    Sha256Builder(const Sha256Builder&) = delete;
    Sha256Builder& operator=(const Sha256Builder&) = delete;

    Sha256Builder& update(std::string_view data);
    Sha256Digest finish();

private:
    void* ctx_;
};

/// SHA-256 over a file's bytes; throws std::runtime_error if unreadable.
std::string sha256_file_hex(const std::string& path);

/// Deterministic generator for everything randomized in the toolkit.
/// splitmix64 stream: identical output on every platform, unlike the
/// distributions in <random>.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept;
    /// Uniform in [0, 1).
    double uniform() noexcept;
    /// Uniform integer in [0, bound); bound > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;
    bool coin() noexcept { return (next() >> 63) != 0; }

private:
    std::uint64_t state_;
};

} // namespace xfl
