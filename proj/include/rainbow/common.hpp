#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rainbow {

inline constexpr const char* kVersion = "0.1.0";

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One SplitMix64 step; the standard finalizer from Steele et al.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Stream tags for derived seeds. Documented in the README: a child seed is
// splitmix64(splitmix64(splitmix64(master) ^ index) ^ tag), so replicates and
// streams are independent without shared RNG state.
enum class seed_stream : std::uint64_t {
    weights = 1,
    theta_star = 2,
    train_inputs = 3,
    train_noise = 4,
    test_inputs = 5,
    features = 6,
    prototype = 7,
    oracle = 8,
};

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, seed_stream tag) {
    return splitmix64(splitmix64(splitmix64(master) ^ index) ^ static_cast<std::uint64_t>(tag));
}

// FNV-1a over bytes; used for stable scenario hashes in manifests.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace rainbow
