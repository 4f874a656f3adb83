#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hpan {

// Error taxonomy shared by the whole library. The C API maps these kinds
// onto status codes, so keep the enum stable.
enum class ErrorKind {
    io,
    bad_magic,
    truncated,
    bad_shape,
    non_finite,
    invalid_value,
    invalid_argument,
    config,
    numeric,
    internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool ok, ErrorKind kind, const std::string& message) {
    if (!ok) fail(kind, message);
}

// Deterministic RNG. distributions are hand-rolled on top of mt19937_64 so
// that streams do not depend on the standard library's unspecified
// distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
        // xorshift-style warmup so that nearby seeds decorrelate
        for (int i = 0; i < 8; ++i) next();
    }

    uint64_t next() {
        // xorshift64* (Marsaglia); period 2^64-1, plenty for desk scale
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0, 1)
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        // modulo bias is < 2^-40 for desk-scale n; acceptable here
        return n ? next() % n : 0;
    }

    // standard normal via Box-Muller (one value per draw pair)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

private:
    uint64_t state_;
};

// Derive a child seed from a parent seed and a stream index (splitmix64 mix).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Process-wide log level, initialized from HPAN_LOG (error|info|debug).
LogLevel log_level();
void set_log_level(LogLevel level);
void log_message(LogLevel level, const std::string& message);

inline void log_info(const std::string& m) { log_message(LogLevel::info, m); }
inline void log_debug(const std::string& m) { log_message(LogLevel::debug, m); }
inline void log_error(const std::string& m) { log_message(LogLevel::error, m); }

}  // namespace hpan
