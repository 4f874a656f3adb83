#pragma once

#include <chrono>
#include <cstdint>

namespace hpan {

// Operation-count instrumentation. A MAC is one floating multiply (or fused
// multiply-add); additions alone are free, divisions count as one multiply.
// mac_count is the total; the two category fields split it into
//   mac_projection:  token-by-weight linear maps, linear in token count
//   mac_interaction: score and aggregation terms, proportional to n_q*n_k
// so the quadratic part that prototype factorization removes can be compared
// in isolation.
struct CostCounter {
    uint64_t mac_count = 0;
    uint64_t bytes_touched = 0;
    uint64_t wall_ns = 0;
    uint64_t mac_projection = 0;
    uint64_t mac_interaction = 0;

    void add_projection(uint64_t macs, uint64_t bytes) {
        mac_count += macs;
        mac_projection += macs;
        bytes_touched += bytes;
    }
    void add_interaction(uint64_t macs, uint64_t bytes) {
        mac_count += macs;
        mac_interaction += macs;
        bytes_touched += bytes;
    }
    void merge(const CostCounter& other) {
        mac_count += other.mac_count;
        bytes_touched += other.bytes_touched;
        wall_ns += other.wall_ns;
        mac_projection += other.mac_projection;
        mac_interaction += other.mac_interaction;
    }
};

class ScopedTimer {
public:
    explicit ScopedTimer(uint64_t& sink)
        : sink_(sink), start_(std::chrono::steady_clock::now()) {}
    ~ScopedTimer() {
        auto end = std::chrono::steady_clock::now();
        sink_ += uint64_t(
            std::chrono::duration_cast<std::chrono::nanoseconds>(end - start_).count());
    }

private:
    uint64_t& sink_;
    std::chrono::steady_clock::time_point start_;
};

inline uint64_t now_ns() {
    return uint64_t(std::chrono::duration_cast<std::chrono::nanoseconds>(
                        std::chrono::steady_clock::now().time_since_epoch())
                        .count());
}

}  // namespace hpan
