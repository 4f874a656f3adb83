#pragma once

#include <string>
#include <vector>

#include "pipeline.hpp"

namespace hpan::bench {

struct BenchRow {
    std::string config;  // "np_sweep" or "kt_sweep"
    int k = 0, t = 0, n_p = 0, c = 0, hw = 0;
    uint64_t mac_factored = 0;  // instrumented, co + self prototype attention
    uint64_t mac_full = 0;      // closed-form full-rank counterpart
    int64_t ns_factored = 0;    // median wall time over the repetitions
    int64_t ns_full = -1;       // -1 when the guard skipped the full oracle
    bool full_skipped = false;
};

// One measured point. Tokens and prototypes are seeded random matrices at
// the configured C and l3 grid. Full-rank timing beyond the oracle guard is
// recorded as skipped (and can be switched off entirely, leaving the
// closed-form MAC count). Timings are medians over `cfg.bench_repetitions`
// runs (plus one warmup); MAC counters are deterministic.
BenchRow bench_point(const RunConfig& cfg, const std::string& label, int k, int t, int n_p,
                     bool time_full = true);

// Sweeps N_p in {1,5,10,15,20} at K=T=5 and the (K,T) ladder of the cost
// tables at N_p=5.
std::vector<BenchRow> run_bench(const RunConfig& cfg);

// CSV: config,K,T,Np,C,HW,mac_factored,mac_full,ns_factored,ns_full
// (ns_full column holds `skipped` for guard-exceeded rows).
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

}  // namespace hpan::bench
