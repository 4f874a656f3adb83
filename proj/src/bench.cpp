#include "bench.hpp"

#include <algorithm>
#include <cinttypes>

#include "verify.hpp"

namespace hpan::bench {

namespace {

int64_t median(std::vector<int64_t> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

BenchRow bench_one(const std::string& config, int k, int t, int n_p, int c, int h, int w,
                   uint64_t seed, int repetitions, bool time_full) {
    const int hw = h * w;
    Rng rng(seed);
    Matrix t_q = uniform_matrix(rng, t * hw, c, -1, 1);
    Matrix t_s = uniform_matrix(rng, k * hw, c, -1, 1);
    Matrix p_h = uniform_matrix(rng, n_p * k, c, -1, 1);
    auto block = [&] {
        bpam::AttentionBlockParams p;
        double bound = 1.0 / std::sqrt(double(c));
        p.w_query = uniform_matrix(rng, c, c, -bound, bound);
        p.w_key = uniform_matrix(rng, c, c, -bound, bound);
        p.w_value = uniform_matrix(rng, c, c, -bound, bound);
        return p;
    };
    bpam::AttentionBlockParams co_inner = block(), co_outer = block(), self_inner = block(),
                               self_outer = block();

    BenchRow row;
    row.config = config;
    row.k = k;
    row.t = t;
    row.n_p = n_p;
    row.c = c;
    row.hw = hw;

    // factored: complete co + self prototype attention calls
    std::vector<int64_t> factored_ns;
    for (int rep = 0; rep <= repetitions; ++rep) {
        CostCounter counter;
        {
            ScopedTimer timer(counter.wall_ns);
            double sum =
                bpam::prototype_co_attention(t_q, t_s, p_h, co_inner, co_outer, nullptr, &counter)
                    .sum();
            sum += bpam::prototype_self_attention(t_q, p_h, self_inner, self_outer, nullptr,
                                                  &counter)
                       .sum();
            volatile double sink = sum;
            (void)sink;
        }
        if (rep == 0) {  // warmup carries the counter snapshot
            row.mac_factored = counter.mac_count;
        } else {
            factored_ns.push_back(int64_t(counter.wall_ns));
        }
    }
    row.ns_factored = median(factored_ns);

    // full-rank counterpart: A(Tq,Ts,Ts) + A(Tq,Tq,Tq), guarded
    verify::CostModel model = verify::cost_model(k, t, h, w, n_p, c);
    row.mac_full = model.full_total();
    const uint64_t n_q = uint64_t(t) * uint64_t(hw);
    const uint64_t n_s = uint64_t(k) * uint64_t(hw);
    row.full_skipped = verify::full_attention_guard_exceeded(n_q, n_s, uint64_t(c)) ||
                       verify::full_attention_guard_exceeded(n_q, n_q, uint64_t(c));
    if (!row.full_skipped && time_full) {
        bpam::AttentionBlockParams full_co = block(), full_self = block();
        std::vector<int64_t> full_ns;
        uint64_t counted = 0;
        for (int rep = 0; rep <= repetitions; ++rep) {
            auto [out_co, counter_co] = verify::full_attention_oracle(t_q, t_s, full_co);
            auto [out_self, counter_self] = verify::full_attention_oracle(t_q, t_q, full_self);
            double sum = out_co.sum() + out_self.sum();
            volatile double sink = sum;
            (void)sink;
            counted = counter_co.mac_count + counter_self.mac_count;
            if (rep > 0) full_ns.push_back(int64_t(counter_co.wall_ns + counter_self.wall_ns));
        }
        row.mac_full = counted;
        row.ns_full = median(full_ns);
        double mean = 0, var = 0;
        for (int64_t v : full_ns) mean += double(v) / double(full_ns.size());
        for (int64_t v : full_ns) var += (double(v) - mean) * (double(v) - mean) / double(full_ns.size());
        log_info("bench " + config + " K=" + std::to_string(k) + " T=" + std::to_string(t) +
                 " Np=" + std::to_string(n_p) + " full ns median=" + std::to_string(row.ns_full) +
                 " stddev=" + std::to_string(int64_t(std::sqrt(var))));
    }

    double mean = 0, var = 0;
    for (int64_t v : factored_ns) mean += double(v) / double(factored_ns.size());
    for (int64_t v : factored_ns)
        var += (double(v) - mean) * (double(v) - mean) / double(factored_ns.size());
    log_info("bench " + config + " K=" + std::to_string(k) + " T=" + std::to_string(t) +
             " Np=" + std::to_string(n_p) + " factored ns median=" + std::to_string(row.ns_factored) +
             " stddev=" + std::to_string(int64_t(std::sqrt(var))));
    return row;
}

}  // namespace

BenchRow bench_point(const RunConfig& cfg, const std::string& label, int k, int t, int n_p,
                     bool time_full) {
    cfg.validate();
    return bench_one(label, k, t, n_p, cfg.channels, cfg.l3_height, cfg.l3_width,
                     mix_seed(cfg.seed, 0xb000 + uint64_t(k) * 4096 + uint64_t(t) * 64 +
                                            uint64_t(n_p)),
                     cfg.bench_repetitions, time_full);
}

std::vector<BenchRow> run_bench(const RunConfig& cfg) {
    cfg.validate();
    std::vector<BenchRow> rows;
    for (int n_p : {1, 5, 10, 15, 20}) rows.push_back(bench_point(cfg, "np_sweep", 5, 5, n_p));

    const std::pair<int, int> kt[] = {{5, 5}, {5, 10}, {10, 10}, {10, 20},
                                      {20, 20}, {20, 40}, {40, 40}};
    for (auto [k, t] : kt) rows.push_back(bench_point(cfg, "kt_sweep", k, t, 5));
    return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    require(f != nullptr, ErrorKind::io, "cannot write " + path);
    std::fprintf(f, "config,K,T,Np,C,HW,mac_factored,mac_full,ns_factored,ns_full\n");
    for (const BenchRow& r : rows) {
        std::fprintf(f, "%s,%d,%d,%d,%d,%d,%" PRIu64 ",%" PRIu64 ",%" PRId64 ",", r.config.c_str(),
                     r.k, r.t, r.n_p, r.c, r.hw, r.mac_factored, r.mac_full, r.ns_factored);
        if (r.full_skipped)
            std::fprintf(f, "skipped\n");
        else
            std::fprintf(f, "%" PRId64 "\n", r.ns_full);
    }
    require(std::fclose(f) == 0, ErrorKind::io, "write failed for " + path);
}

}  // namespace hpan::bench
