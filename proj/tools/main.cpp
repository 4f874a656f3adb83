// hpan command-line driver. Talks to the core exclusively through the C API.
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hpan/hpan.h"

namespace {

struct ConfigDeleter {
    void operator()(hpan_config* c) const { hpan_config_destroy(c); }
};
struct EpisodeDeleter {
    void operator()(hpan_episode* e) const { hpan_episode_destroy(e); }
};
struct ResultDeleter {
    void operator()(hpan_result* r) const { hpan_result_destroy(r); }
};
struct GradcheckDeleter {
    void operator()(hpan_gradcheck_report* r) const { hpan_gradcheck_report_destroy(r); }
};

using ConfigPtr = std::unique_ptr<hpan_config, ConfigDeleter>;
using EpisodePtr = std::unique_ptr<hpan_episode, EpisodeDeleter>;
using ResultPtr = std::unique_ptr<hpan_result, ResultDeleter>;
using GradcheckPtr = std::unique_ptr<hpan_gradcheck_report, GradcheckDeleter>;

int fail_status(const char* what, hpan_status st) {
    std::fprintf(stderr, "hpan: %s failed (%s): %s\n", what, hpan_status_name(st),
                 hpan_last_error());
    return 1;
}

#define CHECK_API(what, call)                         \
    do {                                              \
        hpan_status st_ = (call);                     \
        if (st_ != HPAN_OK) return fail_status(what, st_); \
    } while (0)

struct CommonOptions {
    std::string config_path;
    std::string out_dir = "hpan-out";
    uint64_t seed = 42;
    bool seed_set = false;
    bool synth = false;
    bool baseline = false;
    int jobs = 0;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config", opt.config_path, "JSON config file (flat keys)");
    cmd->add_option("--seed", opt.seed, "RNG seed")->each([&](const std::string&) {
        opt.seed_set = true;
    });
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_flag("--baseline", opt.baseline,
                  "raw middle-frame prototypes, self-attention disabled");
    cmd->add_option("--jobs", opt.jobs, "episode-level parallelism");
    cmd->add_option("--set", opt.overrides, "extra config overrides, key=value");
}

// defaults -> config file -> flags -> --set pairs
int build_config(const CommonOptions& opt, ConfigPtr& out) {
    hpan_config* raw = nullptr;
    CHECK_API("config", hpan_config_create(&raw));
    out.reset(raw);
    if (!opt.config_path.empty())
        CHECK_API("config load", hpan_config_load_json(raw, opt.config_path.c_str()));
    if (opt.seed_set) CHECK_API("config", hpan_config_set_int(raw, "seed", int64_t(opt.seed)));
    if (opt.baseline) CHECK_API("config", hpan_config_set_bool(raw, "baseline", 1));
    if (opt.jobs > 0) CHECK_API("config", hpan_config_set_int(raw, "jobs", opt.jobs));
    CHECK_API("config", hpan_config_set_string(raw, "out_dir", opt.out_dir.c_str()));
    for (const std::string& kv : opt.overrides) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "hpan: bad --set value '%s' (expected key=value)\n", kv.c_str());
            return 1;
        }
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        hpan_status st;
        if (value == "true" || value == "false")
            st = hpan_config_set_bool(raw, key.c_str(), value == "true");
        else if (value.find_first_not_of("-0123456789") == std::string::npos && !value.empty())
            st = hpan_config_set_int(raw, key.c_str(), std::strtoll(value.c_str(), nullptr, 10));
        else {
            char* end = nullptr;
            double d = std::strtod(value.c_str(), &end);
            if (end && *end == '\0')
                st = hpan_config_set_real(raw, key.c_str(), d);
            else
                st = hpan_config_set_string(raw, key.c_str(), value.c_str());
        }
        if (st != HPAN_OK) return fail_status("config override", st);
    }
    return 0;
}

uint64_t config_seed(const ConfigPtr& cfg) {
    int64_t seed = 0;
    hpan_config_get_int(cfg.get(), "seed", &seed);
    return uint64_t(seed);
}

int cmd_selftest(const CommonOptions& opt) {
    ConfigPtr cfg;
    if (int rc = build_config(opt, cfg)) return rc;
    std::string scratch = opt.out_dir + "/selftest";
    hpan_status st = hpan_selftest(scratch.c_str());
    if (st != HPAN_OK) return fail_status("selftest", st);
    std::printf("selftest: all checks passed\n");
    return 0;
}

int cmd_gradcheck(const CommonOptions& opt) {
    ConfigPtr cfg;
    if (int rc = build_config(opt, cfg)) return rc;
    hpan_gradcheck_report* raw = nullptr;
    CHECK_API("gradcheck", hpan_gradcheck(cfg.get(), &raw));
    GradcheckPtr report(raw);
    for (size_t i = 0; i < hpan_gradcheck_count(raw); ++i)
        std::printf("%-32s max rel err %.3e  %s\n", hpan_gradcheck_name(raw, i),
                    hpan_gradcheck_max_rel_err(raw, i),
                    hpan_gradcheck_pass(raw, i) ? "pass" : "FAIL");
    if (!hpan_gradcheck_all_pass(raw)) {
        std::fprintf(stderr, "hpan: gradient check failed\n");
        return 1;
    }
    std::printf("gradcheck: all parameter groups pass\n");
    return 0;
}

int cmd_run_episode(const CommonOptions& opt, const std::string& episode_dir) {
    ConfigPtr cfg;
    if (int rc = build_config(opt, cfg)) return rc;

    EpisodePtr episode;
    if (opt.synth) {
        hpan_episode* raw = nullptr;
        CHECK_API("synth episode", hpan_episode_synth(cfg.get(), config_seed(cfg), &raw));
        episode.reset(raw);
        std::string saved = opt.out_dir + "/episode";
        CHECK_API("episode save", hpan_episode_save(raw, saved.c_str()));
        std::printf("synthetic episode (K=%d, T=%d) written to %s\n", hpan_episode_k(raw),
                    hpan_episode_t(raw), saved.c_str());
    } else {
        if (episode_dir.empty()) {
            std::fprintf(stderr, "hpan: run-episode needs an episode directory or --synth\n");
            return 1;
        }
        hpan_episode* raw = nullptr;
        CHECK_API("episode load", hpan_episode_load(episode_dir.c_str(), &raw));
        episode.reset(raw);
    }

    hpan_result* raw_result = nullptr;
    CHECK_API("run-episode", hpan_run_episode(cfg.get(), episode.get(), opt.out_dir.c_str(),
                                              &raw_result));
    ResultPtr result(raw_result);
    std::printf("outputs written to %s\n", opt.out_dir.c_str());
    if (hpan_result_has_metrics(raw_result)) {
        double j = 0, f = 0, pj = 0, total = 0;
        hpan_result_metric(raw_result, "j_mean", &j);
        hpan_result_metric(raw_result, "f_mean", &f);
        hpan_result_metric(raw_result, "pseudo_j_mean", &pj);
        hpan_result_metric(raw_result, "loss_total", &total);
        std::printf("J mean %.4f | F mean %.4f | pseudo-mask J %.4f | total loss %.4f\n", j, f,
                    pj, total);
    } else {
        std::printf("episode has no ground truth; metrics skipped\n");
    }
    return 0;
}

int cmd_bench(const CommonOptions& opt) {
    ConfigPtr cfg;
    if (int rc = build_config(opt, cfg)) return rc;
    std::string csv = opt.out_dir + "/bench.csv";
    CHECK_API("bench", hpan_bench(cfg.get(), csv.c_str()));
    std::printf("benchmark table written to %s\n", csv.c_str());
    return 0;
}

int cmd_metrics(const CommonOptions& opt, const std::string& pred_dir, const std::string& gt_dir) {
    ConfigPtr cfg;
    if (int rc = build_config(opt, cfg)) return rc;
    std::string csv = opt.out_dir + "/metrics.csv";
    double j = 0, f = 0;
    CHECK_API("metrics",
              hpan_metrics_dirs(pred_dir.c_str(), gt_dir.c_str(), csv.c_str(), &j, &f));
    std::printf("J mean %.6f | F mean %.6f (per-frame CSV: %s)\n", j, f, csv.c_str());
    return 0;
}

int cmd_train_demo(const CommonOptions& opt) {
    ConfigPtr cfg;
    if (int rc = build_config(opt, cfg)) return rc;
    std::string csv = opt.out_dir + "/trajectory.csv";
    hpan_train_summary summary{};
    CHECK_API("train-demo", hpan_train_demo(cfg.get(), csv.c_str(), &summary));
    double reduction = summary.initial_total > 0
                           ? 100.0 * (1.0 - summary.final_total / summary.initial_total)
                           : 0.0;
    std::printf("total loss %.6f -> %.6f (%.1f%% reduction), prototype cosine %.4f\n",
                summary.initial_total, summary.final_total, reduction,
                summary.final_proto_mean);
    std::printf("trajectory written to %s\n", csv.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hpan — prototype-attention few-shot video object segmentation core"};
    app.require_subcommand(1);
    app.footer("Environment: HPAN_LOG={error,info,debug} controls library logging.");

    CommonOptions selftest_opt, grad_opt, run_opt, bench_opt, metrics_opt, train_opt;
    std::string episode_dir, pred_dir, gt_dir;

    CLI::App* selftest = app.add_subcommand("selftest", "run built-in library checks");
    add_common(selftest, selftest_opt);

    CLI::App* grad = app.add_subcommand("gradcheck",
                                        "finite-difference check of every analytic gradient");
    add_common(grad, grad_opt);

    CLI::App* run = app.add_subcommand("run-episode", "run the pipeline on one episode");
    add_common(run, run_opt);
    run->add_option("episode", episode_dir, "episode directory (with episode.json)");
    run->add_flag("--synth", run_opt.synth, "generate a synthetic episode instead of loading");

    CLI::App* bench = app.add_subcommand("bench", "attention cost sweeps (MACs and wall time)");
    add_common(bench, bench_opt);

    CLI::App* metrics = app.add_subcommand("metrics", "J/F between two mask directories");
    add_common(metrics, metrics_opt);
    metrics->add_option("pred_dir", pred_dir, "predicted masks (*.hptn)")->required();
    metrics->add_option("gt_dir", gt_dir, "ground-truth masks (*.hptn)")->required();

    CLI::App* train = app.add_subcommand("train-demo", "desk-scale gradient-descent demo");
    add_common(train, train_opt);

    CLI11_PARSE(app, argc, argv);

    if (selftest->parsed()) return cmd_selftest(selftest_opt);
    if (grad->parsed()) return cmd_gradcheck(grad_opt);
    if (run->parsed()) return cmd_run_episode(run_opt, episode_dir);
    if (bench->parsed()) return cmd_bench(bench_opt);
    if (metrics->parsed()) return cmd_metrics(metrics_opt, pred_dir, gt_dir);
    if (train->parsed()) return cmd_train_demo(train_opt);
    return 1;
}
