#include "hpan/hpan.h"

#include <cstring>
#include <string>

#include "bench.hpp"
#include "episode.hpp"
#include "pipeline.hpp"

using namespace hpan;

namespace {

thread_local std::string g_last_error;

hpan_status status_from_kind(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return HPAN_ERR_IO;
        case ErrorKind::bad_magic: return HPAN_ERR_BAD_MAGIC;
        case ErrorKind::truncated: return HPAN_ERR_TRUNCATED;
        case ErrorKind::bad_shape: return HPAN_ERR_BAD_SHAPE;
        case ErrorKind::non_finite: return HPAN_ERR_NON_FINITE;
        case ErrorKind::invalid_value: return HPAN_ERR_INVALID_VALUE;
        case ErrorKind::invalid_argument: return HPAN_ERR_INVALID_ARGUMENT;
        case ErrorKind::config: return HPAN_ERR_CONFIG;
        case ErrorKind::numeric: return HPAN_ERR_NUMERIC;
        case ErrorKind::internal: return HPAN_ERR_INTERNAL;
    }
    return HPAN_ERR_INTERNAL;
}

template <typename Fn>
hpan_status guarded(Fn&& fn) {
    try {
        fn();
        return HPAN_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_from_kind(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return HPAN_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return HPAN_ERR_INTERNAL;
    }
}

hpan_status invalid(const char* message) {
    g_last_error = message;
    return HPAN_ERR_INVALID_ARGUMENT;
}

}  // namespace

struct hpan_config {
    RunConfig cfg;
};

struct hpan_tensor {
    TensorData data;
};

struct hpan_episode {
    Episode episode;
};

struct hpan_result {
    EpisodeRun run;
};

struct hpan_gradcheck_report {
    std::vector<std::pair<std::string, head::GradCheckEntry>> entries;
};

extern "C" {

const char* hpan_status_name(hpan_status status) {
    switch (status) {
        case HPAN_OK: return "ok";
        case HPAN_ERR_IO: return "io";
        case HPAN_ERR_BAD_MAGIC: return "bad_magic";
        case HPAN_ERR_TRUNCATED: return "truncated";
        case HPAN_ERR_BAD_SHAPE: return "bad_shape";
        case HPAN_ERR_NON_FINITE: return "non_finite";
        case HPAN_ERR_INVALID_VALUE: return "invalid_value";
        case HPAN_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case HPAN_ERR_CONFIG: return "config";
        case HPAN_ERR_NUMERIC: return "numeric";
        case HPAN_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* hpan_last_error(void) { return g_last_error.c_str(); }

const char* hpan_version(void) { return "1.0.0"; }

hpan_status hpan_config_create(hpan_config** out) {
    if (!out) return invalid("null output pointer");
    return guarded([&] { *out = new hpan_config(); });
}

hpan_status hpan_config_load_json(hpan_config* cfg, const char* path) {
    if (!cfg || !path) return invalid("null argument");
    return guarded([&] { cfg->cfg = load_config(path); });
}

hpan_status hpan_config_set_int(hpan_config* cfg, const char* key, int64_t value) {
    if (!cfg || !key) return invalid("null argument");
    return guarded([&] { set_config_value(cfg->cfg, key, value); });
}

hpan_status hpan_config_set_real(hpan_config* cfg, const char* key, double value) {
    if (!cfg || !key) return invalid("null argument");
    return guarded([&] { set_config_value(cfg->cfg, key, value); });
}

hpan_status hpan_config_set_bool(hpan_config* cfg, const char* key, int value) {
    if (!cfg || !key) return invalid("null argument");
    return guarded([&] { set_config_value(cfg->cfg, key, value != 0); });
}

hpan_status hpan_config_set_string(hpan_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return invalid("null argument");
    return guarded([&] { set_config_value(cfg->cfg, key, std::string(value)); });
}

hpan_status hpan_config_get_int(const hpan_config* cfg, const char* key, int64_t* value) {
    if (!cfg || !key || !value) return invalid("null argument");
    return guarded([&] { *value = get_config_int(cfg->cfg, key); });
}

hpan_status hpan_config_get_real(const hpan_config* cfg, const char* key, double* value) {
    if (!cfg || !key || !value) return invalid("null argument");
    return guarded([&] { *value = get_config_real(cfg->cfg, key); });
}

void hpan_config_destroy(hpan_config* cfg) { delete cfg; }

hpan_status hpan_tensor_create(const uint64_t* dims, uint32_t rank, const float* values,
                               hpan_tensor** out) {
    if (!dims || !values || !out) return invalid("null argument");
    return guarded([&] {
        auto* t = new hpan_tensor();
        t->data.dims.assign(dims, dims + rank);
        t->data.values.assign(values, values + t->data.numel());
        *out = t;
    });
}

hpan_status hpan_tensor_load(const char* path, hpan_tensor** out) {
    if (!path || !out) return invalid("null argument");
    return guarded([&] {
        auto* t = new hpan_tensor();
        try {
            t->data = read_tensor_data(path);
        } catch (...) {
            delete t;
            throw;
        }
        *out = t;
    });
}

hpan_status hpan_tensor_save(const hpan_tensor* tensor, const char* path) {
    if (!tensor || !path) return invalid("null argument");
    return guarded([&] { write_tensor_data(path, tensor->data); });
}

uint32_t hpan_tensor_rank(const hpan_tensor* tensor) {
    return tensor ? uint32_t(tensor->data.dims.size()) : 0;
}

uint64_t hpan_tensor_dim(const hpan_tensor* tensor, uint32_t axis) {
    if (!tensor || axis >= tensor->data.dims.size()) return 0;
    return tensor->data.dims[axis];
}

uint64_t hpan_tensor_numel(const hpan_tensor* tensor) { return tensor ? tensor->data.numel() : 0; }

const float* hpan_tensor_data(const hpan_tensor* tensor) {
    return tensor ? tensor->data.values.data() : nullptr;
}

void hpan_tensor_destroy(hpan_tensor* tensor) { delete tensor; }

hpan_status hpan_episode_synth(const hpan_config* cfg, uint64_t seed, hpan_episode** out) {
    if (!cfg || !out) return invalid("null argument");
    return guarded([&] {
        auto* e = new hpan_episode();
        try {
            e->episode = synth_episode(cfg->cfg.synth_config(), seed);
        } catch (...) {
            delete e;
            throw;
        }
        *out = e;
    });
}

hpan_status hpan_episode_load(const char* dir, hpan_episode** out) {
    if (!dir || !out) return invalid("null argument");
    return guarded([&] {
        auto* e = new hpan_episode();
        try {
            e->episode = load_episode(dir);
        } catch (...) {
            delete e;
            throw;
        }
        *out = e;
    });
}

hpan_status hpan_episode_save(const hpan_episode* episode, const char* dir) {
    if (!episode || !dir) return invalid("null argument");
    return guarded([&] { save_episode(episode->episode, dir); });
}

int hpan_episode_k(const hpan_episode* episode) { return episode ? episode->episode.k() : 0; }
int hpan_episode_t(const hpan_episode* episode) { return episode ? episode->episode.t() : 0; }

void hpan_episode_destroy(hpan_episode* episode) { delete episode; }

hpan_status hpan_run_episode(const hpan_config* cfg, const hpan_episode* episode,
                             const char* out_dir, hpan_result** out) {
    if (!cfg || !episode || !out_dir || !out) return invalid("null argument");
    return guarded([&] {
        auto* r = new hpan_result();
        try {
            r->run = run_episode(cfg->cfg, episode->episode, out_dir);
        } catch (...) {
            delete r;
            throw;
        }
        *out = r;
    });
}

hpan_status hpan_result_metric(const hpan_result* result, const char* name, double* value) {
    if (!result || !name || !value) return invalid("null argument");
    const EpisodeRun& run = result->run;
    std::string key(name);
    if (key == "j_mean" && run.eval) {
        *value = run.eval->j_mean;
        return HPAN_OK;
    }
    if (key == "f_mean" && run.eval) {
        *value = run.eval->f_mean;
        return HPAN_OK;
    }
    if (key == "pseudo_j_mean" && run.pseudo_eval) {
        *value = run.pseudo_eval->j_mean;
        return HPAN_OK;
    }
    if (run.losses) {
        if (key == "loss_ce") {
            *value = run.losses->ce;
            return HPAN_OK;
        }
        if (key == "loss_iou") {
            *value = run.losses->iou;
            return HPAN_OK;
        }
        if (key == "loss_proto") {
            *value = run.losses->proto;
            return HPAN_OK;
        }
        if (key == "loss_total") {
            *value = run.losses->total;
            return HPAN_OK;
        }
    }
    return invalid("unknown metric or episode lacks ground truth");
}

hpan_status hpan_result_frame_metric(const hpan_result* result, const char* name, size_t frame,
                                     double* value) {
    if (!result || !name || !value) return invalid("null argument");
    const EpisodeRun& run = result->run;
    if (!run.eval || frame >= run.eval->j_per_frame.size())
        return invalid("frame out of range or episode lacks ground truth");
    std::string key(name);
    if (key == "j") {
        *value = run.eval->j_per_frame[frame];
        return HPAN_OK;
    }
    if (key == "f") {
        *value = run.eval->f_per_frame[frame];
        return HPAN_OK;
    }
    return invalid("unknown frame metric");
}

int hpan_result_has_metrics(const hpan_result* result) {
    return result && result->run.eval ? 1 : 0;
}

void hpan_result_destroy(hpan_result* result) { delete result; }

hpan_status hpan_gradcheck(const hpan_config* cfg, hpan_gradcheck_report** out) {
    if (!cfg || !out) return invalid("null argument");
    return guarded([&] {
        auto report = gradcheck(cfg->cfg.seed, cfg->cfg.baseline);
        auto* r = new hpan_gradcheck_report();
        r->entries.assign(report.begin(), report.end());
        *out = r;
    });
}

size_t hpan_gradcheck_count(const hpan_gradcheck_report* report) {
    return report ? report->entries.size() : 0;
}

const char* hpan_gradcheck_name(const hpan_gradcheck_report* report, size_t index) {
    if (!report || index >= report->entries.size()) return nullptr;
    return report->entries[index].first.c_str();
}

double hpan_gradcheck_max_rel_err(const hpan_gradcheck_report* report, size_t index) {
    if (!report || index >= report->entries.size()) return -1;
    return report->entries[index].second.max_rel_err;
}

int hpan_gradcheck_pass(const hpan_gradcheck_report* report, size_t index) {
    if (!report || index >= report->entries.size()) return 0;
    return report->entries[index].second.pass ? 1 : 0;
}

int hpan_gradcheck_all_pass(const hpan_gradcheck_report* report) {
    if (!report) return 0;
    for (const auto& [name, entry] : report->entries)
        if (!entry.pass) return 0;
    return 1;
}

void hpan_gradcheck_report_destroy(hpan_gradcheck_report* report) { delete report; }

hpan_status hpan_train_demo(const hpan_config* cfg, const char* csv_path,
                            hpan_train_summary* summary) {
    if (!cfg || !csv_path) return invalid("null argument");
    return guarded([&] {
        const RunConfig& c = cfg->cfg;
        std::vector<Episode> episodes;
        for (int e = 0; e < c.train_episodes; ++e)
            episodes.push_back(synth_episode(c.train_synth_config(), mix_seed(c.seed, 0x1e9 + e)));
        TrainResult result = train_demo(episodes, c.train_steps, c.learning_rate, c.seed, c);
        write_train_csv(result.trajectory, csv_path);
        if (summary) {
            summary->initial_total = result.trajectory.front().total;
            summary->final_total = result.trajectory.back().total;
            summary->final_proto_mean = result.final_proto_mean;
        }
    });
}

hpan_status hpan_bench(const hpan_config* cfg, const char* csv_path) {
    if (!cfg || !csv_path) return invalid("null argument");
    return guarded([&] { bench::write_bench_csv(bench::run_bench(cfg->cfg), csv_path); });
}

hpan_status hpan_metrics_dirs(const char* pred_dir, const char* gt_dir, const char* csv_path,
                              double* j_mean, double* f_mean) {
    if (!pred_dir || !gt_dir) return invalid("null argument");
    return guarded([&] {
        metrics::EvalResult eval = metrics_dirs(pred_dir, gt_dir);
        if (csv_path) write_metrics_csv(eval, csv_path);
        if (j_mean) *j_mean = eval.j_mean;
        if (f_mean) *f_mean = eval.f_mean;
    });
}

hpan_status hpan_selftest(const char* scratch_dir) {
    if (!scratch_dir) return invalid("null argument");
    bool pass = false;
    hpan_status st = guarded([&] { pass = selftest(scratch_dir); });
    if (st != HPAN_OK) return st;
    if (!pass) {
        g_last_error = "self-test failures reported above";
        return HPAN_ERR_INTERNAL;
    }
    return HPAN_OK;
}

}  // extern "C"
