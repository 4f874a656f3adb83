/*
 * hpan — few-shot video object segmentation core (pseudo-masks, prototype
 * graph attention, bidirectional prototype attention, losses, J/F metrics)
 * behind a C ABI.
 *
 * All functions return hpan_status; HPAN_OK is 0. On failure,
 * hpan_last_error() carries a thread-local message. Objects are opaque
 * handles owned by the caller through the matching _destroy function.
 */
#ifndef HPAN_H
#define HPAN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hpan_status {
    HPAN_OK = 0,
    HPAN_ERR_IO = 1,
    HPAN_ERR_BAD_MAGIC = 2,
    HPAN_ERR_TRUNCATED = 3,
    HPAN_ERR_BAD_SHAPE = 4,
    HPAN_ERR_NON_FINITE = 5,
    HPAN_ERR_INVALID_VALUE = 6,
    HPAN_ERR_INVALID_ARGUMENT = 7,
    HPAN_ERR_CONFIG = 8,
    HPAN_ERR_NUMERIC = 9,
    HPAN_ERR_INTERNAL = 10,
} hpan_status;

const char* hpan_status_name(hpan_status status);
const char* hpan_last_error(void);
const char* hpan_version(void);

/* ------------------------------------------------------------------ */
/* Configuration (flat key/value set mirroring the JSON config file)  */
/* ------------------------------------------------------------------ */

typedef struct hpan_config hpan_config;

hpan_status hpan_config_create(hpan_config** out);
hpan_status hpan_config_load_json(hpan_config* cfg, const char* path);
hpan_status hpan_config_set_int(hpan_config* cfg, const char* key, int64_t value);
hpan_status hpan_config_set_real(hpan_config* cfg, const char* key, double value);
hpan_status hpan_config_set_bool(hpan_config* cfg, const char* key, int value);
hpan_status hpan_config_set_string(hpan_config* cfg, const char* key, const char* value);
hpan_status hpan_config_get_int(const hpan_config* cfg, const char* key, int64_t* value);
hpan_status hpan_config_get_real(const hpan_config* cfg, const char* key, double* value);
void hpan_config_destroy(hpan_config* cfg);

/* ------------------------------------------------------------------ */
/* Tensor container files (HPTN format, f32 little-endian)            */
/* ------------------------------------------------------------------ */

typedef struct hpan_tensor hpan_tensor;

hpan_status hpan_tensor_create(const uint64_t* dims, uint32_t rank, const float* values,
                               hpan_tensor** out);
hpan_status hpan_tensor_load(const char* path, hpan_tensor** out);
hpan_status hpan_tensor_save(const hpan_tensor* tensor, const char* path);
uint32_t hpan_tensor_rank(const hpan_tensor* tensor);
uint64_t hpan_tensor_dim(const hpan_tensor* tensor, uint32_t axis);
uint64_t hpan_tensor_numel(const hpan_tensor* tensor);
const float* hpan_tensor_data(const hpan_tensor* tensor);
void hpan_tensor_destroy(hpan_tensor* tensor);

/* ------------------------------------------------------------------ */
/* Episodes                                                            */
/* ------------------------------------------------------------------ */

typedef struct hpan_episode hpan_episode;

/* Synthetic episode from the config's K/T/dims/separation and the seed. */
hpan_status hpan_episode_synth(const hpan_config* cfg, uint64_t seed, hpan_episode** out);
hpan_status hpan_episode_load(const char* dir, hpan_episode** out);
hpan_status hpan_episode_save(const hpan_episode* episode, const char* dir);
int hpan_episode_k(const hpan_episode* episode);
int hpan_episode_t(const hpan_episode* episode);
void hpan_episode_destroy(hpan_episode* episode);

/* ------------------------------------------------------------------ */
/* Pipeline                                                            */
/* ------------------------------------------------------------------ */

typedef struct hpan_result hpan_result;

/* Runs the full pipeline on the episode and writes predictions,
 * pseudo-masks, prototype files, run.json and (with ground truth)
 * metrics.csv under out_dir. */
hpan_status hpan_run_episode(const hpan_config* cfg, const hpan_episode* episode,
                             const char* out_dir, hpan_result** out);

/* Named scalars: "j_mean", "f_mean", "pseudo_j_mean", "loss_ce",
 * "loss_iou", "loss_proto", "loss_total". Metrics and losses exist only
 * when the episode carries ground truth. */
hpan_status hpan_result_metric(const hpan_result* result, const char* name, double* value);
hpan_status hpan_result_frame_metric(const hpan_result* result, const char* name, size_t frame,
                                     double* value);
int hpan_result_has_metrics(const hpan_result* result);
void hpan_result_destroy(hpan_result* result);

/* ------------------------------------------------------------------ */
/* Gradient check                                                      */
/* ------------------------------------------------------------------ */

typedef struct hpan_gradcheck_report hpan_gradcheck_report;

/* Finite differences against every analytic gradient at a seeded random
 * point (reduced desk-scale dims). */
hpan_status hpan_gradcheck(const hpan_config* cfg, hpan_gradcheck_report** out);
size_t hpan_gradcheck_count(const hpan_gradcheck_report* report);
const char* hpan_gradcheck_name(const hpan_gradcheck_report* report, size_t index);
double hpan_gradcheck_max_rel_err(const hpan_gradcheck_report* report, size_t index);
int hpan_gradcheck_pass(const hpan_gradcheck_report* report, size_t index);
int hpan_gradcheck_all_pass(const hpan_gradcheck_report* report);
void hpan_gradcheck_report_destroy(hpan_gradcheck_report* report);

/* ------------------------------------------------------------------ */
/* Training demo, benchmark, metrics, self-test                        */
/* ------------------------------------------------------------------ */

typedef struct hpan_train_summary {
    double initial_total;
    double final_total;
    double final_proto_mean; /* mean pairwise holistic-prototype cosine */
} hpan_train_summary;

/* Gradient-descent demo on synthetic episodes; writes the per-step
 * trajectory CSV (step,ce,iou,proto,total). */
hpan_status hpan_train_demo(const hpan_config* cfg, const char* csv_path,
                            hpan_train_summary* summary);

/* Attention cost sweeps; writes
 * config,K,T,Np,C,HW,mac_factored,mac_full,ns_factored,ns_full. */
hpan_status hpan_bench(const hpan_config* cfg, const char* csv_path);

/* Evaluates matching *.hptn masks from two directories; optional CSV. */
hpan_status hpan_metrics_dirs(const char* pred_dir, const char* gt_dir, const char* csv_path,
                              double* j_mean, double* f_mean);

/* Library self-checks; prints one line per check. Returns HPAN_OK only if
 * every check passes. Scratch files go under scratch_dir. */
hpan_status hpan_selftest(const char* scratch_dir);

#ifdef __cplusplus
}
#endif

#endif /* HPAN_H */
