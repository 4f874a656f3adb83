#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bpam.hpp"
#include "episode.hpp"
#include "head.hpp"
#include "metrics.hpp"
#include "pgam.hpp"

namespace hpan {

// Flat run configuration mirrored by the JSON config file (same key names).
struct RunConfig {
    int k_support = 5;
    int t_query = 5;
    int n_p = 5;
    int channels = 256;     // 1x1 projection output dim C
    int channels_in = 256;  // synthetic encoder feature dim
    int l3_height = 16;
    int l3_width = 28;
    int image_height = 0;  // 0 -> 4x l3
    int image_width = 0;
    double lambda_self = 0.8;
    double lambda_co = 0.2;
    double lambda_ce = 5;
    double lambda_iou = 1;
    double lambda_proto = 1;
    double tau_fg = 0.5;
    uint64_t seed = 42;
    double separation = 10.0;
    int train_steps = 200;
    double learning_rate = 1e-3;
    int train_episodes = 2;
    int train_l3_height = 8;  // train-demo episodes use a smaller grid
    int train_l3_width = 14;
    int jobs = 1;
    int bench_repetitions = 10;
    bool baseline = false;
    bool literal_graph_value = false;
    std::string episode_dir;
    std::string out_dir = "hpan-out";

    head::LossWeights weights() const { return {lambda_ce, lambda_iou, lambda_proto}; }
    SynthConfig synth_config() const;        // run-episode scale
    SynthConfig train_synth_config() const;  // train-demo scale
    void validate() const;
};

RunConfig load_config(const std::string& json_path);

// Typed config access by JSON key name (unknown keys are config errors).
void set_config_value(RunConfig& cfg, const std::string& key, int64_t value);
void set_config_value(RunConfig& cfg, const std::string& key, double value);
void set_config_value(RunConfig& cfg, const std::string& key, bool value);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
int64_t get_config_int(const RunConfig& cfg, const std::string& key);
double get_config_real(const RunConfig& cfg, const std::string& key);

// ---------------------------------------------------------------------------
// Learnable parameters: the Eq.7 projection, three graph-attention blocks,
// four BPAM attention blocks, and the decode head.
// ---------------------------------------------------------------------------

struct HpanParams {
    pgam::ProjectionParams projection;
    pgam::EnhanceParams graph;
    bpam::BpamParams bpam;
    head::HeadParams head;
};

// Weight matrices drawn uniformly from [-1/sqrt(C), 1/sqrt(C)]; biases and
// the head start at zero.
HpanParams init_params(uint64_t seed, int channels_in, int channels, double lambda_self,
                       double lambda_co);
HpanParams zero_like(const HpanParams& params);

struct ParamGroupInfo {
    std::string name;
    int offset = 0;
    int size = 0;
};

std::vector<ParamGroupInfo> param_groups(int channels_in, int channels);
Vector flatten_params(const HpanParams& params);
void unflatten_params(const Vector& flat, HpanParams& params);
void axpy_params(HpanParams& dst, const HpanParams& src, double scale);  // dst += scale*src

// ---------------------------------------------------------------------------
// Episode tensors at 64-bit with masks resampled to the feature grids.
// ---------------------------------------------------------------------------

struct EpisodeTensors {
    std::vector<Matrix> s_l3, s_l4, q_l3, q_l4;  // pixel matrices, HW x C_in
    std::vector<Vector> s_mask_l3, s_mask_l4;    // binary, nearest-resampled
    std::vector<Vector> gt;                      // image resolution, empty if absent
    int h3 = 0, w3 = 0, h4 = 0, w4 = 0;
    int img_h = 0, img_w = 0;
    int c_in = 0;
    bool has_gt = false;
};

EpisodeTensors to_tensors(const Episode& episode);

// Raw prototypes held fixed (stop-gradient through clustering; also used to
// keep finite-difference probes consistent with the analytic backward pass).
struct FrozenPrototypes {
    pgam::PrototypeSet p_s, p_q;
};

struct ForwardArtifacts {
    pgam::PseudoMasks pseudo;        // l4
    std::vector<Vector> pseudo_l3;   // bilinearly upsampled
    Matrix t_s, t_q;                 // stacked masked tokens
    pgam::PrototypeSet p_s, p_q, p_h;
    pgam::EnhanceCache enhance_cache;
    bpam::NestedAttentionCache co_cache, self_cache;
    Matrix a_co, a_self;
    bpam::HolisticAttention a_h;
    head::DecodeCache decode_cache;
    std::vector<Vector> preds;  // image-resolution probabilities
    head::LossReport losses;
    bool has_losses = false;
};

// cfg.baseline replaces PGAM enhancement by raw middle-frame prototypes and
// zeroes the self-attention branch.
ForwardArtifacts forward(const EpisodeTensors& ep, const HpanParams& params, const RunConfig& cfg,
                         const FrozenPrototypes* frozen = nullptr, CostCounter* counter = nullptr);

// Gradients of the weighted total loss w.r.t. every parameter. Requires
// ground truth. Raw prototypes are treated as constants.
HpanParams backward(const EpisodeTensors& ep, const HpanParams& params, const RunConfig& cfg,
                    const ForwardArtifacts& fwd);

// ---------------------------------------------------------------------------
// Episode run: full pipeline, artifact files, metrics.
// ---------------------------------------------------------------------------

struct EpisodeRun {
    std::vector<Mask> preds;
    std::vector<Mask> pseudo_masks;  // l4
    pgam::PrototypeSet p_h;
    std::optional<metrics::EvalResult> eval;
    std::optional<head::LossReport> losses;
    std::optional<metrics::EvalResult> pseudo_eval;  // pseudo-mask vs gt at l4
};

// Writes predictions, pseudo-masks, prototype sets, run.json, and (with
// ground truth) metrics.csv under out_dir.
EpisodeRun run_episode(const RunConfig& cfg, const Episode& episode, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Desk-scale training demo: plain gradient descent with analytic gradients,
// averaged over episodes, deterministic given the seed.
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<head::LossReport> trajectory;  // loss at the start of each step
    HpanParams params;                         // final parameters
    double final_proto_mean = 0;  // mean pairwise holistic-prototype cosine, after training
};

TrainResult train_demo(const std::vector<Episode>& episodes, int steps, double lr, uint64_t seed,
                       const RunConfig& cfg);
void write_train_csv(const std::vector<head::LossReport>& trajectory, const std::string& path);

// ---------------------------------------------------------------------------
// Gradient checking: finite differences against the analytic backward pass
// at a seeded random point, on a reduced-size episode (the formulas carry no
// dimension dependence). Returns one entry per parameter group plus the
// three standalone loss checks.
// ---------------------------------------------------------------------------

std::map<std::string, head::GradCheckEntry> gradcheck(uint64_t seed, bool baseline = false);
constexpr double kGradCheckTolerance = 1e-3;
constexpr double kGradCheckStep = 1e-4;

// Quick library self-checks; prints one line per check, returns overall pass.
bool selftest(const std::string& scratch_dir);

// Per-frame metric CSV: header `frame,j,f`.
void write_metrics_csv(const metrics::EvalResult& eval, const std::string& path);

// Evaluates all *.hptn masks present under both directories, matched by
// filename, in sorted order.
metrics::EvalResult metrics_dirs(const std::string& pred_dir, const std::string& gt_dir);

}  // namespace hpan
