#pragma once

#include <map>
#include <string>
#include <vector>

#include "bpam.hpp"
#include "linalg.hpp"

namespace hpan::head {

// Minimal decode head standing in for the full decoder: a per-pixel linear
// map over the 2C holistic-attention channels, sigmoid, then bilinear
// upsampling to the output resolution. Skip features are not consumed.
struct HeadParams {
    Vector proj;  // 2C
    double bias = 0;
};

struct DecodeCache {
    std::vector<Vector> logits_l3;  // per frame, H3*W3
    std::vector<Vector> probs_l3;
};

// Probabilities per frame at (out_h, out_w); out dims must be >= grid dims.
std::vector<Vector> decode(const bpam::HolisticAttention& ah, const HeadParams& params, int out_h,
                           int out_w, DecodeCache* cache = nullptr);

struct DecodeGrads {
    Vector d_proj;
    double d_bias = 0;
    Matrix d_co, d_self;  // token-matrix shaped
};

DecodeGrads decode_backward(const bpam::HolisticAttention& ah, const HeadParams& params, int out_h,
                            int out_w, const DecodeCache& cache,
                            const std::vector<Vector>& d_preds);

// Bilinear resampling of a dense field (half-pixel centers, clamped) and its
// transpose; shared by decode and its backward pass.
Vector bilinear_resample(const Vector& src, int h_in, int w_in, int h_out, int w_out);
Vector bilinear_resample_transpose(const Vector& d_dst, int h_in, int w_in, int h_out, int w_out);

// ---------------------------------------------------------------------------
// Losses. Predictions are probabilities in (0,1); ground truth is binary.
// ---------------------------------------------------------------------------

constexpr double kCeClamp = 1e-7;  // predictions clamped to [1e-7, 1-1e-7] inside the logs

// mean binary cross-entropy over all T*H*W pixels
double ce_loss(const std::vector<Vector>& pred, const std::vector<Vector>& gt);
std::vector<Vector> ce_loss_backward(const std::vector<Vector>& pred,
                                     const std::vector<Vector>& gt);

// 1 - mean over frames of soft IoU; a frame with zero union counts as IoU 1
double iou_loss(const std::vector<Vector>& pred, const std::vector<Vector>& gt);
std::vector<Vector> iou_loss_backward(const std::vector<Vector>& pred,
                                      const std::vector<Vector>& gt);

// Mask-level conveniences (used by the CLI and tests).
double ce_loss(const std::vector<Mask>& pred, const std::vector<Mask>& gt);
double iou_loss(const std::vector<Mask>& pred, const std::vector<Mask>& gt);

// lambda / (N(N-1)) * sum over ordered pairs i != j of cos(p_i, p_j)
double proto_loss(const Matrix& p_h, double lambda_proto);
Matrix proto_loss_backward(const Matrix& p_h, double lambda_proto);

struct LossWeights {
    double lambda_ce = 5;
    double lambda_iou = 1;
    double lambda_proto = 1;
};

struct GradCheckEntry {
    bool pass = false;
    double max_rel_err = 0;
};

struct LossReport {
    double ce = 0;
    double iou = 0;
    double proto = 0;
    double total = 0;
    std::map<std::string, GradCheckEntry> grad_check;
};

// total = lambda_ce*ce + lambda_iou*iou + lambda_proto*proto. The proto field
// carries the raw mean pairwise cosine (proto_loss with lambda 1) so the
// weighted-sum identity holds without double-scaling.
LossReport total_loss(double ce, double iou, double proto, const LossWeights& weights);

}  // namespace hpan::head
