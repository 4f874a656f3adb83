#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "bpam.hpp"
#include "cost.hpp"
#include "linalg.hpp"

namespace hpan::verify {

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h at 64-bit.
// Evaluations must stay finite; a non-finite value reports its index.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                        double step);

// ---------------------------------------------------------------------------
// Dense re-evaluation oracles. Each is coded with explicit loops and its own
// similarity/softmax arithmetic, independent of the implementation path it
// cross-checks.
// ---------------------------------------------------------------------------

Matrix dense_attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v,
                              const bpam::AttentionBlockParams& params);

Matrix graph_attention_oracle(const Matrix& p_tgt, const Matrix& p_src, double lambda,
                              const pgam::GraphAttentionParams& params,
                              bool value_from_target = false);

double ce_loss_oracle(const std::vector<Vector>& pred, const std::vector<Vector>& gt);
double iou_loss_oracle(const std::vector<Vector>& pred, const std::vector<Vector>& gt);
double proto_loss_oracle(const Matrix& p_h, double lambda_proto);

// Naive O(B^2) boundary F-measure for cross-checking metrics::contour_accuracy.
double contour_accuracy_oracle(const Mask& pred, const Mask& gt, int tolerance_px);

// ---------------------------------------------------------------------------
// Full-rank attention baseline: A(Tq, Ts, Ts) computed directly with exact
// MAC counting. Desk-scale only; the guard refuses runs whose score-matrix
// MAC count n_q*n_k*C exceeds kFullAttentionGuardMacs.
// ---------------------------------------------------------------------------

constexpr uint64_t kFullAttentionGuardMacs = 2'000'000'000ull;

inline uint64_t full_attention_score_macs(uint64_t n_q, uint64_t n_k, uint64_t c) {
    return n_q * n_k * c;
}

inline bool full_attention_guard_exceeded(uint64_t n_q, uint64_t n_k, uint64_t c) {
    return full_attention_score_macs(n_q, n_k, c) > kFullAttentionGuardMacs;
}

std::pair<Matrix, CostCounter> full_attention_oracle(const Matrix& t_q, const Matrix& t_s,
                                                     const bpam::AttentionBlockParams& params);

// ---------------------------------------------------------------------------
// k-means validation oracle: exact nearest-centroid assignment (ties to the
// lowest centroid index) and summed squared distances.
// ---------------------------------------------------------------------------

struct KmeansOracleResult {
    double objective = 0;
    std::vector<int> assignment;
};

KmeansOracleResult kmeans_oracle(const Matrix& points, const Matrix& centroids);

// Best objective over all centroid pairs chosen from the points (k = 2).
double exhaustive_pair_objective(const Matrix& points);

// ---------------------------------------------------------------------------
// Closed-form cost model. Per attention call with n_q query rows, n_k
// key/value rows and C channels:
//   projection MACs  = C^2 (n_q + 2 n_k)            (three linear maps)
//   interaction MACs = n_q n_k (2C + 2)             (scores, scale, softmax
//                                                    normalization, aggregation)
// Factored = co + self prototype attention (inner and outer blocks each),
// full = the pixel-level co and self calls they replace. N = N_p * K.
// ---------------------------------------------------------------------------

struct CostModel {
    uint64_t factored_projection = 0;
    uint64_t factored_interaction = 0;
    uint64_t full_projection = 0;
    uint64_t full_interaction = 0;

    uint64_t factored_total() const { return factored_projection + factored_interaction; }
    uint64_t full_total() const { return full_projection + full_interaction; }
};

CostModel cost_model(int k_support, int t_query, int height, int width, int n_p, int channels);

}  // namespace hpan::verify
