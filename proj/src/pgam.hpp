#pragma once

#include <utility>
#include <vector>

#include "linalg.hpp"
#include "tensor.hpp"

namespace hpan::pgam {

constexpr double kCosineEpsilon = 1e-8;   // Eq. 5 guard
constexpr double kEdgeDenomEpsilon = 1e-8;  // edge-weight normalization guard
constexpr double kDefaultForegroundThreshold = 0.5;  // tau_fg for query clustering

// cosine similarity <s,t> / (|s||t| + eps); zero vectors allowed.
double cosine_similarity(const Vector& s, const Vector& t);

// d cos(u,v) / du and / dv at (u,v); the |u|=0 direction term is dropped.
void cosine_similarity_backward(const Vector& u, const Vector& v, double d_out, Vector& d_u,
                                Vector& d_v);

// ---------------------------------------------------------------------------
// Pseudo-mask generation. Per query frame t and pixel j,
//   raw_j = max over support foreground pixels u of cos(fs_u, fq_j)
// followed by per-frame min-max normalization to [0,1]. A frame whose raw
// values are all equal normalizes to all zeros. Only support pixels with
// nonzero mask weight enter the max.
// ---------------------------------------------------------------------------

struct PseudoMasks {
    std::vector<Vector> frames;       // normalized values, one HW4 vector per frame
    std::vector<Vector> raw;          // pre-normalization max similarities
    std::vector<std::vector<int>> argmax_support;  // per frame/pixel: index into fg_support
    std::vector<int> argmin_pixel, argmax_pixel;   // per frame extremes (first occurrence)
    std::vector<bool> degenerate;
    std::vector<std::pair<int, int>> fg_support;   // (support image k, pixel i) with mask > 0
};

// query_l4 / support_l4: pixel matrices (HW4 x C); support_mask_l4: HW4 each.
PseudoMasks compute_pseudo_masks_dense(const std::vector<Matrix>& query_l4,
                                       const std::vector<Matrix>& support_l4,
                                       const std::vector<Vector>& support_mask_l4);

// FeatureMap/Mask convenience wrapper (masks already at l4 dims).
std::vector<Mask> compute_pseudo_masks(const std::vector<FeatureMap>& query_l4,
                                       const std::vector<FeatureMap>& support_l4,
                                       const std::vector<Mask>& support_masks_l4);

struct PseudoMaskGrads {
    std::vector<Matrix> d_query;    // per frame, HW4 x C
    std::vector<Matrix> d_support;  // per image, HW4 x C (zero at background)
};

// Subgradient at fixed argmax/argmin selections (exact wherever they are
// locally unique).
PseudoMaskGrads pseudo_masks_backward(const PseudoMasks& fwd,
                                      const std::vector<Matrix>& query_l4,
                                      const std::vector<Matrix>& support_l4,
                                      const std::vector<Vector>& support_mask_l4,
                                      const std::vector<Vector>& d_frames);

// ---------------------------------------------------------------------------
// 1x1 projection plus masking: out = (F * weight + bias) .* mask.
// ---------------------------------------------------------------------------

struct ProjectionParams {
    Matrix weight;  // C_in x C
    Vector bias;    // C
};

Matrix project_and_mask(const Matrix& feats, const Vector& mask, const ProjectionParams& params);

struct ProjectionGrads {
    Matrix d_weight;
    Vector d_bias;
    Matrix d_feats;
};

ProjectionGrads project_and_mask_backward(const Matrix& feats, const Vector& mask,
                                          const ProjectionParams& params, const Matrix& d_out);

// ---------------------------------------------------------------------------
// k-means: k-means++ seeding from the given seed, Lloyd iterations with
// squared Euclidean distance until the assignment reaches a fixpoint or 50
// iterations. Ties assign to the lowest centroid index. Runs a fixed number
// of seeded restarts and keeps the lowest objective. When the points cannot
// supply k distinct centers, surplus centroids duplicate existing points and
// `duplicated` is set.
// ---------------------------------------------------------------------------

constexpr int kKmeansMaxIterations = 50;
constexpr int kKmeansRestarts = 8;

struct KmeansResult {
    Matrix centroids;  // k x C
    std::vector<int> assignment;
    double objective = 0;
    std::vector<double> objective_trace;  // seeding objective, then one per Lloyd iteration
    bool duplicated = false;
    int iterations = 0;
};

KmeansResult kmeans(const Matrix& points, int k, uint64_t seed);

// ---------------------------------------------------------------------------
// Prototype sets.
// ---------------------------------------------------------------------------

enum class PrototypeOrigin { support_raw, query_raw, support_enhanced, query_enhanced, holistic };

const char* prototype_origin_name(PrototypeOrigin origin);

struct PrototypeSet {
    Matrix prototypes;  // N x C
    PrototypeOrigin origin = PrototypeOrigin::support_raw;
    int n_per_unit = 0;  // N_p
    bool duplicated = false;
};

// Per support image: k-means over that image's foreground pixels (nonzero
// mask weight), N_p centroids each, concatenated in image order.
PrototypeSet cluster_support_prototypes(const std::vector<Matrix>& masked_feats,
                                        const std::vector<Vector>& masks, int n_p, uint64_t seed);

// One pooled k-means with k = N_p*T over all query pixels whose pseudo-mask
// value reaches tau_fg; vectors carry their soft mask weight already.
PrototypeSet cluster_query_prototypes(const std::vector<Matrix>& masked_feats,
                                      const std::vector<Vector>& pseudo_masks, int n_p,
                                      double tau_fg, uint64_t seed);

// ---------------------------------------------------------------------------
// Graph attention over prototype sets:
//   Key = P_src W_k, Query = P_tgt W_q, Value = P_src W_v
//   phi(i,j) = cos(Key_i, Query_j) / (sum_j' cos(Key_i, Query_j') + eps)
//   Out_j = Query_j + lambda * sum_i phi(i,j) Value_i
// `value_from_target` switches the value map to P_tgt (the literal equation,
// well-typed only when both sets have equal size).
// ---------------------------------------------------------------------------

struct GraphAttentionParams {
    Matrix w_key, w_query, w_value;  // C x C
    double lambda_self = 0.8;
    double lambda_co = 0.2;
};

struct GraphAttentionCache {
    Matrix key, query, value;
    Matrix cos;  // N_src x N_tgt
    Vector row_sum;
    Matrix phi;
    Matrix output;
};

Matrix graph_attention(const Matrix& p_tgt, const Matrix& p_src, double lambda,
                       const GraphAttentionParams& params, GraphAttentionCache* cache = nullptr,
                       bool value_from_target = false);

// PrototypeSet wrapper; output keeps n_per_unit of the target set.
PrototypeSet graph_attention(const PrototypeSet& tgt, const PrototypeSet& src, double lambda,
                             const GraphAttentionParams& params, PrototypeOrigin out_origin);

struct GraphAttentionGrads {
    Matrix d_w_key, d_w_query, d_w_value;
    Matrix d_tgt, d_src;
};

GraphAttentionGrads graph_attention_backward(const Matrix& p_tgt, const Matrix& p_src,
                                             double lambda, const GraphAttentionParams& params,
                                             const GraphAttentionCache& cache, const Matrix& d_out,
                                             bool value_from_target = false);

// ---------------------------------------------------------------------------
// Prototype enhancement: two graph self-attentions and one graph
// co-attention with independent parameter sets,
//   Ps' = G(Ps, Ps, lambda_self), Pq' = G(Pq, Pq, lambda_self),
//   Ph  = G(Ps', Pq', lambda_co).
// ---------------------------------------------------------------------------

struct EnhanceParams {
    GraphAttentionParams support_self, query_self, co;
};

struct EnhanceCache {
    GraphAttentionCache support, query, co;
    Matrix p_bar_s, p_bar_q;
};

PrototypeSet enhance_prototypes(const PrototypeSet& p_s, const PrototypeSet& p_q,
                                const EnhanceParams& params, EnhanceCache* cache = nullptr,
                                bool value_from_target = false);

struct EnhanceGrads {
    GraphAttentionGrads support, query, co;
    Matrix d_p_s, d_p_q;
};

EnhanceGrads enhance_prototypes_backward(const PrototypeSet& p_s, const PrototypeSet& p_q,
                                         const EnhanceParams& params, const EnhanceCache& cache,
                                         const Matrix& d_p_h, bool value_from_target = false);

}  // namespace hpan::pgam
