#pragma once

#include <vector>

#include "cost.hpp"
#include "linalg.hpp"
#include "pgam.hpp"

namespace hpan::bpam {

// Single-head scaled dot-product attention with a skip connection:
//   A(Q,K,V) = Q Wq + rowsoftmax((Q Wq)(K Wk)^T / sqrt(C)) (V Wv)
// Softmax subtracts the row maximum before exponentiation.
struct AttentionBlockParams {
    Matrix w_query, w_key, w_value;  // C x C
};

struct AttentionCache {
    Matrix q_proj, k_proj, v_proj;
    Matrix scores;  // scaled logits
    Matrix probs;
    Matrix output;
};

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 const AttentionBlockParams& params, AttentionCache* cache = nullptr,
                 CostCounter* counter = nullptr);

struct AttentionGrads {
    Matrix d_w_query, d_w_key, d_w_value;
    Matrix d_q, d_k, d_v;
};

AttentionGrads attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const AttentionBlockParams& params, const AttentionCache& cache,
                                  const Matrix& d_out);

// Token layout bookkeeping for reshaping between (frames, H, W) grids and
// row-per-pixel token matrices (row = frame*H*W + y*W + x).
struct TokenLayout {
    int frames = 0;
    int height = 0;
    int width = 0;
    int rows() const { return frames * height * width; }
};

// ---------------------------------------------------------------------------
// Prototype co-attention  A_co   = A(Tq, Ph, A(Ph, Ts, Ts))
// Prototype self-attention A_self = A(Tq, Ph, A(Ph, Tq, Tq))
// Inner and outer blocks use independent parameter sets.
// ---------------------------------------------------------------------------

struct NestedAttentionCache {
    AttentionCache inner, outer;
};

Matrix prototype_co_attention(const Matrix& t_q, const Matrix& t_s, const Matrix& p_h,
                              const AttentionBlockParams& inner, const AttentionBlockParams& outer,
                              NestedAttentionCache* cache = nullptr, CostCounter* counter = nullptr);

Matrix prototype_self_attention(const Matrix& t_q, const Matrix& p_h,
                                const AttentionBlockParams& inner,
                                const AttentionBlockParams& outer,
                                NestedAttentionCache* cache = nullptr,
                                CostCounter* counter = nullptr);

// PrototypeSet overloads enforce the holistic-origin precondition.
Matrix prototype_co_attention(const Matrix& t_q, const Matrix& t_s, const pgam::PrototypeSet& p_h,
                              const AttentionBlockParams& inner, const AttentionBlockParams& outer,
                              NestedAttentionCache* cache = nullptr, CostCounter* counter = nullptr);

Matrix prototype_self_attention(const Matrix& t_q, const pgam::PrototypeSet& p_h,
                                const AttentionBlockParams& inner,
                                const AttentionBlockParams& outer,
                                NestedAttentionCache* cache = nullptr,
                                CostCounter* counter = nullptr);

struct NestedAttentionGrads {
    AttentionGrads inner, outer;
    Matrix d_t_q, d_t_s, d_p_h;  // d_t_s unused for self-attention
};

NestedAttentionGrads prototype_co_attention_backward(const Matrix& t_q, const Matrix& t_s,
                                                     const Matrix& p_h,
                                                     const AttentionBlockParams& inner,
                                                     const AttentionBlockParams& outer,
                                                     const NestedAttentionCache& cache,
                                                     const Matrix& d_out);

NestedAttentionGrads prototype_self_attention_backward(const Matrix& t_q, const Matrix& p_h,
                                                       const AttentionBlockParams& inner,
                                                       const AttentionBlockParams& outer,
                                                       const NestedAttentionCache& cache,
                                                       const Matrix& d_out);

// ---------------------------------------------------------------------------
// Holistic attention: both token matrices reshaped to T x C x H x W and
// concatenated along channels, co-attention first.
// ---------------------------------------------------------------------------

struct HolisticAttention {
    TokenLayout layout;
    Matrix co, self;  // each layout.rows() x C

    int channels() const { return 2 * int(co.cols()); }
    // value at (frame, channel in [0, 2C), y, x)
    double at(int frame, int channel, int y, int x) const;
};

HolisticAttention holistic_attention(const Matrix& a_co, const Matrix& a_self,
                                     const TokenLayout& layout);

// Rank-4 (T, 2C, H, W) container view for serialization.
TensorData holistic_to_tensor(const HolisticAttention& ah);

struct BpamParams {
    AttentionBlockParams co_inner, co_outer, self_inner, self_outer;
};

}  // namespace hpan::bpam
