#include "bpam.hpp"

namespace hpan::bpam {

namespace {

void count_projection(CostCounter* counter, uint64_t rows, uint64_t c) {
    if (!counter) return;
    counter->add_projection(rows * c * c, 8 * (rows * c + c * c + rows * c));
}

void count_interaction(CostCounter* counter, uint64_t n_q, uint64_t n_k, uint64_t c) {
    if (!counter) return;
    // scores n_q*n_k*c, 1/sqrt(C) scale n_q*n_k, softmax normalization
    // divisions n_q*n_k, aggregation n_q*n_k*c
    uint64_t macs = n_q * n_k * (2 * c + 2);
    uint64_t bytes = 8 * (2 * (n_q * c + n_k * c + n_q * n_k) + 2 * n_q * n_k);
    counter->add_interaction(macs, bytes);
}

}  // namespace

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 const AttentionBlockParams& params, AttentionCache* cache,
                 CostCounter* counter) {
    require(q.cols() == k.cols() && q.cols() == v.cols(), ErrorKind::bad_shape,
            "attention: token channel mismatch");
    require(k.rows() == v.rows(), ErrorKind::bad_shape,
            "attention: key/value row counts differ");
    const Eigen::Index c = q.cols();
    require(params.w_query.rows() == c && params.w_query.cols() == c &&
                params.w_key.rows() == c && params.w_key.cols() == c &&
                params.w_value.rows() == c && params.w_value.cols() == c,
            ErrorKind::bad_shape, "attention: parameter dims mismatch");

    AttentionCache local;
    AttentionCache& cc = cache ? *cache : local;
    cc.q_proj = q * params.w_query;
    cc.k_proj = k * params.w_key;
    cc.v_proj = v * params.w_value;
    count_projection(counter, uint64_t(q.rows()), uint64_t(c));
    count_projection(counter, uint64_t(k.rows()), uint64_t(c));
    count_projection(counter, uint64_t(v.rows()), uint64_t(c));

    const double scale = 1.0 / std::sqrt(double(c));
    cc.scores = (cc.q_proj * cc.k_proj.transpose()) * scale;
    cc.probs.resize(cc.scores.rows(), cc.scores.cols());
    for (Eigen::Index i = 0; i < cc.scores.rows(); ++i) {
        double row_max = cc.scores.row(i).maxCoeff();
        Eigen::ArrayXd e = (cc.scores.row(i).array() - row_max).exp();
        cc.probs.row(i) = e / e.sum();
    }
    cc.output = cc.q_proj + cc.probs * cc.v_proj;
    count_interaction(counter, uint64_t(q.rows()), uint64_t(k.rows()), uint64_t(c));
    return cc.output;
}

AttentionGrads attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const AttentionBlockParams& params, const AttentionCache& cache,
                                  const Matrix& d_out) {
    const double scale = 1.0 / std::sqrt(double(q.cols()));

    Matrix d_v_proj = cache.probs.transpose() * d_out;
    Matrix d_probs = d_out * cache.v_proj.transpose();

    Matrix d_scores(d_probs.rows(), d_probs.cols());
    for (Eigen::Index i = 0; i < d_probs.rows(); ++i) {
        double mixed = d_probs.row(i).dot(cache.probs.row(i));
        d_scores.row(i) = cache.probs.row(i).array() * (d_probs.row(i).array() - mixed);
    }

    Matrix d_q_proj = d_out + scale * (d_scores * cache.k_proj);
    Matrix d_k_proj = scale * (d_scores.transpose() * cache.q_proj);

    AttentionGrads g;
    g.d_w_query = q.transpose() * d_q_proj;
    g.d_w_key = k.transpose() * d_k_proj;
    g.d_w_value = v.transpose() * d_v_proj;
    g.d_q = d_q_proj * params.w_query.transpose();
    g.d_k = d_k_proj * params.w_key.transpose();
    g.d_v = d_v_proj * params.w_value.transpose();
    return g;
}

Matrix prototype_co_attention(const Matrix& t_q, const Matrix& t_s, const Matrix& p_h,
                              const AttentionBlockParams& inner, const AttentionBlockParams& outer,
                              NestedAttentionCache* cache, CostCounter* counter) {
    NestedAttentionCache local;
    NestedAttentionCache& cc = cache ? *cache : local;
    Matrix inner_out = attention(p_h, t_s, t_s, inner, &cc.inner, counter);
    return attention(t_q, p_h, inner_out, outer, &cc.outer, counter);
}

Matrix prototype_self_attention(const Matrix& t_q, const Matrix& p_h,
                                const AttentionBlockParams& inner,
                                const AttentionBlockParams& outer, NestedAttentionCache* cache,
                                CostCounter* counter) {
    return prototype_co_attention(t_q, t_q, p_h, inner, outer, cache, counter);
}

Matrix prototype_co_attention(const Matrix& t_q, const Matrix& t_s, const pgam::PrototypeSet& p_h,
                              const AttentionBlockParams& inner, const AttentionBlockParams& outer,
                              NestedAttentionCache* cache, CostCounter* counter) {
    require(p_h.origin == pgam::PrototypeOrigin::holistic, ErrorKind::invalid_argument,
            "co-attention expects holistic prototypes");
    return prototype_co_attention(t_q, t_s, p_h.prototypes, inner, outer, cache, counter);
}

Matrix prototype_self_attention(const Matrix& t_q, const pgam::PrototypeSet& p_h,
                                const AttentionBlockParams& inner,
                                const AttentionBlockParams& outer, NestedAttentionCache* cache,
                                CostCounter* counter) {
    require(p_h.origin == pgam::PrototypeOrigin::holistic, ErrorKind::invalid_argument,
            "self-attention expects holistic prototypes");
    return prototype_self_attention(t_q, p_h.prototypes, inner, outer, cache, counter);
}

NestedAttentionGrads prototype_co_attention_backward(const Matrix& t_q, const Matrix& t_s,
                                                     const Matrix& p_h,
                                                     const AttentionBlockParams& inner,
                                                     const AttentionBlockParams& outer,
                                                     const NestedAttentionCache& cache,
                                                     const Matrix& d_out) {
    NestedAttentionGrads g;
    g.outer = attention_backward(t_q, p_h, cache.inner.output, outer, cache.outer, d_out);
    g.inner = attention_backward(p_h, t_s, t_s, inner, cache.inner, g.outer.d_v);
    g.d_t_q = g.outer.d_q;
    g.d_t_s = g.inner.d_k + g.inner.d_v;
    g.d_p_h = g.outer.d_k + g.inner.d_q;
    return g;
}

NestedAttentionGrads prototype_self_attention_backward(const Matrix& t_q, const Matrix& p_h,
                                                       const AttentionBlockParams& inner,
                                                       const AttentionBlockParams& outer,
                                                       const NestedAttentionCache& cache,
                                                       const Matrix& d_out) {
    NestedAttentionGrads g = prototype_co_attention_backward(t_q, t_q, p_h, inner, outer, cache, d_out);
    g.d_t_q += g.d_t_s;  // inner keys/values are the query tokens here
    g.d_t_s.setZero();
    return g;
}

double HolisticAttention::at(int frame, int channel, int y, int x) const {
    const int c = int(co.cols());
    const int row = (frame * layout.height + y) * layout.width + x;
    return channel < c ? co(row, channel) : self(row, channel - c);
}

HolisticAttention holistic_attention(const Matrix& a_co, const Matrix& a_self,
                                     const TokenLayout& layout) {
    require(a_co.rows() == a_self.rows() && a_co.cols() == a_self.cols(), ErrorKind::bad_shape,
            "holistic attention: shape mismatch");
    require(a_co.rows() == layout.rows(), ErrorKind::bad_shape,
            "holistic attention: layout does not match token count");
    HolisticAttention ah;
    ah.layout = layout;
    ah.co = a_co;
    ah.self = a_self;
    return ah;
}

TensorData holistic_to_tensor(const HolisticAttention& ah) {
    const int c = int(ah.co.cols());
    TensorData t;
    t.dims = {uint64_t(ah.layout.frames), uint64_t(2 * c), uint64_t(ah.layout.height),
              uint64_t(ah.layout.width)};
    t.values.resize(t.numel());
    size_t idx = 0;
    for (int f = 0; f < ah.layout.frames; ++f)
        for (int ch = 0; ch < 2 * c; ++ch)
            for (int y = 0; y < ah.layout.height; ++y)
                for (int x = 0; x < ah.layout.width; ++x) t.values[idx++] = float(ah.at(f, ch, y, x));
    return t;
}

}  // namespace hpan::bpam
