#include "pgam.hpp"

#include <algorithm>
#include <limits>

namespace hpan::pgam {

double cosine_similarity(const Vector& s, const Vector& t) {
    require(s.size() == t.size(), ErrorKind::bad_shape, "cosine: vector sizes differ");
    double dot = s.dot(t);
    return dot / (s.norm() * t.norm() + kCosineEpsilon);
}

void cosine_similarity_backward(const Vector& u, const Vector& v, double d_out, Vector& d_u,
                                Vector& d_v) {
    double nu = u.norm();
    double nv = v.norm();
    double den = nu * nv + kCosineEpsilon;
    double c = u.dot(v) / den;
    d_u += d_out / den * v;
    if (nu > 0) d_u -= d_out * c * nv / (nu * den) * u;
    d_v += d_out / den * u;
    if (nv > 0) d_v -= d_out * c * nu / (nv * den) * v;
}

PseudoMasks compute_pseudo_masks_dense(const std::vector<Matrix>& query_l4,
                                       const std::vector<Matrix>& support_l4,
                                       const std::vector<Vector>& support_mask_l4) {
    require(!query_l4.empty() && !support_l4.empty(), ErrorKind::invalid_argument,
            "pseudo-masks need at least one query frame and one support image");
    require(support_l4.size() == support_mask_l4.size(), ErrorKind::bad_shape,
            "support feature/mask count mismatch");

    PseudoMasks out;
    const Eigen::Index c = support_l4[0].cols();
    for (size_t k = 0; k < support_l4.size(); ++k) {
        require(support_l4[k].rows() == support_mask_l4[k].size(), ErrorKind::bad_shape,
                "support mask dims mismatch");
        int before = int(out.fg_support.size());
        for (int i = 0; i < support_l4[k].rows(); ++i)
            if (support_mask_l4[k][i] > 0) out.fg_support.emplace_back(int(k), i);
        require(int(out.fg_support.size()) > before, ErrorKind::invalid_value,
                "support mask " + std::to_string(k) + " empty at l4 resolution");
    }

    // precompute masked support rows and their norms
    const int n_fg = int(out.fg_support.size());
    Matrix fg(n_fg, c);
    Vector fg_norm(n_fg);
    for (int u = 0; u < n_fg; ++u) {
        auto [k, i] = out.fg_support[u];
        fg.row(u) = support_l4[size_t(k)].row(i) * support_mask_l4[size_t(k)][i];
        fg_norm[u] = fg.row(u).norm();
    }

    for (const Matrix& q : query_l4) {
        require(q.cols() == c, ErrorKind::bad_shape, "query channel mismatch");
        const int hw = int(q.rows());
        Vector raw(hw);
        std::vector<int> arg(hw, 0);
        for (int j = 0; j < hw; ++j) {
            double qn = q.row(j).norm();
            double best = -std::numeric_limits<double>::infinity();
            int best_u = 0;
            for (int u = 0; u < n_fg; ++u) {
                double d = fg.row(u).dot(q.row(j)) / (fg_norm[u] * qn + kCosineEpsilon);
                if (d > best) {
                    best = d;
                    best_u = u;
                }
            }
            raw[j] = best;
            arg[j] = best_u;
        }
        int jmin = 0, jmax = 0;
        for (int j = 1; j < hw; ++j) {
            if (raw[j] < raw[jmin]) jmin = j;
            if (raw[j] > raw[jmax]) jmax = j;
        }
        Vector norm(hw);
        bool degenerate = raw[jmax] == raw[jmin];
        if (degenerate) {
            norm.setZero();  // uniform similarity carries no localization evidence
        } else {
            norm = (raw.array() - raw[jmin]) / (raw[jmax] - raw[jmin]);
        }
        out.frames.push_back(std::move(norm));
        out.raw.push_back(std::move(raw));
        out.argmax_support.push_back(std::move(arg));
        out.argmin_pixel.push_back(jmin);
        out.argmax_pixel.push_back(jmax);
        out.degenerate.push_back(degenerate);
    }
    return out;
}

std::vector<Mask> compute_pseudo_masks(const std::vector<FeatureMap>& query_l4,
                                       const std::vector<FeatureMap>& support_l4,
                                       const std::vector<Mask>& support_masks_l4) {
    std::vector<Matrix> q, s;
    std::vector<Vector> m;
    for (const auto& fm : query_l4) q.push_back(pixel_matrix(fm));
    for (const auto& fm : support_l4) s.push_back(pixel_matrix(fm));
    for (const auto& mk : support_masks_l4) {
        require(!support_l4.empty() && mk.height == support_l4[0].height &&
                    mk.width == support_l4[0].width,
                ErrorKind::bad_shape, "support mask must be at l4 dims");
        m.push_back(mask_vector(mk));
    }
    PseudoMasks pm = compute_pseudo_masks_dense(q, s, m);
    std::vector<Mask> masks;
    for (size_t t = 0; t < pm.frames.size(); ++t)
        masks.push_back(to_mask(pm.frames[t], query_l4[t].height, query_l4[t].width));
    return masks;
}

PseudoMaskGrads pseudo_masks_backward(const PseudoMasks& fwd, const std::vector<Matrix>& query_l4,
                                      const std::vector<Matrix>& support_l4,
                                      const std::vector<Vector>& support_mask_l4,
                                      const std::vector<Vector>& d_frames) {
    PseudoMaskGrads grads;
    for (const Matrix& q : query_l4) grads.d_query.push_back(Matrix::Zero(q.rows(), q.cols()));
    for (const Matrix& s : support_l4) grads.d_support.push_back(Matrix::Zero(s.rows(), s.cols()));

    for (size_t t = 0; t < query_l4.size(); ++t) {
        if (fwd.degenerate[t]) continue;
        const Vector& raw = fwd.raw[t];
        const Vector& d_out = d_frames[t];
        const int hw = int(raw.size());
        const int jmin = fwd.argmin_pixel[t];
        const int jmax = fwd.argmax_pixel[t];
        const double denom = raw[jmax] - raw[jmin];

        // d raw from the per-frame min-max normalization
        Vector d_raw = Vector::Zero(hw);
        double sum_d = d_out.sum();
        double sum_dn = 0;
        for (int j = 0; j < hw; ++j) sum_dn += d_out[j] * (raw[j] - raw[jmin]);
        for (int j = 0; j < hw; ++j) d_raw[j] += d_out[j] / denom;
        d_raw[jmin] += -sum_d / denom + sum_dn / (denom * denom);
        d_raw[jmax] -= sum_dn / (denom * denom);

        // d raw -> features through the selected argmax cosine
        for (int j = 0; j < hw; ++j) {
            if (d_raw[j] == 0) continue;
            auto [k, i] = fwd.fg_support[size_t(fwd.argmax_support[t][j])];
            double w = support_mask_l4[size_t(k)][i];
            Vector fs = support_l4[size_t(k)].row(i).transpose() * w;
            Vector fq = query_l4[t].row(j).transpose();
            Vector d_fs = Vector::Zero(fs.size());
            Vector d_fq = Vector::Zero(fq.size());
            cosine_similarity_backward(fs, fq, d_raw[j], d_fs, d_fq);
            grads.d_query[t].row(j) += d_fq.transpose();
            grads.d_support[size_t(k)].row(i) += w * d_fs.transpose();
        }
    }
    return grads;
}

Matrix project_and_mask(const Matrix& feats, const Vector& mask, const ProjectionParams& params) {
    require(feats.rows() == mask.size(), ErrorKind::bad_shape,
            "projection: mask dims must equal feature dims");
    require(feats.cols() == params.weight.rows(), ErrorKind::bad_shape,
            "projection: weight input dim mismatch");
    require(params.bias.size() == params.weight.cols(), ErrorKind::bad_shape,
            "projection: bias dim mismatch");
    Matrix out = feats * params.weight;
    out.rowwise() += params.bias.transpose();
    out.array().colwise() *= mask.array();
    return out;
}

ProjectionGrads project_and_mask_backward(const Matrix& feats, const Vector& mask,
                                          const ProjectionParams& params, const Matrix& d_out) {
    Matrix d_pre = d_out;
    d_pre.array().colwise() *= mask.array();
    ProjectionGrads g;
    g.d_weight = feats.transpose() * d_pre;
    g.d_bias = d_pre.colwise().sum().transpose();
    g.d_feats = d_pre * params.weight.transpose();
    return g;
}

namespace {

double kmeans_objective(const Matrix& points, const Matrix& centroids,
                        const std::vector<int>& assignment) {
    double obj = 0;
    for (int i = 0; i < points.rows(); ++i)
        obj += (points.row(i) - centroids.row(assignment[size_t(i)])).squaredNorm();
    return obj;
}

void kmeans_assign(const Matrix& points, const Matrix& centroids, std::vector<int>& assignment) {
    for (int i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_c = 0;
        for (int c = 0; c < centroids.rows(); ++c) {
            double d = (points.row(i) - centroids.row(c)).squaredNorm();
            if (d < best) {  // strict: ties keep the lowest centroid index
                best = d;
                best_c = c;
            }
        }
        assignment[size_t(i)] = best_c;
    }
}

}  // namespace

namespace {

KmeansResult kmeans_single(const Matrix& points, int k, uint64_t seed) {
    const int m = int(points.rows());
    Rng rng(seed);
    KmeansResult res;
    res.centroids.resize(k, points.cols());

    // k-means++ seeding; stops early when no distinct mass remains.
    int chosen = 0;
    res.centroids.row(chosen++) = points.row(int(rng.uniform_index(uint64_t(m))));
    Vector d2(m);
    while (chosen < k) {
        for (int i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int c = 0; c < chosen; ++c)
                best = std::min(best, (points.row(i) - res.centroids.row(c)).squaredNorm());
            d2[i] = best;
        }
        double total = d2.sum();
        if (total <= 0) break;
        double u = rng.uniform() * total;
        int pick = m - 1;
        double acc = 0;
        for (int i = 0; i < m; ++i) {
            acc += d2[i];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        res.centroids.row(chosen++) = points.row(pick);
    }
    if (chosen < k) {
        res.duplicated = true;
        for (int i = 0; chosen < k; ++i) res.centroids.row(chosen++) = points.row(i % m);
    }

    res.assignment.assign(size_t(m), 0);
    kmeans_assign(points, res.centroids, res.assignment);
    res.objective_trace.push_back(kmeans_objective(points, res.centroids, res.assignment));

    std::vector<int> prev = res.assignment;
    for (int it = 0; it < kKmeansMaxIterations; ++it) {
        // update step; empty clusters keep their previous centroid
        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<int> counts(size_t(k), 0);
        for (int i = 0; i < m; ++i) {
            sums.row(res.assignment[size_t(i)]) += points.row(i);
            counts[size_t(res.assignment[size_t(i)])]++;
        }
        for (int c = 0; c < k; ++c)
            if (counts[size_t(c)] > 0) res.centroids.row(c) = sums.row(c) / counts[size_t(c)];

        res.iterations = it + 1;
        res.objective_trace.push_back(kmeans_objective(points, res.centroids, res.assignment));

        kmeans_assign(points, res.centroids, res.assignment);
        if (res.assignment == prev) break;
        prev = res.assignment;
    }
    res.objective = kmeans_objective(points, res.centroids, res.assignment);
    require(res.centroids.allFinite(), ErrorKind::non_finite, "kmeans produced non-finite centroids");
    return res;
}

}  // namespace

KmeansResult kmeans(const Matrix& points, int k, uint64_t seed) {
    require(points.rows() >= 1, ErrorKind::invalid_argument, "kmeans: empty point set");
    require(k >= 1, ErrorKind::invalid_argument, "kmeans: k must be >= 1");
    require(points.allFinite(), ErrorKind::non_finite, "kmeans: non-finite input");

    KmeansResult best = kmeans_single(points, k, mix_seed(seed, 0x7e57));
    for (int r = 1; r < kKmeansRestarts && best.objective > 0; ++r) {
        KmeansResult candidate = kmeans_single(points, k, mix_seed(seed, 0x7e57 + uint64_t(r)));
        if (candidate.objective < best.objective) best = std::move(candidate);
    }
    return best;
}

const char* prototype_origin_name(PrototypeOrigin origin) {
    switch (origin) {
        case PrototypeOrigin::support_raw: return "support_raw";
        case PrototypeOrigin::query_raw: return "query_raw";
        case PrototypeOrigin::support_enhanced: return "support_enhanced";
        case PrototypeOrigin::query_enhanced: return "query_enhanced";
        case PrototypeOrigin::holistic: return "holistic";
    }
    return "unknown";
}

PrototypeSet cluster_support_prototypes(const std::vector<Matrix>& masked_feats,
                                        const std::vector<Vector>& masks, int n_p, uint64_t seed) {
    require(!masked_feats.empty(), ErrorKind::invalid_argument, "no support images");
    require(masked_feats.size() == masks.size(), ErrorKind::bad_shape,
            "feature/mask count mismatch");
    require(n_p >= 1, ErrorKind::invalid_argument, "N_p must be >= 1");

    PrototypeSet set;
    set.origin = PrototypeOrigin::support_raw;
    set.n_per_unit = n_p;
    set.prototypes.resize(Eigen::Index(n_p) * Eigen::Index(masked_feats.size()),
                          masked_feats[0].cols());
    for (size_t k = 0; k < masked_feats.size(); ++k) {
        std::vector<int> fg;
        for (int i = 0; i < masks[k].size(); ++i)
            if (masks[k][i] > 0) fg.push_back(i);
        require(!fg.empty(), ErrorKind::invalid_value,
                "support image " + std::to_string(k) + " has no foreground pixels");
        Matrix points(fg.size(), masked_feats[k].cols());
        for (size_t r = 0; r < fg.size(); ++r) points.row(Eigen::Index(r)) = masked_feats[k].row(fg[r]);
        KmeansResult km = kmeans(points, n_p, mix_seed(seed, k));
        set.prototypes.middleRows(Eigen::Index(k) * n_p, n_p) = km.centroids;
        set.duplicated = set.duplicated || km.duplicated;
    }
    return set;
}

PrototypeSet cluster_query_prototypes(const std::vector<Matrix>& masked_feats,
                                      const std::vector<Vector>& pseudo_masks, int n_p,
                                      double tau_fg, uint64_t seed) {
    require(!masked_feats.empty(), ErrorKind::invalid_argument, "no query frames");
    require(masked_feats.size() == pseudo_masks.size(), ErrorKind::bad_shape,
            "feature/mask count mismatch");
    require(n_p >= 1, ErrorKind::invalid_argument, "N_p must be >= 1");

    std::vector<std::pair<size_t, int>> fg;
    for (size_t t = 0; t < masked_feats.size(); ++t)
        for (int i = 0; i < pseudo_masks[t].size(); ++i)
            if (pseudo_masks[t][i] >= tau_fg) fg.emplace_back(t, i);
    require(!fg.empty(), ErrorKind::invalid_value,
            "no query pixel at or above the foreground threshold");

    Matrix points(fg.size(), masked_feats[0].cols());
    for (size_t r = 0; r < fg.size(); ++r)
        points.row(Eigen::Index(r)) = masked_feats[fg[r].first].row(fg[r].second);

    const int k = n_p * int(masked_feats.size());
    KmeansResult km = kmeans(points, k, mix_seed(seed, 0x9f0d));
    PrototypeSet set;
    set.origin = PrototypeOrigin::query_raw;
    set.n_per_unit = n_p;
    set.prototypes = km.centroids;
    set.duplicated = km.duplicated;
    return set;
}

Matrix graph_attention(const Matrix& p_tgt, const Matrix& p_src, double lambda,
                       const GraphAttentionParams& params, GraphAttentionCache* cache,
                       bool value_from_target) {
    require(p_tgt.cols() == p_src.cols(), ErrorKind::bad_shape,
            "graph attention: channel mismatch");
    require(params.w_key.rows() == p_src.cols() && params.w_query.rows() == p_tgt.cols() &&
                params.w_value.rows() == p_src.cols(),
            ErrorKind::bad_shape, "graph attention: parameter dims mismatch");
    if (value_from_target)
        require(p_tgt.rows() == p_src.rows(), ErrorKind::bad_shape,
                "literal value map requires equally sized sets");

    GraphAttentionCache local;
    GraphAttentionCache& c = cache ? *cache : local;
    c.key = p_src * params.w_key;
    c.query = p_tgt * params.w_query;
    c.value = (value_from_target ? p_tgt : p_src) * params.w_value;

    const int n_src = int(c.key.rows());
    const int n_tgt = int(c.query.rows());
    c.cos.resize(n_src, n_tgt);
    Vector key_norm(n_src), query_norm(n_tgt);
    for (int i = 0; i < n_src; ++i) key_norm[i] = c.key.row(i).norm();
    for (int j = 0; j < n_tgt; ++j) query_norm[j] = c.query.row(j).norm();
    for (int i = 0; i < n_src; ++i)
        for (int j = 0; j < n_tgt; ++j)
            c.cos(i, j) = c.key.row(i).dot(c.query.row(j)) /
                          (key_norm[i] * query_norm[j] + kCosineEpsilon);

    c.row_sum = c.cos.rowwise().sum().array() + kEdgeDenomEpsilon;
    c.phi = c.cos.array().colwise() / c.row_sum.array();
    c.output = c.query + lambda * (c.phi.transpose() * c.value);
    return c.output;
}

PrototypeSet graph_attention(const PrototypeSet& tgt, const PrototypeSet& src, double lambda,
                             const GraphAttentionParams& params, PrototypeOrigin out_origin) {
    PrototypeSet out;
    out.prototypes = graph_attention(tgt.prototypes, src.prototypes, lambda, params);
    out.origin = out_origin;
    out.n_per_unit = tgt.n_per_unit;
    out.duplicated = tgt.duplicated || src.duplicated;
    return out;
}

GraphAttentionGrads graph_attention_backward(const Matrix& p_tgt, const Matrix& p_src,
                                             double lambda, const GraphAttentionParams& params,
                                             const GraphAttentionCache& cache, const Matrix& d_out,
                                             bool value_from_target) {
    const int n_src = int(cache.key.rows());
    const int n_tgt = int(cache.query.rows());

    Matrix d_query = d_out;                              // skip connection
    Matrix d_value = lambda * (cache.phi * d_out);       // N_src x C
    Matrix d_phi = lambda * (cache.value * d_out.transpose());  // N_src x N_tgt

    // normalization: phi(i,j) = cos(i,j) / row_sum(i)
    Matrix d_cos(n_src, n_tgt);
    for (int i = 0; i < n_src; ++i) {
        double mixed = d_phi.row(i).dot(cache.phi.row(i));
        d_cos.row(i) = (d_phi.row(i).array() - mixed) / cache.row_sum[i];
    }

    Matrix d_key = Matrix::Zero(n_src, cache.key.cols());
    for (int i = 0; i < n_src; ++i) {
        Vector u = cache.key.row(i).transpose();
        Vector du = Vector::Zero(u.size());
        for (int j = 0; j < n_tgt; ++j) {
            if (d_cos(i, j) == 0) continue;
            Vector v = cache.query.row(j).transpose();
            Vector dv = Vector::Zero(v.size());
            cosine_similarity_backward(u, v, d_cos(i, j), du, dv);
            d_query.row(j) += dv.transpose();
        }
        d_key.row(i) = du.transpose();
    }

    GraphAttentionGrads g;
    g.d_w_key = p_src.transpose() * d_key;
    g.d_w_query = p_tgt.transpose() * d_query;
    g.d_tgt = d_query * params.w_query.transpose();
    g.d_src = d_key * params.w_key.transpose();
    if (value_from_target) {
        g.d_w_value = p_tgt.transpose() * d_value;
        g.d_tgt += d_value * params.w_value.transpose();
    } else {
        g.d_w_value = p_src.transpose() * d_value;
        g.d_src += d_value * params.w_value.transpose();
    }
    return g;
}

PrototypeSet enhance_prototypes(const PrototypeSet& p_s, const PrototypeSet& p_q,
                                const EnhanceParams& params, EnhanceCache* cache,
                                bool value_from_target) {
    require(p_s.origin == PrototypeOrigin::support_raw, ErrorKind::invalid_argument,
            "enhance: first set must be raw support prototypes");
    require(p_q.origin == PrototypeOrigin::query_raw, ErrorKind::invalid_argument,
            "enhance: second set must be raw query prototypes");

    EnhanceCache local;
    EnhanceCache& c = cache ? *cache : local;
    c.p_bar_s = graph_attention(p_s.prototypes, p_s.prototypes, params.support_self.lambda_self,
                                params.support_self, &c.support, value_from_target);
    c.p_bar_q = graph_attention(p_q.prototypes, p_q.prototypes, params.query_self.lambda_self,
                                params.query_self, &c.query, value_from_target);

    PrototypeSet out;
    out.prototypes = graph_attention(c.p_bar_s, c.p_bar_q, params.co.lambda_co, params.co, &c.co,
                                     value_from_target && c.p_bar_s.rows() == c.p_bar_q.rows());
    out.origin = PrototypeOrigin::holistic;
    out.n_per_unit = p_s.n_per_unit;
    out.duplicated = p_s.duplicated || p_q.duplicated;
    return out;
}

EnhanceGrads enhance_prototypes_backward(const PrototypeSet& p_s, const PrototypeSet& p_q,
                                         const EnhanceParams& params, const EnhanceCache& cache,
                                         const Matrix& d_p_h, bool value_from_target) {
    EnhanceGrads g;
    g.co = graph_attention_backward(cache.p_bar_s, cache.p_bar_q, params.co.lambda_co, params.co,
                                    cache.co, d_p_h,
                                    value_from_target && cache.p_bar_s.rows() == cache.p_bar_q.rows());
    g.support = graph_attention_backward(p_s.prototypes, p_s.prototypes,
                                         params.support_self.lambda_self, params.support_self,
                                         cache.support, g.co.d_tgt, value_from_target);
    g.query = graph_attention_backward(p_q.prototypes, p_q.prototypes,
                                       params.query_self.lambda_self, params.query_self,
                                       cache.query, g.co.d_src, value_from_target);
    g.d_p_s = g.support.d_tgt + g.support.d_src;
    g.d_p_q = g.query.d_tgt + g.query.d_src;
    return g;
}

}  // namespace hpan::pgam
