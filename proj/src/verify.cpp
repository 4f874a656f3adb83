#include "verify.hpp"

#include <cmath>
#include <limits>

namespace hpan::verify {

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                        double step) {
    require(step > 0, ErrorKind::invalid_argument, "finite differences need a positive step");
    Vector grad(x.size());
    Vector probe = x;
    for (int i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        double hi = f(probe);
        probe[i] = x[i] - step;
        double lo = f(probe);
        probe[i] = x[i];
        require(std::isfinite(hi) && std::isfinite(lo), ErrorKind::numeric,
                "non-finite evaluation at coordinate " + std::to_string(i));
        grad[i] = (hi - lo) / (2 * step);
    }
    return grad;
}

namespace {

// local cosine, deliberately separate from pgam::cosine_similarity
double oracle_cosine(const double* a, const double* b, int n) {
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-8);
}

// row-major linear map, plain loops over contiguous buffers
std::vector<double> loop_linear(const Matrix& x, const Matrix& w) {
    const int rows = int(x.rows()), in = int(x.cols()), out = int(w.cols());
    std::vector<double> xr(static_cast<size_t>(rows) * in);
    std::vector<double> wr(static_cast<size_t>(in) * out);
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < in; ++i) xr[size_t(r) * in + i] = x(r, i);
    for (int i = 0; i < in; ++i)
        for (int c = 0; c < out; ++c) wr[size_t(c) * in + i] = w(i, c);  // transposed
    std::vector<double> y(static_cast<size_t>(rows) * out);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < out; ++c) {
            double acc = 0;
            const double* a = &xr[size_t(r) * in];
            const double* b = &wr[size_t(c) * in];
            for (int i = 0; i < in; ++i) acc += a[i] * b[i];
            y[size_t(r) * out + c] = acc;
        }
    return y;
}

}  // namespace

Matrix dense_attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v,
                              const bpam::AttentionBlockParams& params) {
    const int n_q = int(q.rows()), n_k = int(k.rows()), c = int(q.cols());
    std::vector<double> qp = loop_linear(q, params.w_query);
    std::vector<double> kp = loop_linear(k, params.w_key);
    std::vector<double> vp = loop_linear(v, params.w_value);

    const double inv_sqrt_c = 1.0 / std::sqrt(double(c));
    Matrix out(n_q, c);
    std::vector<double> row(static_cast<size_t>(n_k));
    std::vector<double> acc(static_cast<size_t>(c));
    for (int i = 0; i < n_q; ++i) {
        const double* qi = &qp[size_t(i) * c];
        double row_max = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n_k; ++j) {
            const double* kj = &kp[size_t(j) * c];
            double s = 0;
            for (int cc = 0; cc < c; ++cc) s += qi[cc] * kj[cc];
            row[size_t(j)] = s * inv_sqrt_c;
            row_max = std::max(row_max, row[size_t(j)]);
        }
        double denom = 0;
        for (int j = 0; j < n_k; ++j) {
            row[size_t(j)] = std::exp(row[size_t(j)] - row_max);
            denom += row[size_t(j)];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int j = 0; j < n_k; ++j) {
            const double p = row[size_t(j)] / denom;
            const double* vj = &vp[size_t(j) * c];
            for (int cc = 0; cc < c; ++cc) acc[size_t(cc)] += p * vj[cc];
        }
        for (int cc = 0; cc < c; ++cc) out(i, cc) = qi[cc] + acc[size_t(cc)];
    }
    return out;
}

Matrix graph_attention_oracle(const Matrix& p_tgt, const Matrix& p_src, double lambda,
                              const pgam::GraphAttentionParams& params, bool value_from_target) {
    const int n_s = int(p_src.rows()), n_t = int(p_tgt.rows()), c = int(p_tgt.cols());
    std::vector<double> key = loop_linear(p_src, params.w_key);
    std::vector<double> query = loop_linear(p_tgt, params.w_query);
    std::vector<double> value = loop_linear(value_from_target ? p_tgt : p_src, params.w_value);

    Matrix out(n_t, c);
    for (int j = 0; j < n_t; ++j)
        for (int cc = 0; cc < c; ++cc) out(j, cc) = query[size_t(j) * c + cc];
    for (int i = 0; i < n_s; ++i) {
        std::vector<double> sims(static_cast<size_t>(n_t));
        double denom = 1e-8;
        for (int j = 0; j < n_t; ++j) {
            sims[size_t(j)] = oracle_cosine(&key[size_t(i) * c], &query[size_t(j) * c], c);
            denom += sims[size_t(j)];
        }
        for (int j = 0; j < n_t; ++j)
            for (int cc = 0; cc < c; ++cc)
                out(j, cc) += lambda * sims[size_t(j)] / denom * value[size_t(i) * c + cc];
    }
    return out;
}

double ce_loss_oracle(const std::vector<Vector>& pred, const std::vector<Vector>& gt) {
    double total = 0;
    long count = 0;
    for (size_t t = 0; t < pred.size(); ++t)
        for (int i = 0; i < pred[t].size(); ++i) {
            double p = pred[t][i];
            if (p < 1e-7) p = 1e-7;
            if (p > 1 - 1e-7) p = 1 - 1e-7;
            double y = gt[t][i];
            total += -(y * std::log(p) + (1 - y) * std::log(1 - p));
            ++count;
        }
    return total / double(count);
}

double iou_loss_oracle(const std::vector<Vector>& pred, const std::vector<Vector>& gt) {
    double acc = 0;
    for (size_t t = 0; t < pred.size(); ++t) {
        double inter = 0, uni = 0;
        for (int i = 0; i < pred[t].size(); ++i) {
            inter += gt[t][i] * pred[t][i];
            uni += gt[t][i] + pred[t][i] - gt[t][i] * pred[t][i];
        }
        acc += uni == 0 ? 1.0 : inter / uni;
    }
    return 1.0 - acc / double(pred.size());
}

double proto_loss_oracle(const Matrix& p_h, double lambda_proto) {
    const int n = int(p_h.rows());
    double sum = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            Vector a = p_h.row(i).transpose();
            Vector b = p_h.row(j).transpose();
            sum += oracle_cosine(a.data(), b.data(), int(p_h.cols()));
        }
    return lambda_proto * sum / (double(n) * (n - 1));
}

double contour_accuracy_oracle(const Mask& pred, const Mask& gt, int tolerance_px) {
    auto boundary = [](const Mask& m) {
        std::vector<std::pair<int, int>> px;
        auto fg = [&](int y, int x) {
            return y >= 0 && y < m.height && x >= 0 && x < m.width && m.at(y, x) >= 0.5f;
        };
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                if (fg(y, x) &&
                    (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)))
                    px.emplace_back(y, x);
        return px;
    };
    auto pb = boundary(pred);
    auto gb = boundary(gt);
    if (pb.empty() && gb.empty()) return 1.0;
    if (pb.empty() || gb.empty()) return 0.0;

    auto matched = [&](const std::vector<std::pair<int, int>>& from,
                       const std::vector<std::pair<int, int>>& to) {
        long hits = 0;
        for (auto [y, x] : from) {
            bool hit = false;
            for (auto [gy, gx] : to)
                if (std::max(std::abs(y - gy), std::abs(x - gx)) <= tolerance_px) {
                    hit = true;
                    break;
                }
            hits += hit;
        }
        return hits;
    };
    double precision = double(matched(pb, gb)) / double(pb.size());
    double recall = double(matched(gb, pb)) / double(gb.size());
    if (precision + recall == 0) return 0.0;
    return 2 * precision * recall / (precision + recall);
}

std::pair<Matrix, CostCounter> full_attention_oracle(const Matrix& t_q, const Matrix& t_s,
                                                     const bpam::AttentionBlockParams& params) {
    const uint64_t n_q = uint64_t(t_q.rows()), n_k = uint64_t(t_s.rows());
    const uint64_t c = uint64_t(t_q.cols());
    if (full_attention_guard_exceeded(n_q, n_k, c)) {
        uint64_t macs = full_attention_score_macs(n_q, n_k, c);
        fail(ErrorKind::invalid_argument,
             "full attention guard exceeded: score matrix needs " + std::to_string(macs) +
                 " MACs > " + std::to_string(kFullAttentionGuardMacs) +
                 "; reduce T*HW * K*HW * C by a factor of " +
                 std::to_string(double(macs) / double(kFullAttentionGuardMacs)));
    }

    CostCounter counter;
    Matrix out;
    {
        ScopedTimer timer(counter.wall_ns);
        out = dense_attention_oracle(t_q, t_s, t_s, params);
    }
    counter.add_projection(c * c * (n_q + 2 * n_k),
                           8 * (n_q * c + 2 * n_k * c + 3 * c * c + n_q * c + 2 * n_k * c));
    counter.add_interaction(n_q * n_k * (2 * c + 2),
                            8 * (2 * (n_q * c + n_k * c + n_q * n_k) + 2 * n_q * n_k));
    return {std::move(out), counter};
}

KmeansOracleResult kmeans_oracle(const Matrix& points, const Matrix& centroids) {
    KmeansOracleResult r;
    r.assignment.resize(size_t(points.rows()));
    for (int i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_c = 0;
        for (int c = 0; c < centroids.rows(); ++c) {
            double d = 0;
            for (int k = 0; k < points.cols(); ++k) {
                double diff = points(i, k) - centroids(c, k);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_c = c;
            }
        }
        r.assignment[size_t(i)] = best_c;
        r.objective += best;
    }
    return r;
}

double exhaustive_pair_objective(const Matrix& points) {
    require(points.rows() >= 2, ErrorKind::invalid_argument, "need at least two points");
    double best = std::numeric_limits<double>::infinity();
    Matrix centroids(2, points.cols());
    for (int a = 0; a < points.rows(); ++a)
        for (int b = a + 1; b < points.rows(); ++b) {
            centroids.row(0) = points.row(a);
            centroids.row(1) = points.row(b);
            best = std::min(best, kmeans_oracle(points, centroids).objective);
        }
    return best;
}

CostModel cost_model(int k_support, int t_query, int height, int width, int n_p, int channels) {
    require(k_support > 0 && t_query > 0 && height > 0 && width > 0 && n_p > 0 && channels > 0,
            ErrorKind::invalid_argument, "cost model dims must be positive");
    const uint64_t hw = uint64_t(height) * uint64_t(width);
    const uint64_t c = uint64_t(channels);
    const uint64_t n = uint64_t(n_p) * uint64_t(k_support);
    const uint64_t q_rows = uint64_t(t_query) * hw;
    const uint64_t s_rows = uint64_t(k_support) * hw;

    auto projection = [c](uint64_t n_q, uint64_t n_k) { return c * c * (n_q + 2 * n_k); };
    auto interaction = [c](uint64_t n_q, uint64_t n_k) { return n_q * n_k * (2 * c + 2); };

    CostModel m;
    // factored co-attention: inner A(Ph, Ts, Ts) then outer A(Tq, Ph, inner)
    m.factored_projection += projection(n, s_rows) + projection(q_rows, n);
    m.factored_interaction += interaction(n, s_rows) + interaction(q_rows, n);
    // factored self-attention: inner A(Ph, Tq, Tq) then outer A(Tq, Ph, inner)
    m.factored_projection += projection(n, q_rows) + projection(q_rows, n);
    m.factored_interaction += interaction(n, q_rows) + interaction(q_rows, n);
    // full-rank counterparts: A(Tq, Ts, Ts) and A(Tq, Tq, Tq)
    m.full_projection += projection(q_rows, s_rows) + projection(q_rows, q_rows);
    m.full_interaction += interaction(q_rows, s_rows) + interaction(q_rows, q_rows);
    return m;
}

}  // namespace hpan::verify
