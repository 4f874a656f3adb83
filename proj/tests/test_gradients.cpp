#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <functional>

#include "doctest.h"
#include "pipeline.hpp"
#include "verify.hpp"

using namespace hpan;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;  // tighter than the 1e-3 acceptance bound

double max_rel_err(const Matrix& a, const Matrix& b) {
    double worst = 0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) {
            double denom = std::max({std::abs(a(i, j)), std::abs(b(i, j)), 1e-6});
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
        }
    return worst;
}

// central differences over one parameter matrix, evaluated in place
Matrix fd_matrix(Matrix& param, const std::function<double()>& f, double step = kStep) {
    Matrix g(param.rows(), param.cols());
    for (int i = 0; i < param.rows(); ++i)
        for (int j = 0; j < param.cols(); ++j) {
            double orig = param(i, j);
            param(i, j) = orig + step;
            double hi = f();
            param(i, j) = orig - step;
            double lo = f();
            param(i, j) = orig;
            g(i, j) = (hi - lo) / (2 * step);
        }
    return g;
}

double dot_all(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

bpam::AttentionBlockParams random_block(Rng& rng, int c) {
    return {uniform_matrix(rng, c, c, -1, 1), uniform_matrix(rng, c, c, -1, 1),
            uniform_matrix(rng, c, c, -1, 1)};
}

pgam::GraphAttentionParams random_graph(Rng& rng, int c) {
    pgam::GraphAttentionParams p;
    p.w_key = uniform_matrix(rng, c, c, -1, 1);
    p.w_query = uniform_matrix(rng, c, c, -1, 1);
    p.w_value = uniform_matrix(rng, c, c, -1, 1);
    return p;
}

}  // namespace

TEST_CASE("cosine similarity backward matches finite differences") {
    Rng rng(1);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix u = uniform_matrix(rng, 4, 1, -1, 1);
        Matrix v = uniform_matrix(rng, 4, 1, -1, 1);
        Vector du = Vector::Zero(4), dv = Vector::Zero(4);
        pgam::cosine_similarity_backward(u.col(0), v.col(0), 1.0, du, dv);
        Matrix fd_u = fd_matrix(u, [&] { return pgam::cosine_similarity(u.col(0), v.col(0)); });
        Matrix fd_v = fd_matrix(v, [&] { return pgam::cosine_similarity(u.col(0), v.col(0)); });
        CHECK(max_rel_err(du, fd_u.col(0)) < kTol);
        CHECK(max_rel_err(dv, fd_v.col(0)) < kTol);
    }
}

TEST_CASE("attention backward matches finite differences") {
    Rng rng(2);
    const int c = 4, n_q = 3, n_k = 5;
    Matrix q = uniform_matrix(rng, n_q, c, -1, 1);
    Matrix k = uniform_matrix(rng, n_k, c, -1, 1);
    Matrix v = uniform_matrix(rng, n_k, c, -1, 1);
    bpam::AttentionBlockParams p = random_block(rng, c);
    Matrix cot = uniform_matrix(rng, n_q, c, -1, 1);

    auto eval = [&] { return dot_all(bpam::attention(q, k, v, p), cot); };
    bpam::AttentionCache cache;
    bpam::attention(q, k, v, p, &cache);
    bpam::AttentionGrads g = bpam::attention_backward(q, k, v, p, cache, cot);

    CHECK(max_rel_err(g.d_w_query, fd_matrix(p.w_query, eval)) < kTol);
    CHECK(max_rel_err(g.d_w_key, fd_matrix(p.w_key, eval)) < kTol);
    CHECK(max_rel_err(g.d_w_value, fd_matrix(p.w_value, eval)) < kTol);
    CHECK(max_rel_err(g.d_q, fd_matrix(q, eval)) < kTol);
    CHECK(max_rel_err(g.d_k, fd_matrix(k, eval)) < kTol);
    CHECK(max_rel_err(g.d_v, fd_matrix(v, eval)) < kTol);
}

TEST_CASE("graph attention backward matches finite differences") {
    Rng rng(3);
    const int c = 4;
    for (bool literal : {false, true}) {
        CAPTURE(literal);
        const int n_t = 3, n_s = literal ? 3 : 5;
        Matrix tgt = uniform_matrix(rng, n_t, c, -1, 1);
        Matrix src = uniform_matrix(rng, n_s, c, -1, 1);
        pgam::GraphAttentionParams p = random_graph(rng, c);
        Matrix cot = uniform_matrix(rng, n_t, c, -1, 1);
        const double lambda = 0.7;

        auto eval = [&] {
            return dot_all(pgam::graph_attention(tgt, src, lambda, p, nullptr, literal), cot);
        };
        pgam::GraphAttentionCache cache;
        pgam::graph_attention(tgt, src, lambda, p, &cache, literal);
        pgam::GraphAttentionGrads g =
            pgam::graph_attention_backward(tgt, src, lambda, p, cache, cot, literal);

        CHECK(max_rel_err(g.d_w_key, fd_matrix(p.w_key, eval)) < kTol);
        CHECK(max_rel_err(g.d_w_query, fd_matrix(p.w_query, eval)) < kTol);
        CHECK(max_rel_err(g.d_w_value, fd_matrix(p.w_value, eval)) < kTol);
        CHECK(max_rel_err(g.d_tgt, fd_matrix(tgt, eval)) < kTol);
        CHECK(max_rel_err(g.d_src, fd_matrix(src, eval)) < kTol);
    }
}

TEST_CASE("prototype enhancement backward matches finite differences") {
    Rng rng(4);
    const int c = 3;
    pgam::PrototypeSet p_s{uniform_matrix(rng, 4, c, -1, 1), pgam::PrototypeOrigin::support_raw, 2,
                           false};
    pgam::PrototypeSet p_q{uniform_matrix(rng, 6, c, -1, 1), pgam::PrototypeOrigin::query_raw, 2,
                           false};
    pgam::EnhanceParams params{random_graph(rng, c), random_graph(rng, c), random_graph(rng, c)};
    Matrix cot = uniform_matrix(rng, 4, c, -1, 1);

    auto eval = [&] {
        return dot_all(pgam::enhance_prototypes(p_s, p_q, params).prototypes, cot);
    };
    pgam::EnhanceCache cache;
    pgam::enhance_prototypes(p_s, p_q, params, &cache);
    pgam::EnhanceGrads g = pgam::enhance_prototypes_backward(p_s, p_q, params, cache, cot);

    CHECK(max_rel_err(g.support.d_w_key, fd_matrix(params.support_self.w_key, eval)) < kTol);
    CHECK(max_rel_err(g.support.d_w_query, fd_matrix(params.support_self.w_query, eval)) < kTol);
    CHECK(max_rel_err(g.support.d_w_value, fd_matrix(params.support_self.w_value, eval)) < kTol);
    CHECK(max_rel_err(g.query.d_w_key, fd_matrix(params.query_self.w_key, eval)) < kTol);
    CHECK(max_rel_err(g.query.d_w_query, fd_matrix(params.query_self.w_query, eval)) < kTol);
    CHECK(max_rel_err(g.query.d_w_value, fd_matrix(params.query_self.w_value, eval)) < kTol);
    CHECK(max_rel_err(g.co.d_w_key, fd_matrix(params.co.w_key, eval)) < kTol);
    CHECK(max_rel_err(g.co.d_w_query, fd_matrix(params.co.w_query, eval)) < kTol);
    CHECK(max_rel_err(g.co.d_w_value, fd_matrix(params.co.w_value, eval)) < kTol);
    CHECK(max_rel_err(g.d_p_s, fd_matrix(p_s.prototypes, eval)) < kTol);
    CHECK(max_rel_err(g.d_p_q, fd_matrix(p_q.prototypes, eval)) < kTol);
}

TEST_CASE("nested attention backward matches finite differences") {
    Rng rng(5);
    const int c = 3;
    Matrix t_q = uniform_matrix(rng, 6, c, -1, 1);
    Matrix t_s = uniform_matrix(rng, 4, c, -1, 1);
    Matrix p_h = uniform_matrix(rng, 2, c, -1, 1);
    bpam::AttentionBlockParams inner = random_block(rng, c), outer = random_block(rng, c);
    Matrix cot = uniform_matrix(rng, 6, c, -1, 1);

    SUBCASE("co-attention") {
        auto eval = [&] {
            return dot_all(bpam::prototype_co_attention(t_q, t_s, p_h, inner, outer), cot);
        };
        bpam::NestedAttentionCache cache;
        bpam::prototype_co_attention(t_q, t_s, p_h, inner, outer, &cache);
        bpam::NestedAttentionGrads g =
            bpam::prototype_co_attention_backward(t_q, t_s, p_h, inner, outer, cache, cot);
        CHECK(max_rel_err(g.d_t_q, fd_matrix(t_q, eval)) < kTol);
        CHECK(max_rel_err(g.d_t_s, fd_matrix(t_s, eval)) < kTol);
        CHECK(max_rel_err(g.d_p_h, fd_matrix(p_h, eval)) < kTol);
        CHECK(max_rel_err(g.inner.d_w_query, fd_matrix(inner.w_query, eval)) < kTol);
        CHECK(max_rel_err(g.inner.d_w_key, fd_matrix(inner.w_key, eval)) < kTol);
        CHECK(max_rel_err(g.inner.d_w_value, fd_matrix(inner.w_value, eval)) < kTol);
        CHECK(max_rel_err(g.outer.d_w_query, fd_matrix(outer.w_query, eval)) < kTol);
        CHECK(max_rel_err(g.outer.d_w_key, fd_matrix(outer.w_key, eval)) < kTol);
        CHECK(max_rel_err(g.outer.d_w_value, fd_matrix(outer.w_value, eval)) < kTol);
    }
    SUBCASE("self-attention") {
        auto eval = [&] {
            return dot_all(bpam::prototype_self_attention(t_q, p_h, inner, outer), cot);
        };
        bpam::NestedAttentionCache cache;
        bpam::prototype_self_attention(t_q, p_h, inner, outer, &cache);
        bpam::NestedAttentionGrads g =
            bpam::prototype_self_attention_backward(t_q, p_h, inner, outer, cache, cot);
        CHECK(max_rel_err(g.d_t_q, fd_matrix(t_q, eval)) < kTol);
        CHECK(max_rel_err(g.d_p_h, fd_matrix(p_h, eval)) < kTol);
    }
}

TEST_CASE("projection backward matches finite differences") {
    Rng rng(6);
    Matrix feats = uniform_matrix(rng, 8, 5, -1, 1);
    Vector mask(8);
    for (int i = 0; i < 8; ++i) mask[i] = rng.uniform();
    pgam::ProjectionParams p{uniform_matrix(rng, 5, 4, -1, 1),
                             uniform_matrix(rng, 4, 1, -1, 1).col(0)};
    Matrix cot = uniform_matrix(rng, 8, 4, -1, 1);

    auto eval = [&] { return dot_all(pgam::project_and_mask(feats, mask, p), cot); };
    pgam::ProjectionGrads g = pgam::project_and_mask_backward(feats, mask, p, cot);
    CHECK(max_rel_err(g.d_weight, fd_matrix(p.weight, eval)) < kTol);
    Matrix bias_mat = p.bias;
    Matrix fd_bias = fd_matrix(bias_mat, [&] {
        pgam::ProjectionParams probe{p.weight, bias_mat.col(0)};
        return dot_all(pgam::project_and_mask(feats, mask, probe), cot);
    });
    CHECK(max_rel_err(g.d_bias, fd_bias.col(0)) < kTol);
    CHECK(max_rel_err(g.d_feats, fd_matrix(feats, eval)) < kTol);
}

TEST_CASE("pseudo-mask backward matches finite differences at a generic point") {
    Rng rng(7);
    const int c = 4, hw = 6;
    std::vector<Matrix> support{uniform_matrix(rng, hw, c, -1, 1)};
    std::vector<Vector> mask{Vector::Zero(hw)};
    mask[0][0] = mask[0][2] = mask[0][5] = 1;
    std::vector<Matrix> query{uniform_matrix(rng, hw, c, -1, 1),
                              uniform_matrix(rng, hw, c, -1, 1)};
    std::vector<Vector> cot{uniform_matrix(rng, hw, 1, -1, 1).col(0),
                            uniform_matrix(rng, hw, 1, -1, 1).col(0)};

    auto eval = [&] {
        pgam::PseudoMasks pm = pgam::compute_pseudo_masks_dense(query, support, mask);
        double acc = 0;
        for (size_t t = 0; t < pm.frames.size(); ++t) acc += pm.frames[t].dot(cot[t]);
        return acc;
    };
    pgam::PseudoMasks fwd = pgam::compute_pseudo_masks_dense(query, support, mask);
    pgam::PseudoMaskGrads g = pgam::pseudo_masks_backward(fwd, query, support, mask, cot);

    CHECK(max_rel_err(g.d_query[0], fd_matrix(query[0], eval)) < kTol);
    CHECK(max_rel_err(g.d_query[1], fd_matrix(query[1], eval)) < kTol);
    CHECK(max_rel_err(g.d_support[0], fd_matrix(support[0], eval)) < kTol);
}

TEST_CASE("decode backward matches finite differences") {
    Rng rng(8);
    const int t = 2, h = 2, w = 3, c = 3;
    bpam::TokenLayout layout{t, h, w};
    Matrix a_co = uniform_matrix(rng, layout.rows(), c, -1, 1);
    Matrix a_self = uniform_matrix(rng, layout.rows(), c, -1, 1);
    head::HeadParams params{uniform_matrix(rng, 2 * c, 1, -1, 1).col(0), 0.2};
    const int oh = 4, ow = 6;
    std::vector<Vector> cot{uniform_matrix(rng, oh * ow, 1, -1, 1).col(0),
                            uniform_matrix(rng, oh * ow, 1, -1, 1).col(0)};

    auto eval = [&] {
        bpam::HolisticAttention ah = bpam::holistic_attention(a_co, a_self, layout);
        std::vector<Vector> preds = head::decode(ah, params, oh, ow);
        double acc = 0;
        for (size_t f = 0; f < preds.size(); ++f) acc += preds[f].dot(cot[f]);
        return acc;
    };

    bpam::HolisticAttention ah = bpam::holistic_attention(a_co, a_self, layout);
    head::DecodeCache cache;
    head::decode(ah, params, oh, ow, &cache);
    head::DecodeGrads g = head::decode_backward(ah, params, oh, ow, cache, cot);

    Matrix proj_mat = params.proj;
    Matrix fd_proj = fd_matrix(proj_mat, [&] {
        head::HeadParams probe{proj_mat.col(0), params.bias};
        bpam::HolisticAttention ahp = bpam::holistic_attention(a_co, a_self, layout);
        std::vector<Vector> preds = head::decode(ahp, probe, oh, ow);
        double acc = 0;
        for (size_t f = 0; f < preds.size(); ++f) acc += preds[f].dot(cot[f]);
        return acc;
    });
    CHECK(max_rel_err(g.d_proj, fd_proj.col(0)) < kTol);
    CHECK(max_rel_err(g.d_co, fd_matrix(a_co, eval)) < kTol);
    CHECK(max_rel_err(g.d_self, fd_matrix(a_self, eval)) < kTol);

    Matrix bias_mat(1, 1);
    bias_mat << params.bias;
    Matrix fd_bias = fd_matrix(bias_mat, [&] {
        head::HeadParams probe{params.proj, bias_mat(0, 0)};
        bpam::HolisticAttention ahp = bpam::holistic_attention(a_co, a_self, layout);
        std::vector<Vector> preds = head::decode(ahp, probe, oh, ow);
        double acc = 0;
        for (size_t f = 0; f < preds.size(); ++f) acc += preds[f].dot(cot[f]);
        return acc;
    });
    CHECK(std::abs(g.d_bias - fd_bias(0, 0)) /
              std::max({std::abs(g.d_bias), std::abs(fd_bias(0, 0)), 1e-6}) <
          kTol);
}

TEST_CASE("pipeline gradient check passes for every parameter group") {
    auto report = gradcheck(20240810);
    CHECK(report.size() >= 25 + 3);
    for (const auto& [name, entry] : report) {
        CAPTURE(name);
        CHECK(entry.max_rel_err <= kGradCheckTolerance);
        CHECK(entry.pass);
    }
}

TEST_CASE("baseline-mode gradient check passes for the active groups") {
    auto report = gradcheck(77, true);
    bool saw_projection = false, saw_co = false;
    for (const auto& [name, entry] : report) {
        CAPTURE(name);
        CHECK(entry.pass);
        saw_projection |= name.rfind("projection", 0) == 0;
        saw_co |= name.rfind("bpam.co", 0) == 0;
        CHECK(name.rfind("graph.", 0) != 0);      // disabled branch
        CHECK(name.rfind("bpam.self_", 0) != 0);  // disabled branch
    }
    CHECK(saw_projection);
    CHECK(saw_co);
}

TEST_CASE("a perturbed analytic gradient is detected") {
    Rng rng(9);
    const int c = 3;
    Matrix q = uniform_matrix(rng, 3, c, -1, 1);
    Matrix k = uniform_matrix(rng, 4, c, -1, 1);
    Matrix v = uniform_matrix(rng, 4, c, -1, 1);
    bpam::AttentionBlockParams p = random_block(rng, c);
    Matrix cot = uniform_matrix(rng, 3, c, -1, 1);
    auto eval = [&] { return dot_all(bpam::attention(q, k, v, p), cot); };

    bpam::AttentionCache cache;
    bpam::attention(q, k, v, p, &cache);
    bpam::AttentionGrads g = bpam::attention_backward(q, k, v, p, cache, cot);
    g.d_w_key(0, 0) += 0.05;  // injected fault
    CHECK(max_rel_err(g.d_w_key, fd_matrix(p.w_key, eval)) > kGradCheckTolerance);
}

TEST_CASE("training demo is deterministic and inert at lr=0") {
    RunConfig cfg;
    cfg.k_support = 2;
    cfg.t_query = 2;
    cfg.n_p = 2;
    cfg.channels = 6;
    cfg.channels_in = 5;
    cfg.train_l3_height = 4;
    cfg.train_l3_width = 6;
    cfg.separation = 5.0;
    std::vector<Episode> episodes;
    for (int e = 0; e < 2; ++e)
        episodes.push_back(synth_episode(cfg.train_synth_config(), mix_seed(9, 0x1e9 + e)));

    SUBCASE("bitwise identical trajectories for the same seed") {
        TrainResult a = train_demo(episodes, 5, 1e-3, 7, cfg);
        TrainResult b = train_demo(episodes, 5, 1e-3, 7, cfg);
        REQUIRE(a.trajectory.size() == b.trajectory.size());
        for (size_t i = 0; i < a.trajectory.size(); ++i) {
            CHECK(a.trajectory[i].total == b.trajectory[i].total);
            CHECK(a.trajectory[i].ce == b.trajectory[i].ce);
        }
        CHECK(a.final_proto_mean == b.final_proto_mean);
    }
    SUBCASE("jobs does not change the result") {
        RunConfig par = cfg;
        par.jobs = 2;
        TrainResult a = train_demo(episodes, 4, 1e-3, 7, cfg);
        TrainResult b = train_demo(episodes, 4, 1e-3, 7, par);
        for (size_t i = 0; i < a.trajectory.size(); ++i)
            CHECK(a.trajectory[i].total == b.trajectory[i].total);
    }
    SUBCASE("lr=0 freezes the trajectory") {
        TrainResult r = train_demo(episodes, 4, 0.0, 7, cfg);
        for (size_t i = 1; i < r.trajectory.size(); ++i)
            CHECK(r.trajectory[i].total == r.trajectory[0].total);
    }
}
