#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "verify.hpp"

using namespace hpan;
using namespace hpan::verify;

TEST_CASE("central finite differences") {
    SUBCASE("quadratic is exact") {
        Vector x(2);
        x << 1, 2;
        Vector g = finite_diff_grad([](const Vector& v) { return v.squaredNorm(); }, x, 1e-4);
        CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
        CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
    }
    SUBCASE("constant function has zero gradient") {
        Vector x = Vector::Ones(5);
        Vector g = finite_diff_grad([](const Vector&) { return 3.5; }, x, 1e-4);
        CHECK(g.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("sin derivative at 0.3") {
        Vector x(1);
        x << 0.3;
        Vector g = finite_diff_grad([](const Vector& v) { return std::sin(v[0]); }, x, 1e-5);
        CHECK(std::abs(g[0] - std::cos(0.3)) <= 1e-9);
        CHECK(g[0] == doctest::Approx(0.955336).epsilon(1e-6));
    }
    SUBCASE("non-finite evaluation reports the coordinate") {
        Vector x(3);
        x << 1, 0, 1;
        CHECK_THROWS_WITH_AS(
            finite_diff_grad([](const Vector& v) { return std::log(v[1]); }, x, 1e-3),
            doctest::Contains("coordinate"), Error);
    }
}

TEST_CASE("kmeans oracle") {
    SUBCASE("single point, k=1") {
        Matrix p(1, 2);
        p << 3, 4;
        CHECK(kmeans_oracle(p, p).objective == 0.0);
    }
    SUBCASE("ties break to the lowest centroid index") {
        Matrix points(1, 1);
        points << 0.0;
        Matrix centroids(2, 1);
        centroids << 1.0, -1.0;  // equidistant
        KmeansOracleResult r = kmeans_oracle(points, centroids);
        CHECK(r.assignment[0] == 0);
    }
    SUBCASE("exhaustive pair objective is minimal over pairs") {
        Rng rng(5);
        Matrix points = uniform_matrix(rng, 6, 2, -1, 1);
        double best = exhaustive_pair_objective(points);
        Matrix centroids(2, 2);
        for (int a = 0; a < 6; ++a)
            for (int b = a + 1; b < 6; ++b) {
                centroids.row(0) = points.row(a);
                centroids.row(1) = points.row(b);
                CHECK(best <= kmeans_oracle(points, centroids).objective + 1e-15);
            }
    }
}

TEST_CASE("full attention oracle equals the implementation path") {
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        int c = 2 + int(rng.uniform_index(3));
        Matrix t_q = uniform_matrix(rng, 4, c, -1, 1);
        Matrix t_s = uniform_matrix(rng, 3, c, -1, 1);
        bpam::AttentionBlockParams p{uniform_matrix(rng, c, c, -1, 1),
                                     uniform_matrix(rng, c, c, -1, 1),
                                     uniform_matrix(rng, c, c, -1, 1)};
        auto [oracle, counter] = full_attention_oracle(t_q, t_s, p);
        Matrix impl = bpam::attention(t_q, t_s, t_s, p);
        CHECK((impl - oracle).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(counter.mac_count > 0);
        CHECK(counter.wall_ns > 0);
    }
}

TEST_CASE("oracle MAC count matches the documented closed form") {
    // n_q=4, n_k=3, C=2: projections C^2(n_q + 2 n_k) = 4*10 = 40,
    // interaction n_q*n_k*(2C+2) = 12*6 = 72
    Rng rng(9);
    Matrix t_q = uniform_matrix(rng, 4, 2, -1, 1);
    Matrix t_s = uniform_matrix(rng, 3, 2, -1, 1);
    bpam::AttentionBlockParams p{uniform_matrix(rng, 2, 2, -1, 1),
                                 uniform_matrix(rng, 2, 2, -1, 1),
                                 uniform_matrix(rng, 2, 2, -1, 1)};
    auto [out, counter] = full_attention_oracle(t_q, t_s, p);
    CHECK(counter.mac_projection == 40);
    CHECK(counter.mac_interaction == 72);
    CHECK(counter.mac_count == 112);

    // the instrumented implementation path counts identically
    CostCounter impl_counter;
    bpam::attention(t_q, t_s, t_s, p, nullptr, &impl_counter);
    CHECK(impl_counter.mac_count == counter.mac_count);
    CHECK(impl_counter.mac_projection == counter.mac_projection);
    CHECK(impl_counter.mac_interaction == counter.mac_interaction);
}

TEST_CASE("attention guard") {
    SUBCASE("defaults fit under the guard") {
        CHECK(!full_attention_guard_exceeded(5 * 448, 5 * 448, 256));
    }
    SUBCASE("K=T=40 at HW=448, C=256 trips the guard") {
        CHECK(full_attention_guard_exceeded(40 * 448, 40 * 448, 256));
    }
    SUBCASE("the oracle refuses guarded sizes with a reduction hint") {
        Matrix t_q = Matrix::Zero(40 * 448, 256);
        bpam::AttentionBlockParams p{Matrix::Identity(256, 256), Matrix::Identity(256, 256),
                                     Matrix::Identity(256, 256)};
        CHECK_THROWS_WITH_AS(full_attention_oracle(t_q, t_q, p), doctest::Contains("reduce"),
                             Error);
    }
}

TEST_CASE("cost model") {
    SUBCASE("factored is cheaper whenever prototypes are few") {
        CostModel m = cost_model(5, 5, 16, 28, 5, 256);
        CHECK(m.factored_interaction * 10 <= m.full_interaction);
        CHECK(m.factored_total() < m.full_total());
        // interaction ratio is about HW/Np up to the (2C+2) shared factor
        double ratio = double(m.full_interaction) / double(m.factored_interaction);
        CHECK(ratio > 40.0);
        CHECK(ratio < 50.0);
    }
    SUBCASE("interaction term is linear in N_p") {
        CostModel a = cost_model(5, 5, 16, 28, 5, 256);
        CostModel b = cost_model(5, 5, 16, 28, 10, 256);
        CHECK(b.factored_interaction == 2 * a.factored_interaction);
        CHECK(b.full_interaction == a.full_interaction);
    }
    SUBCASE("model equals the instrumented full oracle") {
        const int k = 2, t = 3, h = 4, w = 5, n_p = 2, c = 6;
        Rng rng(11);
        Matrix t_q = uniform_matrix(rng, t * h * w, c, -1, 1);
        Matrix t_s = uniform_matrix(rng, k * h * w, c, -1, 1);
        bpam::AttentionBlockParams p{uniform_matrix(rng, c, c, -1, 1),
                                     uniform_matrix(rng, c, c, -1, 1),
                                     uniform_matrix(rng, c, c, -1, 1)};
        auto [co, c1] = full_attention_oracle(t_q, t_s, p);
        auto [self, c2] = full_attention_oracle(t_q, t_q, p);
        CostModel m = cost_model(k, t, h, w, n_p, c);
        CHECK(c1.mac_count + c2.mac_count == m.full_total());
        CHECK(c1.mac_interaction + c2.mac_interaction == m.full_interaction);
    }
}
