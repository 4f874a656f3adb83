#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "metrics.hpp"
#include "verify.hpp"

using namespace hpan;
using namespace hpan::metrics;

namespace {

Mask square(int h, int w, int y0, int x0, int size) {
    Mask m = make_mask(h, w);
    for (int y = y0; y < y0 + size; ++y)
        for (int x = x0; x < x0 + size; ++x) m.at(y, x) = 1.f;
    return m;
}

Mask random_mask(Rng& rng, int h, int w, double density) {
    Mask m = make_mask(h, w);
    for (float& v : m.data) v = rng.uniform() < density ? 1.f : 0.f;
    return m;
}

}  // namespace

TEST_CASE("region similarity examples") {
    Mask a = square(8, 8, 2, 2, 4);
    CHECK(region_similarity(a, a) == 1.0);

    Mask b = square(8, 8, 0, 0, 2);
    Mask c = square(8, 8, 5, 5, 2);
    CHECK(region_similarity(b, c) == 0.0);

    Mask full = make_mask(6, 8, 1.f);
    Mask left = make_mask(6, 8);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 4; ++x) left.at(y, x) = 1.f;
    CHECK(region_similarity(left, full) == 0.5);

    Mask empty = make_mask(8, 8);
    CHECK(region_similarity(empty, empty) == 1.0);
    CHECK(region_similarity(empty, square(8, 8, 0, 0, 2)) == 0.0);

    CHECK_THROWS_AS(region_similarity(a, make_mask(4, 4)), Error);
}

TEST_CASE("region similarity binarizes soft inputs at 0.5") {
    Mask soft = make_mask(2, 2);
    soft.at(0, 0) = 0.6f;
    soft.at(0, 1) = 0.4f;
    Mask hard = make_mask(2, 2);
    hard.at(0, 0) = 1.f;
    CHECK(region_similarity(soft, hard) == 1.0);
}

TEST_CASE("J is invariant under joint translation away from borders") {
    Rng rng(3);
    Mask a = square(16, 16, 3, 4, 5);
    Mask b = square(16, 16, 4, 5, 5);
    double base = region_similarity(a, b);
    for (auto [dy, dx] : {std::pair{2, 1}, {1, 3}, {3, 3}}) {
        Mask at = square(16, 16, 3 + dy, 4 + dx, 5);
        Mask bt = square(16, 16, 4 + dy, 5 + dx, 5);
        CHECK(region_similarity(at, bt) == base);
    }
}

TEST_CASE("contour accuracy examples") {
    SUBCASE("identical masks") {
        Mask a = square(16, 16, 4, 4, 6);
        CHECK(contour_accuracy(a, a, 0) == 1.0);
        CHECK(contour_accuracy(a, a) == 1.0);
    }
    SUBCASE("one-pixel shift within tolerance one") {
        Mask a = square(20, 20, 4, 4, 10);
        Mask b = square(20, 20, 5, 5, 10);
        CHECK(contour_accuracy(a, b, 1) == 1.0);
        CHECK(contour_accuracy(a, b, 0) < 1.0);
    }
    SUBCASE("far-apart squares never match") {
        Mask a = square(32, 32, 2, 2, 4);
        Mask b = square(32, 32, 20, 20, 4);
        CHECK(contour_accuracy(a, b, 2) == 0.0);
    }
    SUBCASE("empty-boundary conventions") {
        Mask empty = make_mask(8, 8);
        Mask something = square(8, 8, 2, 2, 3);
        CHECK(contour_accuracy(empty, empty, 1) == 1.0);
        CHECK(contour_accuracy(empty, something, 1) == 0.0);
        CHECK(contour_accuracy(something, empty, 1) == 0.0);
    }
}

TEST_CASE("boundary extraction is 4-connected with image edges as background") {
    Mask full = make_mask(3, 3, 1.f);
    CHECK(boundary_pixels(full).size() == 8);  // only the center is interior

    Mask dot = make_mask(5, 5);
    dot.at(2, 2) = 1.f;
    auto b = boundary_pixels(dot);
    REQUIRE(b.size() == 1);
    CHECK(b[0] == 2 * 5 + 2);
}

TEST_CASE("default tolerance follows the 0.008 * diagonal rule") {
    CHECK(default_boundary_tolerance(480, 854) == int(std::ceil(0.008 * std::hypot(480, 854))));
    CHECK(default_boundary_tolerance(64, 112) == 2);
}

TEST_CASE("tolerance-zero F matches the naive pairwise oracle") {
    Rng rng(11);
    for (int rep = 0; rep < 15; ++rep) {
        int h = 4 + int(rng.uniform_index(29));
        int w = 4 + int(rng.uniform_index(29));
        Mask pred = random_mask(rng, h, w, 0.3);
        Mask gt = random_mask(rng, h, w, 0.3);
        for (int tol : {0, 1, 2}) {
            double impl = contour_accuracy(pred, gt, tol);
            double oracle = verify::contour_accuracy_oracle(pred, gt, tol);
            CHECK(impl == doctest::Approx(oracle).epsilon(1e-12));
        }
    }
}

TEST_CASE("episode evaluation aggregates per-frame metrics") {
    Mask a = square(8, 8, 1, 1, 4);
    Mask b = square(8, 8, 5, 5, 2);

    SUBCASE("all frames perfect") {
        EvalResult r = evaluate_episode({a, b}, {a, b});
        CHECK(r.j_mean == 1.0);
        CHECK(r.f_mean == 1.0);
    }
    SUBCASE("one perfect frame, one disjoint frame") {
        EvalResult r = evaluate_episode({a, a}, {a, b});
        CHECK(r.j_mean == 0.5);
        CHECK(r.j_per_frame[0] == 1.0);
        CHECK(r.j_per_frame[1] == 0.0);
    }
    SUBCASE("means equal the per-frame recomputation") {
        Rng rng(13);
        std::vector<Mask> preds, gts;
        for (int t = 0; t < 4; ++t) {
            preds.push_back(random_mask(rng, 12, 12, 0.4));
            gts.push_back(random_mask(rng, 12, 12, 0.4));
        }
        EvalResult r = evaluate_episode(preds, gts);
        double j = 0, f = 0;
        for (int t = 0; t < 4; ++t) {
            CHECK(r.j_per_frame[size_t(t)] == region_similarity(preds[size_t(t)], gts[size_t(t)]));
            CHECK(r.f_per_frame[size_t(t)] == contour_accuracy(preds[size_t(t)], gts[size_t(t)]));
            j += r.j_per_frame[size_t(t)] / 4;
            f += r.f_per_frame[size_t(t)] / 4;
        }
        CHECK(std::abs(r.j_mean - j) <= 1e-12);
        CHECK(std::abs(r.f_mean - f) <= 1e-12);
    }
    SUBCASE("count mismatch") { CHECK_THROWS_AS(evaluate_episode({a}, {a, b}), Error); }
}
