// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bench.hpp"
#include "pipeline.hpp"
#include "verify.hpp"

using namespace hpan;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void run_criterion(int number, const std::string& label, const std::function<void()>& body) {
    auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
        body();
    } catch (const std::exception& e) {
        failure = e.what();
    }
    double elapsed = seconds_since(start);
    if (failure.empty()) {
        std::printf("PASS  criterion %d: %s  [%.1fs]\n", number, label.c_str(), elapsed);
    } else {
        ++g_failures;
        std::printf("FAIL  criterion %d: %s  [%.1fs]\n      %s\n", number, label.c_str(), elapsed,
                    failure.c_str());
    }
    std::fflush(stdout);
}

void expect(bool ok, const std::string& message) {
    if (!ok) throw std::runtime_error(message);
}

void expect_close(double a, double b, double tol, const std::string& what) {
    if (std::abs(a - b) > tol * std::max({1.0, std::abs(a), std::abs(b)}))
        throw std::runtime_error(what + ": " + std::to_string(a) + " vs " + std::to_string(b));
}

void expect_elementwise(const Matrix& a, const Matrix& b, double tol, const std::string& what) {
    expect(a.rows() == b.rows() && a.cols() == b.cols(), what + ": shape mismatch");
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            if (std::abs(a(i, j) - b(i, j)) > tol * std::max(1.0, std::abs(b(i, j))))
                throw std::runtime_error(what + ": element (" + std::to_string(i) + "," +
                                         std::to_string(j) + ") differs: " +
                                         std::to_string(a(i, j)) + " vs " +
                                         std::to_string(b(i, j)));
}

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& tag) {
        root = fs::temp_directory_path() / ("hpan-acceptance-" + tag + "-" +
                                            std::to_string(::getpid()));
        fs::create_directories(root);
    }
    ~TempTree() {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
};

// --- criterion 1: formula fidelity against independently coded oracles ----

void criterion_formula_fidelity() {
    auto start = std::chrono::steady_clock::now();
    Rng rng(0xF1DE);
    const double tol = 1e-6;
    for (int rep = 0; rep < 100; ++rep) {
        const int c = 2 + int(rng.uniform_index(5));

        {  // graph attention
            Matrix tgt = uniform_matrix(rng, 1 + int(rng.uniform_index(6)), c, -1, 1);
            Matrix src = uniform_matrix(rng, 1 + int(rng.uniform_index(6)), c, -1, 1);
            pgam::GraphAttentionParams p;
            p.w_key = uniform_matrix(rng, c, c, -1, 1);
            p.w_query = uniform_matrix(rng, c, c, -1, 1);
            p.w_value = uniform_matrix(rng, c, c, -1, 1);
            double lambda = rng.uniform(0, 1);
            expect_elementwise(pgam::graph_attention(tgt, src, lambda, p),
                               verify::graph_attention_oracle(tgt, src, lambda, p), tol,
                               "graph_attention vs oracle");
        }
        {  // scaled dot-product attention
            Matrix q = uniform_matrix(rng, 1 + int(rng.uniform_index(6)), c, -1, 1);
            int n_k = 1 + int(rng.uniform_index(6));
            Matrix k = uniform_matrix(rng, n_k, c, -1, 1);
            Matrix v = uniform_matrix(rng, n_k, c, -1, 1);
            bpam::AttentionBlockParams p{uniform_matrix(rng, c, c, -1, 1),
                                         uniform_matrix(rng, c, c, -1, 1),
                                         uniform_matrix(rng, c, c, -1, 1)};
            expect_elementwise(bpam::attention(q, k, v, p),
                               verify::dense_attention_oracle(q, k, v, p), tol,
                               "attention vs oracle");
        }
        {  // losses
            std::vector<Vector> pred, gt;
            for (int t = 0; t < 2; ++t) {
                Vector p(9), y(9);
                for (int i = 0; i < 9; ++i) {
                    p[i] = rng.uniform(1e-4, 1 - 1e-4);
                    y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
                }
                pred.push_back(p);
                gt.push_back(y);
            }
            expect_close(head::ce_loss(pred, gt), verify::ce_loss_oracle(pred, gt), tol,
                         "ce loss vs oracle");
            expect_close(head::iou_loss(pred, gt), verify::iou_loss_oracle(pred, gt), tol,
                         "iou loss vs oracle");
            Matrix protos = uniform_matrix(rng, 2 + int(rng.uniform_index(5)), c, -1, 1);
            double lambda = rng.uniform(0, 2);
            expect_close(head::proto_loss(protos, lambda),
                         verify::proto_loss_oracle(protos, lambda), tol, "proto loss vs oracle");
        }
    }
    expect(seconds_since(start) < 10.0, "exceeded the 10 s budget");
}

// --- criterion 2: gradient suite -------------------------------------------

void criterion_gradient_suite() {
    auto start = std::chrono::steady_clock::now();
    auto report = gradcheck(20240810);
    expect(report.size() >= 28, "expected at least 28 checked groups, saw " +
                                    std::to_string(report.size()));
    for (const auto& [name, entry] : report)
        expect(entry.max_rel_err <= 1e-3,
               name + " max rel err " + std::to_string(entry.max_rel_err) + " > 1e-3");
    expect(seconds_since(start) < 60.0, "exceeded the 60 s budget");
}

// --- criterion 3: pseudo-mask properties over 1000 episodes ----------------

void criterion_pseudo_mask_properties() {
    SynthConfig cfg;
    cfg.k_support = 2;
    cfg.t_query = 2;
    cfg.channels = 12;
    cfg.l3_height = 6;
    cfg.l3_width = 8;
    cfg.separation = 4.0;

    Rng scale_rng(0x5CA1E);
    for (int episode = 0; episode < 1000; ++episode) {
        EpisodeTensors ep = to_tensors(synth_episode(cfg, 9000 + uint64_t(episode)));
        pgam::PseudoMasks pm = pgam::compute_pseudo_masks_dense(ep.q_l4, ep.s_l4, ep.s_mask_l4);
        for (size_t t = 0; t < pm.frames.size(); ++t) {
            expect(pm.frames[t].minCoeff() >= 0.0 && pm.frames[t].maxCoeff() <= 1.0,
                   "pseudo-mask value outside [0,1]");
            if (!pm.degenerate[t])
                expect(pm.frames[t].minCoeff() == 0.0 && pm.frames[t].maxCoeff() == 1.0,
                       "non-degenerate frame does not attain both 0 and 1");
        }
        // invariance under positive per-pixel rescaling of support features
        std::vector<Matrix> scaled = ep.s_l4;
        for (Matrix& m : scaled)
            for (int i = 0; i < m.rows(); ++i) m.row(i) *= scale_rng.uniform(0.05, 20.0);
        pgam::PseudoMasks pm2 = pgam::compute_pseudo_masks_dense(ep.q_l4, scaled, ep.s_mask_l4);
        for (size_t t = 0; t < pm.frames.size(); ++t) {
            double diff = (pm.frames[t] - pm2.frames[t]).cwiseAbs().maxCoeff();
            expect(diff <= 1e-6, "rescaling changed the pseudo-mask by " + std::to_string(diff));
        }
    }
}

// --- criterion 4: k-means desk-scale optimality ----------------------------

void criterion_kmeans_optimality() {
    Rng rng(0x6EAA);
    for (int seed = 0; seed < 100; ++seed) {
        int m = 2 + int(rng.uniform_index(7));  // point sets of up to 8 points
        Matrix points = uniform_matrix(rng, m, 2, -10, 10);
        pgam::KmeansResult res = pgam::kmeans(points, 2, uint64_t(seed));
        double best_pair = verify::exhaustive_pair_objective(points);
        expect(res.objective <= best_pair + 1e-9,
               "objective " + std::to_string(res.objective) + " exceeds pair oracle " +
                   std::to_string(best_pair));
        for (size_t i = 1; i < res.objective_trace.size(); ++i)
            expect(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-12,
                   "Lloyd objective increased at iteration " + std::to_string(i));
    }
}

// --- criterion 5: cost scaling ----------------------------------------------

void criterion_cost_scaling() {
    auto start = std::chrono::steady_clock::now();
    RunConfig cfg;  // defaults: K=T=5, l3 16x28 (HW=448), N_p=5, C=256
    cfg.bench_repetitions = 10;

    // instrumented MAC comparison at the defaults
    Rng rng(0xC057);
    const int hw = cfg.l3_height * cfg.l3_width;
    Matrix t_q = uniform_matrix(rng, cfg.t_query * hw, cfg.channels, -1, 1);
    Matrix t_s = uniform_matrix(rng, cfg.k_support * hw, cfg.channels, -1, 1);
    Matrix p_h = uniform_matrix(rng, cfg.n_p * cfg.k_support, cfg.channels, -1, 1);
    auto block = [&] {
        return bpam::AttentionBlockParams{uniform_matrix(rng, cfg.channels, cfg.channels, -1, 1),
                                          uniform_matrix(rng, cfg.channels, cfg.channels, -1, 1),
                                          uniform_matrix(rng, cfg.channels, cfg.channels, -1, 1)};
    };
    CostCounter factored;
    bpam::prototype_co_attention(t_q, t_s, p_h, block(), block(), nullptr, &factored);
    bpam::prototype_self_attention(t_q, p_h, block(), block(), nullptr, &factored);
    auto [full_co, full_c1] = verify::full_attention_oracle(t_q, t_s, block());
    auto [full_self, full_c2] = verify::full_attention_oracle(t_q, t_q, block());
    uint64_t full_interaction = full_c1.mac_interaction + full_c2.mac_interaction;
    uint64_t full_total = full_c1.mac_count + full_c2.mac_count;

    expect(factored.mac_interaction * 10 <= full_interaction,
           "interaction MACs not 10x cheaper: " + std::to_string(factored.mac_interaction) +
               " vs " + std::to_string(full_interaction));
    expect(factored.mac_count < full_total, "factored total MACs not below full-rank total");

    verify::CostModel model = verify::cost_model(cfg.k_support, cfg.t_query, cfg.l3_height,
                                                 cfg.l3_width, cfg.n_p, cfg.channels);
    expect(factored.mac_count == model.factored_total() &&
               full_total == model.full_total() &&
               factored.mac_interaction == model.factored_interaction &&
               full_interaction == model.full_interaction,
           "instrumented counters disagree with the cost model");

    // wall-time monotonicity across the prototype-count sweep (factored side)
    std::vector<bench::BenchRow> np_rows;
    for (int n_p : {1, 5, 10, 15, 20})
        np_rows.push_back(bench::bench_point(cfg, "np", 5, 5, n_p, false));
    for (size_t i = 1; i < np_rows.size(); ++i)
        expect(np_rows[i - 1].ns_factored < np_rows[i].ns_factored,
               "time not strictly increasing from N_p=" + std::to_string(np_rows[i - 1].n_p) +
                   " (" + std::to_string(np_rows[i - 1].ns_factored) + " ns) to N_p=" +
                   std::to_string(np_rows[i].n_p) + " (" + std::to_string(np_rows[i].ns_factored) +
                   " ns)");

    // and across the episode-size ladder
    std::vector<bench::BenchRow> kt_rows;
    for (int kt : {5, 10, 20}) kt_rows.push_back(bench::bench_point(cfg, "kt", kt, kt, 5, false));
    for (size_t i = 1; i < kt_rows.size(); ++i)
        expect(kt_rows[i - 1].ns_factored < kt_rows[i].ns_factored,
               "time not strictly increasing from K=T=" + std::to_string(kt_rows[i - 1].k) +
                   " to K=T=" + std::to_string(kt_rows[i].k));

    expect(seconds_since(start) < 300.0, "exceeded the 5 min budget");
}

// --- criterion 6: end-to-end synthetic recovery -----------------------------

void criterion_synthetic_recovery() {
    auto start = std::chrono::steady_clock::now();
    TempTree tmp("recovery");

    // pseudo-masks localize the planted object before any training
    RunConfig cfg;  // defaults, separation 10, seed 42
    Episode episode = synth_episode(cfg.synth_config(), cfg.seed);
    EpisodeRun run = run_episode(cfg, episode, (tmp.root / "run").string());
    expect(run.pseudo_eval.has_value(), "synthetic episode lost its ground truth");
    expect(run.pseudo_eval->j_mean >= 0.5,
           "pseudo-mask J " + std::to_string(run.pseudo_eval->j_mean) + " below the 0.5 floor");

    // 200 training steps halve the total loss
    cfg.jobs = 2;
    std::vector<Episode> episodes;
    for (int e = 0; e < cfg.train_episodes; ++e)
        episodes.push_back(synth_episode(cfg.train_synth_config(), mix_seed(cfg.seed, 0x1e9 + e)));
    TrainResult result = train_demo(episodes, cfg.train_steps, cfg.learning_rate, cfg.seed, cfg);
    double initial = result.trajectory.front().total;
    double final_total = result.trajectory.back().total;
    expect(final_total <= 0.5 * initial,
           "loss went " + std::to_string(initial) + " -> " + std::to_string(final_total) +
               ", less than a 50% cut in " + std::to_string(cfg.train_steps) + " steps");
    expect(seconds_since(start) < 120.0, "exceeded the 2 min budget");
}

// --- criterion 7: prototype-loss mechanism ----------------------------------

void criterion_prototype_loss_direction() {
    RunConfig cfg;
    cfg.jobs = 2;
    std::vector<Episode> episodes;
    for (int e = 0; e < cfg.train_episodes; ++e)
        episodes.push_back(synth_episode(cfg.train_synth_config(), mix_seed(cfg.seed, 0x1e9 + e)));

    RunConfig with = cfg;
    with.lambda_proto = 1.0;
    RunConfig without = cfg;
    without.lambda_proto = 0.0;
    TrainResult r_with = train_demo(episodes, cfg.train_steps, cfg.learning_rate, cfg.seed, with);
    TrainResult r_without =
        train_demo(episodes, cfg.train_steps, cfg.learning_rate, cfg.seed, without);
    expect(r_with.final_proto_mean < r_without.final_proto_mean,
           "mean pairwise prototype cosine with the loss (" +
               std::to_string(r_with.final_proto_mean) + ") is not below the run without it (" +
               std::to_string(r_without.final_proto_mean) + ")");
}

// --- criterion 8: metrics correctness ----------------------------------------

Mask acceptance_square(int h, int w, int y0, int x0, int size) {
    Mask m = make_mask(h, w);
    for (int y = y0; y < y0 + size; ++y)
        for (int x = x0; x < x0 + size; ++x) m.at(y, x) = 1.f;
    return m;
}

void criterion_metrics_correctness() {
    // example table
    Mask a = acceptance_square(20, 20, 4, 4, 10);
    expect(metrics::region_similarity(a, a) == 1.0, "J(identical) != 1");
    Mask b = acceptance_square(20, 20, 0, 0, 2);
    Mask c = acceptance_square(20, 20, 10, 10, 2);
    expect(metrics::region_similarity(b, c) == 0.0, "J(disjoint) != 0");
    Mask full = make_mask(6, 8, 1.f);
    Mask left = make_mask(6, 8);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 4; ++x) left.at(y, x) = 1.f;
    expect(metrics::region_similarity(left, full) == 0.5, "J(half) != 0.5");
    Mask empty = make_mask(20, 20);
    expect(metrics::region_similarity(empty, empty) == 1.0, "J(empty,empty) != 1");

    expect(metrics::contour_accuracy(a, a, 0) == 1.0, "F(identical) != 1");
    Mask shifted = acceptance_square(20, 20, 5, 5, 10);
    expect(metrics::contour_accuracy(a, shifted, 1) == 1.0, "F(1px shift, tol 1) != 1");
    expect(metrics::contour_accuracy(b, c, 2) == 0.0, "F(far apart) != 0");
    expect(metrics::contour_accuracy(empty, empty, 1) == 1.0, "F(empty,empty) != 1");
    expect(metrics::contour_accuracy(empty, a, 1) == 0.0, "F(one empty) != 0");

    // tolerance-0 boundary F against the naive pairwise oracle
    Rng rng(0x0F0F);
    for (int rep = 0; rep < 50; ++rep) {
        int h = 4 + int(rng.uniform_index(29));
        int w = 4 + int(rng.uniform_index(29));
        Mask pred = make_mask(h, w);
        Mask gt = make_mask(h, w);
        for (float& v : pred.data) v = rng.uniform() < 0.35 ? 1.f : 0.f;
        for (float& v : gt.data) v = rng.uniform() < 0.35 ? 1.f : 0.f;
        double impl = metrics::contour_accuracy(pred, gt, 0);
        double oracle = verify::contour_accuracy_oracle(pred, gt, 0);
        expect(impl == oracle, "tolerance-0 F mismatch: " + std::to_string(impl) + " vs " +
                                   std::to_string(oracle));
    }
}

}  // namespace

int main() {
    std::printf("hpan acceptance suite\n");
    run_criterion(1, "formula fidelity against dense oracles", criterion_formula_fidelity);
    run_criterion(2, "analytic gradients match finite differences", criterion_gradient_suite);
    run_criterion(3, "pseudo-mask range, extremes, scale invariance",
                  criterion_pseudo_mask_properties);
    run_criterion(4, "k-means optimality at desk scale", criterion_kmeans_optimality);
    run_criterion(5, "factored attention cost scaling", criterion_cost_scaling);
    run_criterion(6, "end-to-end synthetic recovery", criterion_synthetic_recovery);
    run_criterion(7, "prototype loss spreads prototypes", criterion_prototype_loss_direction);
    run_criterion(8, "J/F metrics correctness", criterion_metrics_correctness);

    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
