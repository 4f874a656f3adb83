#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hpan {

SynthConfig RunConfig::synth_config() const {
    SynthConfig s;
    s.k_support = k_support;
    s.t_query = t_query;
    s.channels = channels_in;
    s.l3_height = l3_height;
    s.l3_width = l3_width;
    s.image_height = image_height;
    s.image_width = image_width;
    s.separation = separation;
    return s;
}

SynthConfig RunConfig::train_synth_config() const {
    SynthConfig s = synth_config();
    s.l3_height = train_l3_height;
    s.l3_width = train_l3_width;
    s.image_height = 0;
    s.image_width = 0;
    return s;
}

void RunConfig::validate() const {
    require(k_support >= 1 && t_query >= 1, ErrorKind::config, "K and T must be >= 1");
    require(n_p >= 1, ErrorKind::config, "N_p must be >= 1");
    require(channels >= 1 && channels_in >= 1, ErrorKind::config, "channel dims must be >= 1");
    require(lambda_self >= 0 && lambda_co >= 0, ErrorKind::config,
            "scaling coefficients must be >= 0");
    require(lambda_ce >= 0 && lambda_iou >= 0 && lambda_proto >= 0, ErrorKind::config,
            "loss weights must be >= 0");
    require(tau_fg >= 0 && tau_fg <= 1, ErrorKind::config, "tau_fg must be in [0,1]");
    require(train_steps >= 1, ErrorKind::config, "train_steps must be >= 1");
    require(train_episodes >= 1, ErrorKind::config, "train_episodes must be >= 1");
    require(jobs >= 1, ErrorKind::config, "jobs must be >= 1");
    require(bench_repetitions >= 1, ErrorKind::config, "bench_repetitions must be >= 1");
}

namespace {

// numeric keys in one table so JSON integers can feed real-valued fields
struct NumericSlots {
    std::map<std::string, int RunConfig::*> ints;
    std::map<std::string, double RunConfig::*> reals;
    std::map<std::string, bool RunConfig::*> bools;
    std::map<std::string, std::string RunConfig::*> strings;
};

const NumericSlots& config_slots() {
    static const NumericSlots slots = [] {
        NumericSlots s;
        s.ints = {{"k_support", &RunConfig::k_support},
                  {"t_query", &RunConfig::t_query},
                  {"n_p", &RunConfig::n_p},
                  {"channels", &RunConfig::channels},
                  {"channels_in", &RunConfig::channels_in},
                  {"l3_height", &RunConfig::l3_height},
                  {"l3_width", &RunConfig::l3_width},
                  {"image_height", &RunConfig::image_height},
                  {"image_width", &RunConfig::image_width},
                  {"train_steps", &RunConfig::train_steps},
                  {"train_episodes", &RunConfig::train_episodes},
                  {"train_l3_height", &RunConfig::train_l3_height},
                  {"train_l3_width", &RunConfig::train_l3_width},
                  {"jobs", &RunConfig::jobs},
                  {"bench_repetitions", &RunConfig::bench_repetitions}};
        s.reals = {{"lambda_self", &RunConfig::lambda_self},
                   {"lambda_co", &RunConfig::lambda_co},
                   {"lambda_ce", &RunConfig::lambda_ce},
                   {"lambda_iou", &RunConfig::lambda_iou},
                   {"lambda_proto", &RunConfig::lambda_proto},
                   {"tau_fg", &RunConfig::tau_fg},
                   {"separation", &RunConfig::separation},
                   {"learning_rate", &RunConfig::learning_rate}};
        s.bools = {{"baseline", &RunConfig::baseline},
                   {"literal_graph_value", &RunConfig::literal_graph_value}};
        s.strings = {{"episode_dir", &RunConfig::episode_dir}, {"out_dir", &RunConfig::out_dir}};
        return s;
    }();
    return slots;
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, int64_t value) {
    const NumericSlots& s = config_slots();
    if (key == "seed") {
        cfg.seed = uint64_t(value);
        return;
    }
    if (auto it = s.ints.find(key); it != s.ints.end()) {
        cfg.*(it->second) = int(value);
        return;
    }
    if (auto it = s.reals.find(key); it != s.reals.end()) {
        cfg.*(it->second) = double(value);
        return;
    }
    fail(ErrorKind::config, "unknown integer config key: " + key);
}

void set_config_value(RunConfig& cfg, const std::string& key, double value) {
    const NumericSlots& s = config_slots();
    if (auto it = s.reals.find(key); it != s.reals.end()) {
        cfg.*(it->second) = value;
        return;
    }
    fail(ErrorKind::config, "unknown real config key: " + key);
}

void set_config_value(RunConfig& cfg, const std::string& key, bool value) {
    const NumericSlots& s = config_slots();
    if (auto it = s.bools.find(key); it != s.bools.end()) {
        cfg.*(it->second) = value;
        return;
    }
    fail(ErrorKind::config, "unknown boolean config key: " + key);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const NumericSlots& s = config_slots();
    if (auto it = s.strings.find(key); it != s.strings.end()) {
        cfg.*(it->second) = value;
        return;
    }
    fail(ErrorKind::config, "unknown string config key: " + key);
}

int64_t get_config_int(const RunConfig& cfg, const std::string& key) {
    const NumericSlots& s = config_slots();
    if (key == "seed") return int64_t(cfg.seed);
    if (auto it = s.ints.find(key); it != s.ints.end()) return cfg.*(it->second);
    if (auto it = s.bools.find(key); it != s.bools.end()) return cfg.*(it->second) ? 1 : 0;
    fail(ErrorKind::config, "unknown integer config key: " + key);
}

double get_config_real(const RunConfig& cfg, const std::string& key) {
    const NumericSlots& s = config_slots();
    if (auto it = s.reals.find(key); it != s.reals.end()) return cfg.*(it->second);
    if (auto it = s.ints.find(key); it != s.ints.end()) return double(cfg.*(it->second));
    fail(ErrorKind::config, "unknown real config key: " + key);
}

RunConfig load_config(const std::string& json_path) {
    std::ifstream in(json_path);
    require(in.good(), ErrorKind::io, "cannot open config: " + json_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorKind::config, "bad config JSON: " + std::string(e.what()));
    }
    require(j.is_object(), ErrorKind::config, "config must be a flat JSON object");

    RunConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (value.is_boolean())
            set_config_value(cfg, key, value.get<bool>());
        else if (value.is_number_integer() || value.is_number_unsigned())
            set_config_value(cfg, key, value.get<int64_t>());
        else if (value.is_number_float())
            set_config_value(cfg, key, value.get<double>());
        else if (value.is_string())
            set_config_value(cfg, key, value.get<std::string>());
        else
            fail(ErrorKind::config, "unsupported value type for config key: " + key);
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

HpanParams init_params(uint64_t seed, int channels_in, int channels, double lambda_self,
                       double lambda_co) {
    Rng rng(mix_seed(seed, 0x7a7a));
    const double bound = 1.0 / std::sqrt(double(channels));
    auto mat = [&](int rows, int cols) { return uniform_matrix(rng, rows, cols, -bound, bound); };
    auto graph_block = [&]() {
        pgam::GraphAttentionParams p;
        p.w_key = mat(channels, channels);
        p.w_query = mat(channels, channels);
        p.w_value = mat(channels, channels);
        p.lambda_self = lambda_self;
        p.lambda_co = lambda_co;
        return p;
    };
    auto attn_block = [&]() {
        bpam::AttentionBlockParams p;
        p.w_query = mat(channels, channels);
        p.w_key = mat(channels, channels);
        p.w_value = mat(channels, channels);
        return p;
    };

    HpanParams params;
    params.projection.weight = mat(channels_in, channels);
    params.projection.bias = Vector::Zero(channels);
    params.graph.support_self = graph_block();
    params.graph.query_self = graph_block();
    params.graph.co = graph_block();
    params.bpam.co_inner = attn_block();
    params.bpam.co_outer = attn_block();
    params.bpam.self_inner = attn_block();
    params.bpam.self_outer = attn_block();
    params.head.proj = Vector::Zero(2 * channels);
    params.head.bias = 0;
    return params;
}

HpanParams zero_like(const HpanParams& p) {
    HpanParams z = p;
    z.projection.weight.setZero();
    z.projection.bias.setZero();
    for (auto* g : {&z.graph.support_self, &z.graph.query_self, &z.graph.co}) {
        g->w_key.setZero();
        g->w_query.setZero();
        g->w_value.setZero();
    }
    for (auto* a : {&z.bpam.co_inner, &z.bpam.co_outer, &z.bpam.self_inner, &z.bpam.self_outer}) {
        a->w_query.setZero();
        a->w_key.setZero();
        a->w_value.setZero();
    }
    z.head.proj.setZero();
    z.head.bias = 0;
    return z;
}

namespace {

// Visits every parameter tensor in a fixed order shared by flatten,
// unflatten, the group registry and the SGD update.
template <typename P, typename FnMat, typename FnVec, typename FnScalar>
void visit_params(P& p, FnMat mat, FnVec vec, FnScalar scalar) {
    mat("projection.weight", p.projection.weight);
    vec("projection.bias", p.projection.bias);
    mat("graph.support_self.w_key", p.graph.support_self.w_key);
    mat("graph.support_self.w_query", p.graph.support_self.w_query);
    mat("graph.support_self.w_value", p.graph.support_self.w_value);
    mat("graph.query_self.w_key", p.graph.query_self.w_key);
    mat("graph.query_self.w_query", p.graph.query_self.w_query);
    mat("graph.query_self.w_value", p.graph.query_self.w_value);
    mat("graph.co.w_key", p.graph.co.w_key);
    mat("graph.co.w_query", p.graph.co.w_query);
    mat("graph.co.w_value", p.graph.co.w_value);
    mat("bpam.co_inner.w_query", p.bpam.co_inner.w_query);
    mat("bpam.co_inner.w_key", p.bpam.co_inner.w_key);
    mat("bpam.co_inner.w_value", p.bpam.co_inner.w_value);
    mat("bpam.co_outer.w_query", p.bpam.co_outer.w_query);
    mat("bpam.co_outer.w_key", p.bpam.co_outer.w_key);
    mat("bpam.co_outer.w_value", p.bpam.co_outer.w_value);
    mat("bpam.self_inner.w_query", p.bpam.self_inner.w_query);
    mat("bpam.self_inner.w_key", p.bpam.self_inner.w_key);
    mat("bpam.self_inner.w_value", p.bpam.self_inner.w_value);
    mat("bpam.self_outer.w_query", p.bpam.self_outer.w_query);
    mat("bpam.self_outer.w_key", p.bpam.self_outer.w_key);
    mat("bpam.self_outer.w_value", p.bpam.self_outer.w_value);
    vec("head.proj", p.head.proj);
    scalar("head.bias", p.head.bias);
}

}  // namespace

std::vector<ParamGroupInfo> param_groups(int channels_in, int channels) {
    HpanParams p = init_params(0, channels_in, channels, 0.8, 0.2);
    std::vector<ParamGroupInfo> groups;
    int offset = 0;
    auto add = [&](const std::string& name, int size) {
        groups.push_back({name, offset, size});
        offset += size;
    };
    visit_params(
        p, [&](const char* n, Matrix& m) { add(n, int(m.size())); },
        [&](const char* n, Vector& v) { add(n, int(v.size())); },
        [&](const char* n, double&) { add(n, 1); });
    return groups;
}

Vector flatten_params(const HpanParams& params) {
    HpanParams& p = const_cast<HpanParams&>(params);
    int total = 0;
    visit_params(
        p, [&](const char*, Matrix& m) { total += int(m.size()); },
        [&](const char*, Vector& v) { total += int(v.size()); },
        [&](const char*, double&) { total += 1; });
    Vector flat(total);
    int offset = 0;
    visit_params(
        p,
        [&](const char*, Matrix& m) {
            flat.segment(offset, m.size()) = Eigen::Map<Vector>(m.data(), m.size());
            offset += int(m.size());
        },
        [&](const char*, Vector& v) {
            flat.segment(offset, v.size()) = v;
            offset += int(v.size());
        },
        [&](const char*, double& s) { flat[offset++] = s; });
    return flat;
}

void unflatten_params(const Vector& flat, HpanParams& params) {
    int offset = 0;
    visit_params(
        params,
        [&](const char*, Matrix& m) {
            Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(offset, m.size());
            offset += int(m.size());
        },
        [&](const char*, Vector& v) {
            v = flat.segment(offset, v.size());
            offset += int(v.size());
        },
        [&](const char*, double& s) { s = flat[offset++]; });
    require(offset == flat.size(), ErrorKind::bad_shape, "flattened parameter size mismatch");
}

void axpy_params(HpanParams& dst, const HpanParams& src, double scale) {
    HpanParams& s = const_cast<HpanParams&>(src);
    std::vector<Matrix*> dm, sm;
    std::vector<Vector*> dv, sv;
    std::vector<double*> ds, ss;
    visit_params(
        dst, [&](const char*, Matrix& m) { dm.push_back(&m); },
        [&](const char*, Vector& v) { dv.push_back(&v); },
        [&](const char*, double& x) { ds.push_back(&x); });
    visit_params(
        s, [&](const char*, Matrix& m) { sm.push_back(&m); },
        [&](const char*, Vector& v) { sv.push_back(&v); },
        [&](const char*, double& x) { ss.push_back(&x); });
    for (size_t i = 0; i < dm.size(); ++i) *dm[i] += scale * *sm[i];
    for (size_t i = 0; i < dv.size(); ++i) *dv[i] += scale * *sv[i];
    for (size_t i = 0; i < ds.size(); ++i) *ds[i] += scale * *ss[i];
}

// ---------------------------------------------------------------------------
// Episode tensors
// ---------------------------------------------------------------------------

EpisodeTensors to_tensors(const Episode& episode) {
    episode.validate();
    EpisodeTensors t;
    t.h3 = episode.support[0].features_l3.height;
    t.w3 = episode.support[0].features_l3.width;
    t.h4 = episode.support[0].features_l4.height;
    t.w4 = episode.support[0].features_l4.width;
    t.img_h = episode.image_height;
    t.img_w = episode.image_width;
    t.c_in = episode.support[0].features_l3.channels;

    for (const SupportItem& s : episode.support) {
        t.s_l3.push_back(pixel_matrix(s.features_l3));
        t.s_l4.push_back(pixel_matrix(s.features_l4));
        t.s_mask_l3.push_back(mask_vector(resample_mask(s.mask, t.h3, t.w3, ResampleMode::nearest)));
        t.s_mask_l4.push_back(mask_vector(resample_mask(s.mask, t.h4, t.w4, ResampleMode::nearest)));
    }
    t.has_gt = true;
    for (const QueryItem& q : episode.query) {
        t.q_l3.push_back(pixel_matrix(q.features_l3));
        t.q_l4.push_back(pixel_matrix(q.features_l4));
        if (q.mask)
            t.gt.push_back(mask_vector(*q.mask));
        else
            t.has_gt = false;
    }
    if (!t.has_gt) t.gt.clear();
    return t;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

ForwardArtifacts forward(const EpisodeTensors& ep, const HpanParams& params, const RunConfig& cfg,
                         const FrozenPrototypes* frozen, CostCounter* counter) {
    ForwardArtifacts a;
    a.pseudo = pgam::compute_pseudo_masks_dense(ep.q_l4, ep.s_l4, ep.s_mask_l4);
    for (const Vector& frame : a.pseudo.frames)
        a.pseudo_l3.push_back(head::bilinear_resample(frame, ep.h4, ep.w4, ep.h3, ep.w3));

    const int hw3 = ep.h3 * ep.w3;
    const int k = int(ep.s_l3.size());
    const int t = int(ep.q_l3.size());
    std::vector<Matrix> masked_s(static_cast<size_t>(k));
    std::vector<Matrix> masked_q(static_cast<size_t>(t));
    a.t_s.resize(Eigen::Index(k) * hw3, cfg.channels);
    a.t_q.resize(Eigen::Index(t) * hw3, cfg.channels);
    for (int i = 0; i < k; ++i) {
        masked_s[size_t(i)] = pgam::project_and_mask(ep.s_l3[size_t(i)], ep.s_mask_l3[size_t(i)],
                                                     params.projection);
        a.t_s.middleRows(Eigen::Index(i) * hw3, hw3) = masked_s[size_t(i)];
    }
    for (int i = 0; i < t; ++i) {
        masked_q[size_t(i)] = pgam::project_and_mask(ep.q_l3[size_t(i)], a.pseudo_l3[size_t(i)],
                                                     params.projection);
        a.t_q.middleRows(Eigen::Index(i) * hw3, hw3) = masked_q[size_t(i)];
    }

    if (cfg.baseline) {
        // middle query frame stands in as the sole prototype source; no
        // graph enhancement, no self-attention branch
        if (frozen) {
            a.p_h = frozen->p_q;
        } else {
            const int mid = t / 2;
            a.p_h = pgam::cluster_query_prototypes({masked_q[size_t(mid)]},
                                                   {a.pseudo_l3[size_t(mid)]}, cfg.n_p, cfg.tau_fg,
                                                   mix_seed(cfg.seed, 0xb5));
        }
        a.p_s = a.p_h;
        a.p_q = a.p_h;
        a.a_co = bpam::prototype_co_attention(a.t_q, a.t_s, a.p_h.prototypes, params.bpam.co_inner,
                                              params.bpam.co_outer, &a.co_cache, counter);
        a.a_self = Matrix::Zero(a.a_co.rows(), a.a_co.cols());
    } else {
        if (frozen) {
            a.p_s = frozen->p_s;
            a.p_q = frozen->p_q;
        } else {
            a.p_s = pgam::cluster_support_prototypes(masked_s, ep.s_mask_l3, cfg.n_p, cfg.seed);
            a.p_q = pgam::cluster_query_prototypes(masked_q, a.pseudo_l3, cfg.n_p, cfg.tau_fg,
                                                   cfg.seed);
        }
        a.p_h = pgam::enhance_prototypes(a.p_s, a.p_q, params.graph, &a.enhance_cache,
                                         cfg.literal_graph_value);
        a.a_co = bpam::prototype_co_attention(a.t_q, a.t_s, a.p_h.prototypes, params.bpam.co_inner,
                                              params.bpam.co_outer, &a.co_cache, counter);
        a.a_self = bpam::prototype_self_attention(a.t_q, a.p_h.prototypes, params.bpam.self_inner,
                                                  params.bpam.self_outer, &a.self_cache, counter);
    }

    a.a_h = bpam::holistic_attention(a.a_co, a.a_self, bpam::TokenLayout{t, ep.h3, ep.w3});
    a.preds = head::decode(a.a_h, params.head, ep.img_h, ep.img_w, &a.decode_cache);

    if (ep.has_gt) {
        double ce = head::ce_loss(a.preds, ep.gt);
        double iou = head::iou_loss(a.preds, ep.gt);
        double proto =
            a.p_h.prototypes.rows() >= 2 ? head::proto_loss(a.p_h.prototypes, 1.0) : 0.0;
        a.losses = head::total_loss(ce, iou, proto, cfg.weights());
        a.has_losses = true;
    }
    return a;
}

HpanParams backward(const EpisodeTensors& ep, const HpanParams& params, const RunConfig& cfg,
                    const ForwardArtifacts& fwd) {
    require(ep.has_gt, ErrorKind::invalid_argument, "backward requires ground-truth masks");
    const head::LossWeights w = cfg.weights();
    HpanParams grads = zero_like(params);

    // loss -> predictions
    std::vector<Vector> d_preds = head::ce_loss_backward(fwd.preds, ep.gt);
    std::vector<Vector> d_iou = head::iou_loss_backward(fwd.preds, ep.gt);
    for (size_t i = 0; i < d_preds.size(); ++i)
        d_preds[i] = w.lambda_ce * d_preds[i] + w.lambda_iou * d_iou[i];

    // predictions -> holistic attention
    head::DecodeGrads dg =
        head::decode_backward(fwd.a_h, params.head, ep.img_h, ep.img_w, fwd.decode_cache, d_preds);
    grads.head.proj = dg.d_proj;
    grads.head.bias = dg.d_bias;

    Matrix d_t_q = Matrix::Zero(fwd.t_q.rows(), fwd.t_q.cols());
    Matrix d_t_s = Matrix::Zero(fwd.t_s.rows(), fwd.t_s.cols());
    Matrix d_p_h = Matrix::Zero(fwd.p_h.prototypes.rows(), fwd.p_h.prototypes.cols());

    bpam::NestedAttentionGrads co_g = bpam::prototype_co_attention_backward(
        fwd.t_q, fwd.t_s, fwd.p_h.prototypes, params.bpam.co_inner, params.bpam.co_outer,
        fwd.co_cache, dg.d_co);
    grads.bpam.co_inner = {co_g.inner.d_w_query, co_g.inner.d_w_key, co_g.inner.d_w_value};
    grads.bpam.co_outer = {co_g.outer.d_w_query, co_g.outer.d_w_key, co_g.outer.d_w_value};
    d_t_q += co_g.d_t_q;
    d_t_s += co_g.d_t_s;
    d_p_h += co_g.d_p_h;

    if (!cfg.baseline) {
        bpam::NestedAttentionGrads self_g = bpam::prototype_self_attention_backward(
            fwd.t_q, fwd.p_h.prototypes, params.bpam.self_inner, params.bpam.self_outer,
            fwd.self_cache, dg.d_self);
        grads.bpam.self_inner = {self_g.inner.d_w_query, self_g.inner.d_w_key,
                                 self_g.inner.d_w_value};
        grads.bpam.self_outer = {self_g.outer.d_w_query, self_g.outer.d_w_key,
                                 self_g.outer.d_w_value};
        d_t_q += self_g.d_t_q;
        d_p_h += self_g.d_p_h;
    }

    if (fwd.p_h.prototypes.rows() >= 2 && w.lambda_proto != 0)
        d_p_h += head::proto_loss_backward(fwd.p_h.prototypes, w.lambda_proto);

    if (!cfg.baseline) {
        // graph attention parameters; raw prototypes are stop-gradient
        pgam::EnhanceGrads eg = pgam::enhance_prototypes_backward(
            fwd.p_s, fwd.p_q, params.graph, fwd.enhance_cache, d_p_h, cfg.literal_graph_value);
        auto copy_graph = [](pgam::GraphAttentionParams& dst, const pgam::GraphAttentionGrads& src) {
            dst.w_key = src.d_w_key;
            dst.w_query = src.d_w_query;
            dst.w_value = src.d_w_value;
        };
        copy_graph(grads.graph.support_self, eg.support);
        copy_graph(grads.graph.query_self, eg.query);
        copy_graph(grads.graph.co, eg.co);
        grads.graph.support_self.lambda_self = 0;
        grads.graph.support_self.lambda_co = 0;
        grads.graph.query_self.lambda_self = 0;
        grads.graph.query_self.lambda_co = 0;
        grads.graph.co.lambda_self = 0;
        grads.graph.co.lambda_co = 0;
    }
    // cfg.baseline: d_p_h ends at the constant middle-frame prototypes

    // tokens -> projection
    const int hw3 = ep.h3 * ep.w3;
    grads.projection.weight = Matrix::Zero(params.projection.weight.rows(),
                                           params.projection.weight.cols());
    grads.projection.bias = Vector::Zero(params.projection.bias.size());
    for (int i = 0; i < int(ep.s_l3.size()); ++i) {
        pgam::ProjectionGrads pg = pgam::project_and_mask_backward(
            ep.s_l3[size_t(i)], ep.s_mask_l3[size_t(i)], params.projection,
            d_t_s.middleRows(Eigen::Index(i) * hw3, hw3));
        grads.projection.weight += pg.d_weight;
        grads.projection.bias += pg.d_bias;
    }
    for (int i = 0; i < int(ep.q_l3.size()); ++i) {
        pgam::ProjectionGrads pg = pgam::project_and_mask_backward(
            ep.q_l3[size_t(i)], fwd.pseudo_l3[size_t(i)], params.projection,
            d_t_q.middleRows(Eigen::Index(i) * hw3, hw3));
        grads.projection.weight += pg.d_weight;
        grads.projection.bias += pg.d_bias;
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Episode run with artifact files
// ---------------------------------------------------------------------------

namespace {

void write_prototype_file(const std::string& path, const pgam::PrototypeSet& set) {
    TensorData t;
    t.dims = {uint64_t(set.prototypes.rows()), uint64_t(set.prototypes.cols())};
    t.values.resize(t.numel());
    size_t idx = 0;
    for (int r = 0; r < set.prototypes.rows(); ++r)
        for (int c = 0; c < set.prototypes.cols(); ++c) t.values[idx++] = float(set.prototypes(r, c));
    write_tensor_data(path, t);
}

json prototype_manifest_entry(const std::string& file, const pgam::PrototypeSet& set) {
    json j;
    j["file"] = file;
    j["origin"] = pgam::prototype_origin_name(set.origin);
    j["n_per_unit"] = set.n_per_unit;
    j["duplicated"] = set.duplicated;
    return j;
}

}  // namespace

EpisodeRun run_episode(const RunConfig& cfg, const Episode& episode, const std::string& out_dir) {
    cfg.validate();
    EpisodeTensors ep = to_tensors(episode);
    HpanParams params = init_params(cfg.seed, ep.c_in, cfg.channels, cfg.lambda_self, cfg.lambda_co);
    ForwardArtifacts fwd = forward(ep, params, cfg);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    require(!ec, ErrorKind::io, "cannot create output dir: " + out_dir);

    EpisodeRun run;
    json manifest;
    manifest["class_id"] = episode.class_id;
    manifest["seed"] = cfg.seed;
    manifest["baseline"] = cfg.baseline;

    json preds = json::array();
    for (size_t t = 0; t < fwd.preds.size(); ++t) {
        Mask m = to_mask(fwd.preds[t], ep.img_h, ep.img_w);
        std::string name = "query_pred" + std::to_string(t) + ".hptn";
        write_tensor((fs::path(out_dir) / name).string(), m);
        preds.push_back(name);
        run.preds.push_back(std::move(m));
    }
    manifest["predictions"] = preds;

    json pseudo = json::array();
    for (size_t t = 0; t < fwd.pseudo.frames.size(); ++t) {
        Mask m = to_mask(fwd.pseudo.frames[t], ep.h4, ep.w4);
        std::string name = "pseudo_mask" + std::to_string(t) + ".hptn";
        write_tensor((fs::path(out_dir) / name).string(), m);
        pseudo.push_back(name);
        run.pseudo_masks.push_back(std::move(m));
    }
    manifest["pseudo_masks"] = pseudo;

    json protos = json::array();
    auto dump_protos = [&](const pgam::PrototypeSet& set, const std::string& stem) {
        std::string name = "prototypes_" + stem + ".hptn";
        write_prototype_file((fs::path(out_dir) / name).string(), set);
        protos.push_back(prototype_manifest_entry(name, set));
    };
    if (!cfg.baseline) {
        dump_protos(fwd.p_s, "support_raw");
        dump_protos(fwd.p_q, "query_raw");
    }
    dump_protos(fwd.p_h, cfg.baseline ? "baseline" : "holistic");
    manifest["prototypes"] = protos;
    run.p_h = fwd.p_h;

    if (ep.has_gt) {
        std::vector<Mask> gts;
        for (const QueryItem& q : episode.query) gts.push_back(*q.mask);
        run.eval = metrics::evaluate_episode(run.preds, gts);
        write_metrics_csv(*run.eval, (fs::path(out_dir) / "metrics.csv").string());
        manifest["metrics_csv"] = "metrics.csv";

        std::vector<Mask> gts_l4;
        for (const Mask& g : gts)
            gts_l4.push_back(resample_mask(g, ep.h4, ep.w4, ResampleMode::nearest));
        run.pseudo_eval = metrics::evaluate_episode(run.pseudo_masks, gts_l4);

        run.losses = fwd.losses;
        manifest["losses"] = {{"ce", fwd.losses.ce},
                              {"iou", fwd.losses.iou},
                              {"proto", fwd.losses.proto},
                              {"total", fwd.losses.total}};
        manifest["j_mean"] = run.eval->j_mean;
        manifest["f_mean"] = run.eval->f_mean;
        manifest["pseudo_j_mean"] = run.pseudo_eval->j_mean;
    }

    std::ofstream out(fs::path(out_dir) / "run.json");
    require(out.good(), ErrorKind::io, "cannot write run.json in " + out_dir);
    out << manifest.dump(2) << "\n";
    require(out.good(), ErrorKind::io, "write failed for run.json");
    return run;
}

// ---------------------------------------------------------------------------
// Training demo
// ---------------------------------------------------------------------------

namespace {

struct EpisodeEval {
    head::LossReport losses;
    HpanParams grads;
};

// Fixed reduction order regardless of job count: workers fill slots, the
// main thread accumulates in index order.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    int n_workers = std::min(jobs, n);
    workers.reserve(size_t(n_workers));
    for (int w = 0; w < n_workers; ++w)
        workers.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (std::thread& th : workers) th.join();
}

}  // namespace

TrainResult train_demo(const std::vector<Episode>& episodes, int steps, double lr, uint64_t seed,
                       const RunConfig& cfg) {
    require(!episodes.empty(), ErrorKind::invalid_argument, "train demo needs episodes");
    require(steps >= 1, ErrorKind::invalid_argument, "steps must be >= 1");

    std::vector<EpisodeTensors> tensors;
    std::vector<RunConfig> episode_cfgs;
    for (size_t e = 0; e < episodes.size(); ++e) {
        tensors.push_back(to_tensors(episodes[e]));
        require(tensors.back().has_gt, ErrorKind::invalid_argument,
                "train demo episodes need ground truth");
        RunConfig c = cfg;
        c.seed = mix_seed(seed, 0xe0 + e);  // clustering stream per episode
        episode_cfgs.push_back(c);
    }

    TrainResult result;
    result.params =
        init_params(seed, tensors[0].c_in, cfg.channels, cfg.lambda_self, cfg.lambda_co);

    const int n_ep = int(episodes.size());
    const double inv_ep = 1.0 / double(n_ep);
    for (int step = 0; step < steps; ++step) {
        std::vector<EpisodeEval> evals(static_cast<size_t>(n_ep));
        parallel_for(n_ep, cfg.jobs, [&](int e) {
            ForwardArtifacts fwd =
                forward(tensors[size_t(e)], result.params, episode_cfgs[size_t(e)]);
            evals[size_t(e)].losses = fwd.losses;
            evals[size_t(e)].grads =
                backward(tensors[size_t(e)], result.params, episode_cfgs[size_t(e)], fwd);
        });

        head::LossReport mean;
        HpanParams grad_sum = zero_like(result.params);
        for (int e = 0; e < n_ep; ++e) {
            mean.ce += evals[size_t(e)].losses.ce * inv_ep;
            mean.iou += evals[size_t(e)].losses.iou * inv_ep;
            mean.proto += evals[size_t(e)].losses.proto * inv_ep;
            mean.total += evals[size_t(e)].losses.total * inv_ep;
            axpy_params(grad_sum, evals[size_t(e)].grads, inv_ep);
        }
        require(std::isfinite(mean.total), ErrorKind::numeric,
                "non-finite loss at step " + std::to_string(step));
        result.trajectory.push_back(mean);
        axpy_params(result.params, grad_sum, -lr);
    }

    double proto_sum = 0;
    for (int e = 0; e < n_ep; ++e) {
        ForwardArtifacts fwd = forward(tensors[size_t(e)], result.params, episode_cfgs[size_t(e)]);
        proto_sum +=
            fwd.p_h.prototypes.rows() >= 2 ? head::proto_loss(fwd.p_h.prototypes, 1.0) : 0.0;
    }
    result.final_proto_mean = proto_sum * inv_ep;
    return result;
}

void write_train_csv(const std::vector<head::LossReport>& trajectory, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    require(f != nullptr, ErrorKind::io, "cannot write " + path);
    std::fprintf(f, "step,ce,iou,proto,total\n");
    for (size_t i = 0; i < trajectory.size(); ++i)
        std::fprintf(f, "%zu,%.9g,%.9g,%.9g,%.9g\n", i, trajectory[i].ce, trajectory[i].iou,
                     trajectory[i].proto, trajectory[i].total);
    require(std::fclose(f) == 0, ErrorKind::io, "write failed for " + path);
}

metrics::EvalResult metrics_dirs(const std::string& pred_dir, const std::string& gt_dir) {
    require(fs::is_directory(pred_dir), ErrorKind::io, "not a directory: " + pred_dir);
    require(fs::is_directory(gt_dir), ErrorKind::io, "not a directory: " + gt_dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(pred_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".hptn")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    require(!names.empty(), ErrorKind::invalid_argument,
            "no .hptn masks under " + pred_dir);

    std::vector<Mask> preds, gts;
    for (const std::string& name : names) {
        std::string gt_path = (fs::path(gt_dir) / name).string();
        require(fs::exists(gt_path), ErrorKind::io, "missing ground-truth mask: " + gt_path);
        preds.push_back(load_mask((fs::path(pred_dir) / name).string()));
        gts.push_back(load_mask(gt_path));
    }
    return metrics::evaluate_episode(preds, gts);
}

void write_metrics_csv(const metrics::EvalResult& eval, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    require(f != nullptr, ErrorKind::io, "cannot write " + path);
    std::fprintf(f, "frame,j,f\n");
    for (size_t i = 0; i < eval.j_per_frame.size(); ++i)
        std::fprintf(f, "%zu,%.9g,%.9g\n", i, eval.j_per_frame[i], eval.f_per_frame[i]);
    require(std::fclose(f) == 0, ErrorKind::io, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

// Relative error of one parameter group: largest absolute deviation over the
// sup-norm of the two gradients. Central differences at the pinned step carry
// O(step^2) truncation on individual near-zero components, so the comparison
// is anchored to the group's gradient scale.
double group_rel_err(const Vector& analytic, const Vector& fd) {
    double scale = std::max({analytic.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), 1e-6});
    return (analytic - fd).cwiseAbs().maxCoeff() / scale;
}

HpanParams random_params(uint64_t seed, int c_in, int c, double lambda_self, double lambda_co) {
    HpanParams p = init_params(seed, c_in, c, lambda_self, lambda_co);
    Rng rng(mix_seed(seed, 0x5eed));
    const double bound = 1.0 / std::sqrt(double(c));
    Vector flat = flatten_params(p);
    for (int i = 0; i < flat.size(); ++i) flat[i] = rng.uniform(-bound, bound);
    unflatten_params(flat, p);
    return p;
}

}  // namespace

std::map<std::string, head::GradCheckEntry> gradcheck(uint64_t seed, bool baseline) {
    // reduced dims: the gradient formulas carry no dimension dependence
    RunConfig cfg;
    cfg.k_support = 2;
    cfg.t_query = 2;
    cfg.n_p = 2;
    cfg.channels = 6;
    cfg.channels_in = 5;
    cfg.l3_height = 4;
    cfg.l3_width = 6;
    cfg.separation = 3.0;
    cfg.seed = seed;
    cfg.baseline = baseline;

    Episode episode = synth_episode(cfg.synth_config(), mix_seed(seed, 0x6e1));
    EpisodeTensors ep = to_tensors(episode);
    HpanParams params = random_params(seed, cfg.channels_in, cfg.channels, cfg.lambda_self,
                                      cfg.lambda_co);

    // freeze raw prototypes at the base point: the analytic pass treats them
    // as constants, so the finite-difference probes must too
    ForwardArtifacts base = forward(ep, params, cfg);
    FrozenPrototypes frozen{base.p_s, base.p_q};
    if (cfg.baseline) frozen.p_q = base.p_h;

    ForwardArtifacts base_frozen = forward(ep, params, cfg, &frozen);
    HpanParams analytic = backward(ep, params, cfg, base_frozen);

    Vector x0 = flatten_params(params);
    auto f = [&](const Vector& x) {
        HpanParams p = params;
        unflatten_params(x, p);
        return forward(ep, p, cfg, &frozen).losses.total;
    };
    Vector fd = verify::finite_diff_grad(f, x0, kGradCheckStep);
    Vector analytic_flat = flatten_params(analytic);

    std::map<std::string, head::GradCheckEntry> report;
    for (const ParamGroupInfo& g : param_groups(cfg.channels_in, cfg.channels)) {
        if (cfg.baseline &&
            (g.name.rfind("graph.", 0) == 0 || g.name.rfind("bpam.self_", 0) == 0))
            continue;  // branches disabled in baseline mode
        double err = group_rel_err(analytic_flat.segment(g.offset, g.size),
                                   fd.segment(g.offset, g.size));
        report[g.name] = {err <= kGradCheckTolerance, err};
    }

    // standalone loss gradients w.r.t. predictions / prototypes
    Rng rng(mix_seed(seed, 0x10f));
    const int frames = 2, pixels = 12;
    std::vector<Vector> pred, gt;
    for (int t = 0; t < frames; ++t) {
        Vector p(pixels), y(pixels);
        for (int i = 0; i < pixels; ++i) {
            p[i] = rng.uniform(0.05, 0.95);
            y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        }
        pred.push_back(p);
        gt.push_back(y);
    }
    auto flatten_frames = [&](const std::vector<Vector>& fs) {
        Vector out(frames * pixels);
        for (int t = 0; t < frames; ++t) out.segment(t * pixels, pixels) = fs[size_t(t)];
        return out;
    };
    auto unflatten_frames = [&](const Vector& v) {
        std::vector<Vector> fs;
        for (int t = 0; t < frames; ++t) fs.push_back(v.segment(t * pixels, pixels));
        return fs;
    };

    {
        Vector fd_ce = verify::finite_diff_grad(
            [&](const Vector& v) { return head::ce_loss(unflatten_frames(v), gt); },
            flatten_frames(pred), kGradCheckStep);
        double err = group_rel_err(flatten_frames(head::ce_loss_backward(pred, gt)), fd_ce);
        report["loss.ce"] = {err <= kGradCheckTolerance, err};
    }
    {
        Vector fd_iou = verify::finite_diff_grad(
            [&](const Vector& v) { return head::iou_loss(unflatten_frames(v), gt); },
            flatten_frames(pred), kGradCheckStep);
        double err = group_rel_err(flatten_frames(head::iou_loss_backward(pred, gt)), fd_iou);
        report["loss.iou"] = {err <= kGradCheckTolerance, err};
    }
    {
        Matrix p_h = uniform_matrix(rng, 4, cfg.channels, -1.0, 1.0);
        Eigen::Map<Vector> p_flat(p_h.data(), p_h.size());
        Vector fd_proto = verify::finite_diff_grad(
            [&](const Vector& v) {
                Matrix m = p_h;
                Eigen::Map<Vector>(m.data(), m.size()) = v;
                return head::proto_loss(m, 1.0);
            },
            Vector(p_flat), kGradCheckStep);
        Matrix an = head::proto_loss_backward(p_h, 1.0);
        double err = group_rel_err(Vector(Eigen::Map<Vector>(an.data(), an.size())), fd_proto);
        report["loss.proto"] = {err <= kGradCheckTolerance, err};
    }
    return report;
}

// ---------------------------------------------------------------------------
// Self-test
// ---------------------------------------------------------------------------

namespace {

bool report_check(const char* name, bool ok) {
    std::printf("%s — %s\n", ok ? "ok  " : "FAIL", name);
    return ok;
}

}  // namespace

bool selftest(const std::string& scratch_dir) {
    std::error_code ec;
    fs::create_directories(scratch_dir, ec);
    require(!ec, ErrorKind::io, "cannot create scratch dir: " + scratch_dir);
    bool ok = true;
    Rng rng(20240801);

    {  // container round-trip
        FeatureMap fm = make_feature_map(Level::l3, 3, 4, 5);
        for (float& v : fm.data) v = float(rng.normal());
        std::string path = (fs::path(scratch_dir) / "selftest.hptn").string();
        write_tensor(path, fm);
        FeatureMap back = load_feature_map(path);
        ok &= report_check("tensor container round-trip",
                           back.data == fm.data && back.channels == 3 && back.height == 4);
    }
    {  // resample identity
        Mask m = make_mask(5, 7);
        for (float& v : m.data) v = rng.uniform() < 0.5 ? 0.f : 1.f;
        ok &= report_check("resample identity",
                           resample_mask(m, 5, 7, ResampleMode::bilinear).data == m.data &&
                               resample_mask(m, 5, 7, ResampleMode::nearest).data == m.data);
    }
    {  // attention vs dense oracle
        bool pass = true;
        for (int rep = 0; rep < 5; ++rep) {
            Matrix q = uniform_matrix(rng, 4, 3, -1, 1), k = uniform_matrix(rng, 5, 3, -1, 1),
                   v = uniform_matrix(rng, 5, 3, -1, 1);
            bpam::AttentionBlockParams p{uniform_matrix(rng, 3, 3, -1, 1),
                                         uniform_matrix(rng, 3, 3, -1, 1),
                                         uniform_matrix(rng, 3, 3, -1, 1)};
            Matrix impl = bpam::attention(q, k, v, p);
            Matrix oracle = verify::dense_attention_oracle(q, k, v, p);
            pass &= (impl - oracle).cwiseAbs().maxCoeff() < 1e-9;
        }
        ok &= report_check("attention agrees with dense oracle", pass);
    }
    {  // graph attention vs oracle
        bool pass = true;
        for (int rep = 0; rep < 5; ++rep) {
            Matrix tgt = uniform_matrix(rng, 3, 4, -1, 1), src = uniform_matrix(rng, 5, 4, -1, 1);
            pgam::GraphAttentionParams p;
            p.w_key = uniform_matrix(rng, 4, 4, -1, 1);
            p.w_query = uniform_matrix(rng, 4, 4, -1, 1);
            p.w_value = uniform_matrix(rng, 4, 4, -1, 1);
            Matrix impl = pgam::graph_attention(tgt, src, 0.7, p);
            Matrix oracle = verify::graph_attention_oracle(tgt, src, 0.7, p);
            pass &= (impl - oracle).cwiseAbs().maxCoeff() < 1e-9;
        }
        ok &= report_check("graph attention agrees with dense oracle", pass);
    }
    {  // losses vs oracles and closed forms
        std::vector<Vector> pred{Vector::Constant(10, 0.5)}, gt{Vector::Zero(10)};
        for (int i = 0; i < 5; ++i) gt[0][i] = 1.0;
        bool pass = std::abs(head::ce_loss(pred, gt) - std::log(2.0)) < 1e-12;
        pass &= std::abs(head::ce_loss(pred, gt) - verify::ce_loss_oracle(pred, gt)) < 1e-12;
        pass &= std::abs(head::iou_loss(pred, gt) - verify::iou_loss_oracle(pred, gt)) < 1e-12;
        Matrix protos = uniform_matrix(rng, 4, 6, -1, 1);
        pass &= std::abs(head::proto_loss(protos, 1.0) - verify::proto_loss_oracle(protos, 1.0)) <
                1e-12;
        ok &= report_check("losses agree with oracles", pass);
    }
    {  // k-means vs exhaustive pair seeding
        bool pass = true;
        for (int rep = 0; rep < 5; ++rep) {
            Matrix pts = uniform_matrix(rng, 7, 2, -1, 1);
            pgam::KmeansResult km = pgam::kmeans(pts, 2, 77 + uint64_t(rep));
            pass &= km.objective <= verify::exhaustive_pair_objective(pts) + 1e-9;
        }
        ok &= report_check("k-means beats exhaustive pair seeding", pass);
    }
    {  // metrics
        Mask a = make_mask(8, 8), b = make_mask(8, 8);
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) a.at(y, x) = 1.f;
        b.data = a.data;
        bool pass = metrics::region_similarity(a, b) == 1.0 && metrics::contour_accuracy(a, b, 0) == 1.0;
        pass &= std::abs(metrics::contour_accuracy(a, b, 0) -
                         verify::contour_accuracy_oracle(a, b, 0)) < 1e-12;
        ok &= report_check("metrics hand cases", pass);
    }
    {  // cost model matches instrumented counters
        RunConfig cfg;
        cfg.k_support = 2;
        cfg.t_query = 2;
        cfg.n_p = 2;
        cfg.channels = 8;
        verify::CostModel model = verify::cost_model(2, 2, 4, 6, 2, 8);
        CostCounter counter;
        Matrix t_q = uniform_matrix(rng, 2 * 24, 8, -1, 1);
        Matrix t_s = uniform_matrix(rng, 2 * 24, 8, -1, 1);
        Matrix p_h = uniform_matrix(rng, 4, 8, -1, 1);
        bpam::AttentionBlockParams p{uniform_matrix(rng, 8, 8, -1, 1),
                                     uniform_matrix(rng, 8, 8, -1, 1),
                                     uniform_matrix(rng, 8, 8, -1, 1)};
        bpam::prototype_co_attention(t_q, t_s, p_h, p, p, nullptr, &counter);
        bpam::prototype_self_attention(t_q, p_h, p, p, nullptr, &counter);
        ok &= report_check("cost model matches instrumented counters",
                           counter.mac_count == model.factored_total() &&
                               counter.mac_interaction == model.factored_interaction);
    }
    {  // full pipeline gradient check
        auto report = gradcheck(4242);
        bool pass = true;
        for (const auto& [name, entry] : report) pass &= entry.pass;
        ok &= report_check("pipeline gradient check", pass);
    }
    return ok;
}

}  // namespace hpan
