#include "episode.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hpan {

namespace {

void check_feature_dims(const FeatureMap& fm, int channels, int h, int w, const std::string& who) {
    require(fm.channels == channels, ErrorKind::bad_shape, who + ": channel count mismatch");
    require(fm.height == h && fm.width == w, ErrorKind::bad_shape, who + ": spatial dims mismatch");
}

struct Blob {
    double cy, cx;  // normalized [0,1] coordinates
    double ry, rx;  // normalized radii
};

bool inside(const Blob& b, double ny, double nx) {
    double dy = (ny - b.cy) / b.ry;
    double dx = (nx - b.cx) / b.rx;
    return dy * dy + dx * dx <= 1.0;
}

Mask rasterize(const std::vector<Blob>& blobs, int h, int w) {
    Mask m = make_mask(h, w);
    for (int y = 0; y < h; ++y) {
        double ny = (y + 0.5) / h;
        for (int x = 0; x < w; ++x) {
            double nx = (x + 0.5) / w;
            for (const Blob& b : blobs) {
                if (inside(b, ny, nx)) {
                    m.at(y, x) = 1.f;
                    break;
                }
            }
        }
    }
    return m;
}

std::vector<double> unit_direction(Rng& rng, int dim) {
    std::vector<double> v(dim);
    double norm2 = 0;
    for (double& x : v) {
        x = rng.normal();
        norm2 += x * x;
    }
    double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    for (double& x : v) x *= inv;
    return v;
}

// Fills one level's features for a frame: foreground pixels (per the
// nearest-downsampled mask, so feature labels match how the pipeline will
// mask them) get separation*class_dir + noise, background pixels get
// separation*site_dir + noise for the nearest distractor site.
FeatureMap fill_features(Rng& rng, const SynthConfig& cfg, Level level, int h, int w,
                         const Mask& image_mask, const std::vector<double>& class_dir,
                         const std::vector<std::vector<double>>& site_dirs,
                         const std::vector<std::pair<double, double>>& site_pos) {
    FeatureMap fm = make_feature_map(level, cfg.channels, h, w);
    Mask level_mask = resample_mask(image_mask, h, w, ResampleMode::nearest);
    for (int y = 0; y < h; ++y) {
        double ny = (y + 0.5) / h;
        for (int x = 0; x < w; ++x) {
            double nx = (x + 0.5) / w;
            const std::vector<double>* dir = &class_dir;
            if (level_mask.at(y, x) == 0.f) {
                size_t best = 0;
                double best_d = 1e300;
                for (size_t s = 0; s < site_pos.size(); ++s) {
                    double dy = ny - site_pos[s].first;
                    double dx = nx - site_pos[s].second;
                    double d = dy * dy + dx * dx;
                    if (d < best_d) {
                        best_d = d;
                        best = s;
                    }
                }
                dir = &site_dirs[best];
            }
            for (int c = 0; c < cfg.channels; ++c)
                fm.at(c, y, x) = float(cfg.separation * (*dir)[c] + cfg.noise_sigma * rng.normal());
        }
    }
    return fm;
}

std::string tensor_name(const std::string& role, int index, const std::string& part) {
    return role + std::to_string(index) + "_" + part + ".hptn";
}

}  // namespace

void SynthConfig::validate() const {
    require(k_support >= 1 && t_query >= 1, ErrorKind::config, "K and T must be >= 1");
    require(channels >= 1, ErrorKind::config, "channels must be >= 1");
    require(l3_height >= 2 && l3_width >= 2, ErrorKind::config, "l3 grid too small");
    require(n_blobs >= 1, ErrorKind::config, "need at least one planted blob");
    require(n_distractors >= 1, ErrorKind::config, "need at least one distractor site");
    require(blob_radius_min > 0 && blob_radius_max >= blob_radius_min, ErrorKind::config,
            "bad blob radius range");
    require(blob_radius_max <= 0.5, ErrorKind::config, "blob larger than grid");
    require(separation >= 0, ErrorKind::config, "separation must be >= 0");
    require(noise_sigma >= 0, ErrorKind::config, "noise sigma must be >= 0");
}

void Episode::validate() const {
    require(!support.empty() && !query.empty(), ErrorKind::bad_shape, "K and T must be >= 1");
    const FeatureMap& ref3 = support[0].features_l3;
    const FeatureMap& ref4 = support[0].features_l4;
    require(ref4.height == (ref3.height + 1) / 2 && ref4.width == (ref3.width + 1) / 2,
            ErrorKind::bad_shape, "l4 dims must be ceil(l3/2)");
    int c = ref3.channels;
    auto check_item = [&](const FeatureMap& f3, const FeatureMap& f4, const std::string& who) {
        f3.validate();
        f4.validate();
        check_feature_dims(f3, c, ref3.height, ref3.width, who + " l3");
        check_feature_dims(f4, c, ref4.height, ref4.width, who + " l4");
    };
    for (size_t i = 0; i < support.size(); ++i) {
        const std::string who = "support[" + std::to_string(i) + "]";
        check_item(support[i].features_l3, support[i].features_l4, who);
        support[i].mask.validate();
        require(support[i].mask.is_binary(), ErrorKind::invalid_value, who + " mask not binary");
        require(support[i].mask.foreground_count() > 0, ErrorKind::invalid_value,
                who + " mask has no foreground");
        require(support[i].mask.height == image_height && support[i].mask.width == image_width,
                ErrorKind::bad_shape, who + " mask dims mismatch");
    }
    for (size_t t = 0; t < query.size(); ++t) {
        const std::string who = "query[" + std::to_string(t) + "]";
        check_item(query[t].features_l3, query[t].features_l4, who);
        if (query[t].mask) {
            query[t].mask->validate();
            require(query[t].mask->is_binary(), ErrorKind::invalid_value, who + " mask not binary");
            require(query[t].mask->height == image_height && query[t].mask->width == image_width,
                    ErrorKind::bad_shape, who + " mask dims mismatch");
        }
    }
}

Episode synth_episode(const SynthConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);

    Episode ep;
    ep.seed = seed;
    ep.class_id = "synthetic-" + std::to_string(seed % 1000000);
    ep.image_height = cfg.image_height > 0 ? cfg.image_height : 4 * cfg.l3_height;
    ep.image_width = cfg.image_width > 0 ? cfg.image_width : 4 * cfg.l3_width;

    std::vector<double> class_dir = unit_direction(rng, cfg.channels);
    std::vector<std::vector<double>> site_dirs;
    for (int s = 0; s < cfg.n_distractors; ++s) site_dirs.push_back(unit_direction(rng, cfg.channels));

    // radii are clamped from below so that every blob covers at least one l4
    // sample point after nearest-downsampling of the image-resolution mask
    const double min_ry = 0.75 / cfg.l4_height();
    const double min_rx = 0.75 / cfg.l4_width();
    require(min_ry <= 0.5 && min_rx <= 0.5, ErrorKind::config,
            "grid too small to plant blobs that survive the l4 downsample");
    auto random_blob = [&](Rng& r) {
        Blob b;
        b.ry = std::max(min_ry, r.uniform(cfg.blob_radius_min, cfg.blob_radius_max));
        b.rx = std::max(min_rx, r.uniform(cfg.blob_radius_min, cfg.blob_radius_max));
        b.cy = r.uniform(b.ry, 1.0 - b.ry);
        b.cx = r.uniform(b.rx, 1.0 - b.rx);
        return b;
    };
    auto random_sites = [&](Rng& r) {
        std::vector<std::pair<double, double>> pos;
        for (int s = 0; s < cfg.n_distractors; ++s) pos.emplace_back(r.uniform(), r.uniform());
        return pos;
    };

    for (int k = 0; k < cfg.k_support; ++k) {
        std::vector<Blob> blobs;
        for (int b = 0; b < cfg.n_blobs; ++b) blobs.push_back(random_blob(rng));
        auto sites = random_sites(rng);
        SupportItem item;
        item.mask = rasterize(blobs, ep.image_height, ep.image_width);
        item.features_l3 = fill_features(rng, cfg, Level::l3, cfg.l3_height, cfg.l3_width,
                                         item.mask, class_dir, site_dirs, sites);
        item.features_l4 = fill_features(rng, cfg, Level::l4, cfg.l4_height(), cfg.l4_width(),
                                         item.mask, class_dir, site_dirs, sites);
        ep.support.push_back(std::move(item));
    }

    // Query blobs share geometry across frames and translate with a constant
    // velocity, reflecting at the borders (temporal coherence).
    std::vector<Blob> qblobs;
    std::vector<std::pair<double, double>> qvel;
    for (int b = 0; b < cfg.n_blobs; ++b) {
        qblobs.push_back(random_blob(rng));
        qvel.emplace_back(rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06));
    }
    auto qsites = random_sites(rng);

    for (int t = 0; t < cfg.t_query; ++t) {
        std::vector<Blob> frame_blobs = qblobs;
        for (size_t b = 0; b < frame_blobs.size(); ++b) {
            Blob& blob = frame_blobs[b];
            double cy = blob.cy + t * qvel[b].first;
            double cx = blob.cx + t * qvel[b].second;
            // reflect into the admissible band [r, 1-r]
            auto reflect = [](double v, double lo, double hi) {
                double span = hi - lo;
                if (span <= 0) return (lo + hi) / 2;
                double u = std::fmod(v - lo, 2 * span);
                if (u < 0) u += 2 * span;
                return lo + (u <= span ? u : 2 * span - u);
            };
            blob.cy = reflect(cy, blob.ry, 1.0 - blob.ry);
            blob.cx = reflect(cx, blob.rx, 1.0 - blob.rx);
        }
        QueryItem item;
        item.mask = rasterize(frame_blobs, ep.image_height, ep.image_width);
        item.features_l3 = fill_features(rng, cfg, Level::l3, cfg.l3_height, cfg.l3_width,
                                         *item.mask, class_dir, site_dirs, qsites);
        item.features_l4 = fill_features(rng, cfg, Level::l4, cfg.l4_height(), cfg.l4_width(),
                                         *item.mask, class_dir, site_dirs, qsites);
        ep.query.push_back(std::move(item));
    }

    ep.validate();
    return ep;
}

void save_episode(const Episode& episode, const std::string& dir) {
    episode.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::io, "cannot create episode dir: " + dir);

    json manifest;
    manifest["class_id"] = episode.class_id;
    manifest["seed"] = episode.seed;
    manifest["image_height"] = episode.image_height;
    manifest["image_width"] = episode.image_width;

    auto write_fm = [&](const FeatureMap& fm, const std::string& name) {
        write_tensor((fs::path(dir) / name).string(), fm);
        return name;
    };
    auto write_m = [&](const Mask& m, const std::string& name) {
        write_tensor((fs::path(dir) / name).string(), m);
        return name;
    };

    json support = json::array();
    for (size_t i = 0; i < episode.support.size(); ++i) {
        json item;
        item["features"]["l3"] = write_fm(episode.support[i].features_l3, tensor_name("support", int(i), "l3"));
        item["features"]["l4"] = write_fm(episode.support[i].features_l4, tensor_name("support", int(i), "l4"));
        item["mask"] = write_m(episode.support[i].mask, tensor_name("support", int(i), "mask"));
        support.push_back(item);
    }
    manifest["support"] = support;

    json query = json::array();
    for (size_t t = 0; t < episode.query.size(); ++t) {
        json item;
        item["features"]["l3"] = write_fm(episode.query[t].features_l3, tensor_name("query", int(t), "l3"));
        item["features"]["l4"] = write_fm(episode.query[t].features_l4, tensor_name("query", int(t), "l4"));
        if (episode.query[t].mask)
            item["mask"] = write_m(*episode.query[t].mask, tensor_name("query", int(t), "mask"));
        else
            item["mask"] = nullptr;
        query.push_back(item);
    }
    manifest["query"] = query;

    std::ofstream out(fs::path(dir) / "episode.json");
    require(out.good(), ErrorKind::io, "cannot write episode.json in " + dir);
    out << manifest.dump(2) << "\n";
    require(out.good(), ErrorKind::io, "write failed for episode.json in " + dir);
}

Episode load_episode(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "episode.json");
    require(in.good(), ErrorKind::io, "cannot open episode.json in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_value, "bad episode.json in " + dir + ": " + e.what());
    }

    Episode ep;
    try {
        ep.class_id = manifest.at("class_id").get<std::string>();
        ep.seed = manifest.at("seed").get<uint64_t>();
        ep.image_height = manifest.at("image_height").get<int>();
        ep.image_width = manifest.at("image_width").get<int>();
        for (const json& item : manifest.at("support")) {
            SupportItem s;
            s.features_l3 = load_feature_map(
                (fs::path(dir) / item.at("features").at("l3").get<std::string>()).string(), Level::l3);
            s.features_l4 = load_feature_map(
                (fs::path(dir) / item.at("features").at("l4").get<std::string>()).string(), Level::l4);
            s.mask = load_mask((fs::path(dir) / item.at("mask").get<std::string>()).string());
            ep.support.push_back(std::move(s));
        }
        for (const json& item : manifest.at("query")) {
            QueryItem q;
            q.features_l3 = load_feature_map(
                (fs::path(dir) / item.at("features").at("l3").get<std::string>()).string(), Level::l3);
            q.features_l4 = load_feature_map(
                (fs::path(dir) / item.at("features").at("l4").get<std::string>()).string(), Level::l4);
            if (!item.at("mask").is_null())
                q.mask = load_mask((fs::path(dir) / item.at("mask").get<std::string>()).string());
            ep.query.push_back(std::move(q));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_value, "bad episode.json in " + dir + ": " + e.what());
    }
    ep.validate();
    return ep;
}

}  // namespace hpan
