#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace hpan {

struct SupportItem {
    FeatureMap features_l3;
    FeatureMap features_l4;
    Mask mask;  // binary, image resolution
};

struct QueryItem {
    FeatureMap features_l3;
    FeatureMap features_l4;
    std::optional<Mask> mask;  // binary ground truth, image resolution
};

// One few-shot task: K support (features, mask) pairs and T query frames.
// Masks live at image resolution and are resampled to feature grids on use.
struct Episode {
    std::vector<SupportItem> support;
    std::vector<QueryItem> query;
    std::string class_id;
    uint64_t seed = 0;
    int image_height = 0;
    int image_width = 0;

    int k() const { return int(support.size()); }
    int t() const { return int(query.size()); }

    // Checks K,T >= 1, shared channel count and per-level dims, the l4 =
    // ceil(l3 / 2) stride relationship, binary support masks with at least
    // one foreground pixel, and finite features.
    void validate() const;
};

// Synthetic stand-in for the frozen encoder. Foreground pixels draw feature
// vectors near a class direction scaled by `separation`; background pixels
// draw near per-site distractor directions. Query blobs translate smoothly
// across frames.
struct SynthConfig {
    int k_support = 5;
    int t_query = 5;
    int channels = 256;  // feature channels at both levels
    int l3_height = 16;
    int l3_width = 28;
    int image_height = 0;  // 0 -> 4 * l3 dims
    int image_width = 0;
    int n_blobs = 1;        // planted foreground blobs per image/frame
    int n_distractors = 3;  // background direction sites
    double blob_radius_min = 0.18;  // normalized to min(image side) = 1
    double blob_radius_max = 0.30;
    double separation = 10.0;  // class-direction scale s
    double noise_sigma = 1.0;

    int l4_height() const { return (l3_height + 1) / 2; }
    int l4_width() const { return (l3_width + 1) / 2; }
    void validate() const;
};

// Pure function of (cfg, seed): equal inputs give bitwise-equal episodes.
Episode synth_episode(const SynthConfig& cfg, uint64_t seed);

// Episode directory layout: `episode.json` manifest naming member tensor
// files by role plus class_id and seed; tensors in the container format.
void save_episode(const Episode& episode, const std::string& dir);
Episode load_episode(const std::string& dir);

}  // namespace hpan
