#pragma once

#include <vector>

#include "tensor.hpp"

namespace hpan::metrics {

// Region similarity J: |pred & gt| / |pred | gt|, both-empty = 1.
// Soft inputs are binarized at 0.5.
double region_similarity(const Mask& pred, const Mask& gt);

// Default boundary tolerance per the DAVIS convention: ceil(0.008 * diagonal).
int default_boundary_tolerance(int height, int width);

// Contour accuracy F: boundary pixels are foreground pixels with a
// 4-neighbour outside the mask (out-of-image counts as background); a pixel
// matches when a counterpart boundary pixel lies within the given Chebyshev
// distance. F = 2PR/(P+R); both boundaries empty = 1, exactly one empty = 0.
double contour_accuracy(const Mask& pred, const Mask& gt, int tolerance_px);
double contour_accuracy(const Mask& pred, const Mask& gt);  // default tolerance

// Boundary extraction, exposed for oracle cross-checks: pixel indices y*W+x.
std::vector<int> boundary_pixels(const Mask& mask);

struct EvalResult {
    std::vector<double> j_per_frame;
    std::vector<double> f_per_frame;
    double j_mean = 0;
    double f_mean = 0;
};

EvalResult evaluate_episode(const std::vector<Mask>& preds, const std::vector<Mask>& gts);

}  // namespace hpan::metrics
