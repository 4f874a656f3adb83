#include "metrics.hpp"

#include <algorithm>
#include <cmath>

namespace hpan::metrics {

namespace {

std::vector<char> binarize(const Mask& m) {
    std::vector<char> b(m.data.size());
    for (size_t i = 0; i < m.data.size(); ++i) b[i] = m.data[i] >= 0.5f;
    return b;
}

void check_shapes(const Mask& pred, const Mask& gt) {
    require(pred.height == gt.height && pred.width == gt.width, ErrorKind::bad_shape,
            "metrics: mask shape mismatch");
}

}  // namespace

double region_similarity(const Mask& pred, const Mask& gt) {
    check_shapes(pred, gt);
    std::vector<char> p = binarize(pred), g = binarize(gt);
    long inter = 0, uni = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        inter += p[i] && g[i];
        uni += p[i] || g[i];
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

int default_boundary_tolerance(int height, int width) {
    return int(std::ceil(0.008 * std::sqrt(double(height) * height + double(width) * width)));
}

std::vector<int> boundary_pixels(const Mask& mask) {
    std::vector<char> b = binarize(mask);
    std::vector<int> out;
    const int h = mask.height, w = mask.width;
    auto fg = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w && b[size_t(y) * w + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!b[size_t(y) * w + x]) continue;
            if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))
                out.push_back(y * w + x);
        }
    return out;
}

namespace {

// Chebyshev dilation of a boundary set by `radius`, as a lookup grid.
std::vector<char> dilate(const std::vector<int>& pixels, int h, int w, int radius) {
    std::vector<char> grid(size_t(h) * w, 0);
    for (int px : pixels) {
        int y = px / w, x = px % w;
        for (int dy = -radius; dy <= radius; ++dy) {
            int yy = y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -radius; dx <= radius; ++dx) {
                int xx = x + dx;
                if (xx < 0 || xx >= w) continue;
                grid[size_t(yy) * w + xx] = 1;
            }
        }
    }
    return grid;
}

}  // namespace

double contour_accuracy(const Mask& pred, const Mask& gt, int tolerance_px) {
    check_shapes(pred, gt);
    require(tolerance_px >= 0, ErrorKind::invalid_argument, "tolerance must be >= 0");
    std::vector<int> pb = boundary_pixels(pred);
    std::vector<int> gb = boundary_pixels(gt);
    if (pb.empty() && gb.empty()) return 1.0;
    if (pb.empty() || gb.empty()) return 0.0;

    const int h = pred.height, w = pred.width;
    std::vector<char> gt_near = dilate(gb, h, w, tolerance_px);
    std::vector<char> pred_near = dilate(pb, h, w, tolerance_px);

    long matched_pred = 0;
    for (int px : pb) matched_pred += gt_near[size_t(px)];
    long matched_gt = 0;
    for (int px : gb) matched_gt += pred_near[size_t(px)];

    double precision = double(matched_pred) / double(pb.size());
    double recall = double(matched_gt) / double(gb.size());
    if (precision + recall == 0) return 0.0;
    return 2 * precision * recall / (precision + recall);
}

double contour_accuracy(const Mask& pred, const Mask& gt) {
    return contour_accuracy(pred, gt, default_boundary_tolerance(pred.height, pred.width));
}

EvalResult evaluate_episode(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
    require(preds.size() == gts.size(), ErrorKind::bad_shape, "metrics: frame count mismatch");
    require(!preds.empty(), ErrorKind::invalid_argument, "metrics: no frames");
    EvalResult r;
    for (size_t t = 0; t < preds.size(); ++t) {
        r.j_per_frame.push_back(region_similarity(preds[t], gts[t]));
        r.f_per_frame.push_back(contour_accuracy(preds[t], gts[t]));
    }
    for (double v : r.j_per_frame) r.j_mean += v;
    for (double v : r.f_per_frame) r.f_mean += v;
    r.j_mean /= double(r.j_per_frame.size());
    r.f_mean /= double(r.f_per_frame.size());
    return r;
}

}  // namespace hpan::metrics
