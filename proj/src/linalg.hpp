#pragma once

#include <Eigen/Dense>

#include "common.hpp"
#include "tensor.hpp"

namespace hpan {

// All in-memory numerics run at 64-bit; f32 appears only in the container.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// FeatureMap (C,H,W) -> pixel matrix with one row per pixel (row = y*W + x)
// and one column per channel.
inline Matrix pixel_matrix(const FeatureMap& fm) {
    Matrix m(fm.height * fm.width, fm.channels);
    for (int c = 0; c < fm.channels; ++c)
        for (int y = 0; y < fm.height; ++y)
            for (int x = 0; x < fm.width; ++x) m(y * fm.width + x, c) = fm.at(c, y, x);
    return m;
}

inline FeatureMap to_feature_map(const Matrix& m, Level level, int height, int width) {
    require(m.rows() == Eigen::Index(height) * width, ErrorKind::bad_shape,
            "pixel matrix rows do not match dims");
    FeatureMap fm = make_feature_map(level, int(m.cols()), height, width);
    for (int c = 0; c < fm.channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) fm.at(c, y, x) = float(m(y * width + x, c));
    return fm;
}

inline Vector mask_vector(const Mask& mask) {
    Vector v(mask.height * mask.width);
    for (int i = 0; i < int(mask.data.size()); ++i) v[i] = mask.data[i];
    return v;
}

inline Mask to_mask(const Vector& v, int height, int width) {
    require(v.size() == Eigen::Index(height) * width, ErrorKind::bad_shape,
            "mask vector size does not match dims");
    Mask m = make_mask(height, width);
    for (int i = 0; i < int(v.size()); ++i)
        m.data[i] = float(std::clamp(v[i], 0.0, 1.0));
    return m;
}

inline Matrix uniform_matrix(Rng& rng, int rows, int cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace hpan
