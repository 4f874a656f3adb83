#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "common.hpp"

namespace hpan {

enum class Level { l3, l4 };

inline const char* level_name(Level l) { return l == Level::l3 ? "l3" : "l4"; }

// Dense C x H x W float grid at one pyramid level. Values are stored exactly
// as they appear in the container format (f32, row-major, W fastest).
struct FeatureMap {
    Level level = Level::l3;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // size channels*height*width

    float& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }
    size_t size() const { return data.size(); }

    // throws on non-positive dims, size mismatch or non-finite values
    void validate() const;
};

// Dense H x W grid with values in [0,1]. Binary masks use exactly {0,1}.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // size height*width

    float& at(int y, int x) { return data[size_t(y) * width + x]; }
    float at(int y, int x) const { return data[size_t(y) * width + x]; }
    size_t size() const { return data.size(); }

    bool is_binary() const;
    int foreground_count() const;  // pixels with value > 0
    void validate() const;
};

FeatureMap make_feature_map(Level level, int channels, int height, int width, float fill = 0.f);
Mask make_mask(int height, int width, float fill = 0.f);

// ---------------------------------------------------------------------------
// Tensor container format ("HPTN"), little-endian, bit-exact across writers:
//
//   offset  size        field
//   0       4           magic bytes "HPTN"
//   4       4           format version, u32 = 1
//   8       4           dtype, u32 (0 = f32)
//   12      4           rank, u32 (1..6)
//   16      8*rank      dims, u64 each
//   ..      pad         zero padding up to offset 64
//   64      4*numel     payload, f32 row-major, last dim fastest
//
// The header is always exactly 64 bytes. Masks are rank 2 (H, W), feature
// maps rank 3 (C, H, W); rank-4 tensors are used for holistic attention.
// ---------------------------------------------------------------------------

constexpr size_t kTensorHeaderBytes = 64;
constexpr uint32_t kTensorFormatVersion = 1;
constexpr uint32_t kTensorDtypeF32 = 0;
constexpr uint32_t kTensorMaxRank = 6;

// Untyped view of a container file.
struct TensorData {
    std::vector<uint64_t> dims;
    std::vector<float> values;

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

void write_tensor_data(const std::string& path, const TensorData& tensor);
TensorData read_tensor_data(const std::string& path);

// Typed writers validate invariants (mask range, finite features) first.
void write_tensor(const std::string& path, const FeatureMap& fm);
void write_tensor(const std::string& path, const Mask& mask);

// Typed loads validate rank and all invariants.
FeatureMap load_feature_map(const std::string& path, Level level = Level::l3);
Mask load_mask(const std::string& path);

// Rank-dispatched load: rank 2 -> Mask, rank 3 -> FeatureMap.
using LoadedTensor = std::variant<FeatureMap, Mask>;
LoadedTensor load_tensor(const std::string& path);

// ---------------------------------------------------------------------------
// Mask resampling. Both modes use half-pixel sample centers:
//   nearest:  src = floor((dst + 0.5) * in / out), clamped
//   bilinear: src = (dst + 0.5) * in / out - 0.5, clamped, 2x2 lerp
// Output dims equal to input dims reproduce the input exactly.
// ---------------------------------------------------------------------------

enum class ResampleMode { nearest, bilinear };

Mask resample_mask(const Mask& mask, int out_h, int out_w, ResampleMode mode);

}  // namespace hpan
