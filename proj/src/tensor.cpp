#include "tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>

namespace hpan {

namespace {

constexpr char kMagic[4] = {'H', 'P', 'T', 'N'};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

bool host_is_little_endian() {
    const uint32_t probe = 1;
    return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

void check_positive_dims(int channels, int height, int width) {
    require(channels > 0 && height > 0 && width > 0, ErrorKind::bad_shape,
            "tensor dims must be positive");
}

}  // namespace

void FeatureMap::validate() const {
    check_positive_dims(channels, height, width);
    require(data.size() == size_t(channels) * height * width, ErrorKind::bad_shape,
            "feature map buffer size does not match dims");
    for (float v : data)
        require(std::isfinite(v), ErrorKind::non_finite, "feature map contains NaN/Inf");
}

bool Mask::is_binary() const {
    for (float v : data)
        if (v != 0.f && v != 1.f) return false;
    return true;
}

int Mask::foreground_count() const {
    int n = 0;
    for (float v : data) n += v > 0.f;
    return n;
}

void Mask::validate() const {
    require(height > 0 && width > 0, ErrorKind::bad_shape, "mask dims must be positive");
    require(data.size() == size_t(height) * width, ErrorKind::bad_shape,
            "mask buffer size does not match dims");
    for (float v : data) {
        require(std::isfinite(v), ErrorKind::non_finite, "mask contains NaN/Inf");
        require(v >= 0.f && v <= 1.f, ErrorKind::invalid_value, "mask value outside [0,1]");
    }
}

FeatureMap make_feature_map(Level level, int channels, int height, int width, float fill) {
    check_positive_dims(channels, height, width);
    FeatureMap fm;
    fm.level = level;
    fm.channels = channels;
    fm.height = height;
    fm.width = width;
    fm.data.assign(size_t(channels) * height * width, fill);
    return fm;
}

Mask make_mask(int height, int width, float fill) {
    require(height > 0 && width > 0, ErrorKind::bad_shape, "mask dims must be positive");
    Mask m;
    m.height = height;
    m.width = width;
    m.data.assign(size_t(height) * width, fill);
    return m;
}

void write_tensor_data(const std::string& path, const TensorData& tensor) {
    require(!tensor.dims.empty() && tensor.dims.size() <= kTensorMaxRank, ErrorKind::bad_shape,
            "tensor rank must be in 1..6");
    for (uint64_t d : tensor.dims)
        require(d > 0, ErrorKind::bad_shape, "tensor dims must be positive");
    require(tensor.values.size() == tensor.numel(), ErrorKind::bad_shape,
            "tensor payload size does not match dims");

    std::string header;
    header.reserve(kTensorHeaderBytes);
    header.append(kMagic, 4);
    put_u32(header, kTensorFormatVersion);
    put_u32(header, kTensorDtypeF32);
    put_u32(header, uint32_t(tensor.dims.size()));
    for (uint64_t d : tensor.dims) put_u64(header, d);
    header.resize(kTensorHeaderBytes, '\0');

    FilePtr f(std::fopen(path.c_str(), "wb"));
    require(f != nullptr, ErrorKind::io, "cannot open for writing: " + path);
    require(std::fwrite(header.data(), 1, header.size(), f.get()) == header.size(), ErrorKind::io,
            "write failed: " + path);

    if (host_is_little_endian()) {
        size_t n = tensor.values.size();
        require(std::fwrite(tensor.values.data(), sizeof(float), n, f.get()) == n, ErrorKind::io,
                "write failed: " + path);
    } else {
        for (float v : tensor.values) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            unsigned char le[4] = {static_cast<unsigned char>(bits & 0xff),
                                   static_cast<unsigned char>((bits >> 8) & 0xff),
                                   static_cast<unsigned char>((bits >> 16) & 0xff),
                                   static_cast<unsigned char>((bits >> 24) & 0xff)};
            require(std::fwrite(le, 1, 4, f.get()) == 4, ErrorKind::io, "write failed: " + path);
        }
    }
    require(std::fflush(f.get()) == 0, ErrorKind::io, "flush failed: " + path);
}

TensorData read_tensor_data(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    require(f != nullptr, ErrorKind::io, "cannot open for reading: " + path);

    unsigned char header[kTensorHeaderBytes];
    size_t got = std::fread(header, 1, kTensorHeaderBytes, f.get());
    require(got == kTensorHeaderBytes, ErrorKind::truncated,
            "truncated tensor header: " + path);
    require(std::memcmp(header, kMagic, 4) == 0, ErrorKind::bad_magic,
            "bad magic bytes: " + path);
    uint32_t version = get_u32(header + 4);
    require(version == kTensorFormatVersion, ErrorKind::invalid_value,
            "unsupported container version " + std::to_string(version) + ": " + path);
    uint32_t dtype = get_u32(header + 8);
    require(dtype == kTensorDtypeF32, ErrorKind::invalid_value,
            "unsupported dtype " + std::to_string(dtype) + ": " + path);
    uint32_t rank = get_u32(header + 12);
    require(rank >= 1 && rank <= kTensorMaxRank, ErrorKind::bad_shape,
            "tensor rank out of range: " + path);

    TensorData t;
    t.dims.resize(rank);
    uint64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        t.dims[i] = get_u64(header + 16 + 8 * i);
        require(t.dims[i] > 0, ErrorKind::bad_shape, "zero-sized dim: " + path);
        numel *= t.dims[i];
    }

    t.values.resize(numel);
    if (host_is_little_endian()) {
        got = std::fread(t.values.data(), sizeof(float), numel, f.get());
        require(got == numel, ErrorKind::truncated, "truncated tensor payload: " + path);
    } else {
        for (uint64_t i = 0; i < numel; ++i) {
            unsigned char le[4];
            require(std::fread(le, 1, 4, f.get()) == 4, ErrorKind::truncated,
                    "truncated tensor payload: " + path);
            uint32_t bits = uint32_t(le[0]) | uint32_t(le[1]) << 8 | uint32_t(le[2]) << 16 |
                            uint32_t(le[3]) << 24;
            std::memcpy(&t.values[i], &bits, 4);
        }
    }
    // reject trailing garbage so round-trips are bit-exact
    unsigned char extra;
    require(std::fread(&extra, 1, 1, f.get()) == 0, ErrorKind::invalid_value,
            "trailing bytes after payload: " + path);
    return t;
}

void write_tensor(const std::string& path, const FeatureMap& fm) {
    fm.validate();
    TensorData t;
    t.dims = {uint64_t(fm.channels), uint64_t(fm.height), uint64_t(fm.width)};
    t.values = fm.data;
    write_tensor_data(path, t);
}

void write_tensor(const std::string& path, const Mask& mask) {
    mask.validate();
    TensorData t;
    t.dims = {uint64_t(mask.height), uint64_t(mask.width)};
    t.values = mask.data;
    write_tensor_data(path, t);
}

FeatureMap load_feature_map(const std::string& path, Level level) {
    TensorData t = read_tensor_data(path);
    require(t.dims.size() == 3, ErrorKind::bad_shape,
            "expected rank-3 feature map, got rank " + std::to_string(t.dims.size()) + ": " + path);
    FeatureMap fm;
    fm.level = level;
    fm.channels = int(t.dims[0]);
    fm.height = int(t.dims[1]);
    fm.width = int(t.dims[2]);
    fm.data = std::move(t.values);
    fm.validate();
    return fm;
}

Mask load_mask(const std::string& path) {
    TensorData t = read_tensor_data(path);
    require(t.dims.size() == 2, ErrorKind::bad_shape,
            "expected rank-2 mask, got rank " + std::to_string(t.dims.size()) + ": " + path);
    Mask m;
    m.height = int(t.dims[0]);
    m.width = int(t.dims[1]);
    m.data = std::move(t.values);
    m.validate();
    return m;
}

LoadedTensor load_tensor(const std::string& path) {
    TensorData t = read_tensor_data(path);
    if (t.dims.size() == 2) {
        Mask m;
        m.height = int(t.dims[0]);
        m.width = int(t.dims[1]);
        m.data = std::move(t.values);
        m.validate();
        return m;
    }
    if (t.dims.size() == 3) {
        FeatureMap fm;
        fm.channels = int(t.dims[0]);
        fm.height = int(t.dims[1]);
        fm.width = int(t.dims[2]);
        fm.data = std::move(t.values);
        fm.validate();
        return fm;
    }
    fail(ErrorKind::bad_shape,
         "rank " + std::to_string(t.dims.size()) + " is neither mask nor feature map: " + path);
}

Mask resample_mask(const Mask& mask, int out_h, int out_w, ResampleMode mode) {
    mask.validate();
    require(out_h >= 1 && out_w >= 1, ErrorKind::invalid_argument,
            "resample target dims must be >= 1");
    if (out_h == mask.height && out_w == mask.width) return mask;

    Mask out = make_mask(out_h, out_w);
    const double sy = double(mask.height) / out_h;
    const double sx = double(mask.width) / out_w;

    if (mode == ResampleMode::nearest) {
        for (int y = 0; y < out_h; ++y) {
            int iy = std::min(mask.height - 1, int((y + 0.5) * sy));
            for (int x = 0; x < out_w; ++x) {
                int ix = std::min(mask.width - 1, int((x + 0.5) * sx));
                out.at(y, x) = mask.at(iy, ix);
            }
        }
        return out;
    }

    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, double(mask.height - 1));
        int y0 = int(fy);
        int y1 = std::min(y0 + 1, mask.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, double(mask.width - 1));
            int x0 = int(fx);
            int x1 = std::min(x0 + 1, mask.width - 1);
            double wx = fx - x0;
            double v = (1 - wy) * ((1 - wx) * mask.at(y0, x0) + wx * mask.at(y0, x1)) +
                       wy * ((1 - wx) * mask.at(y1, x0) + wx * mask.at(y1, x1));
            out.at(y, x) = float(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

}  // namespace hpan
