#include "vpa/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vpa/parallel.hpp"

namespace vpa {

namespace {

void check_dims(const Dims& d, const Spacing& s)
{
    if (d.w < 1 || d.h < 1 || d.d < 1)
        throw std::invalid_argument("volume dims must be >= 1");
    if (!(s.x > 0.0f && s.y > 0.0f && s.z > 0.0f))
        throw std::invalid_argument("voxel spacing must be > 0");
}

inline int64_t clampi(int64_t v, int64_t lo, int64_t hi)
{
    return v < lo ? lo : (v > hi ? hi : v);
}

inline bool inside(double x, uint32_t n)
{
    return x >= -0.5 && x <= double(n) - 0.5;
}

} // namespace

Volume::Volume(Dims dims, Spacing spacing, float fill)
    : dims_(dims), spacing_(spacing), data_(dims.count(), fill)
{
    check_dims(dims_, spacing_);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data))
{
    check_dims(dims_, spacing_);
    if (data_.size() != dims_.count())
        throw std::invalid_argument("volume data length does not match dims");
}

LabelVolume::LabelVolume(Dims dims, uint8_t fill)
    : dims_(dims), labels_(dims.count(), fill)
{
    check_dims(dims_, {});
}

LabelVolume::LabelVolume(Dims dims, std::vector<uint8_t> labels)
    : dims_(dims), labels_(std::move(labels))
{
    check_dims(dims_, {});
    if (labels_.size() != dims_.count())
        throw std::invalid_argument("label data length does not match dims");
}

uint8_t LabelVolume::max_label() const
{
    uint8_t m = 0;
    for (uint8_t v : labels_)
        m = std::max(m, v);
    return m;
}

ChannelStack::ChannelStack(uint32_t channels, Dims dims, float fill)
    : channels_(channels), dims_(dims), data_(size_t(channels) * dims.count(), fill)
{
    if (channels < 1)
        throw std::invalid_argument("channel stack needs >= 1 channel");
}

// --- sampling -------------------------------------------------------------

float sample_nearest(const Volume& v, double x, double y, double z)
{
    const Dims& d = v.dims();
    if (!inside(x, d.w) || !inside(y, d.h) || !inside(z, d.d))
        return 0.0f;
    const int64_t ix = clampi(int64_t(std::floor(x + 0.5)), 0, d.w - 1);
    const int64_t iy = clampi(int64_t(std::floor(y + 0.5)), 0, d.h - 1);
    const int64_t iz = clampi(int64_t(std::floor(z + 0.5)), 0, d.d - 1);
    return v.data()[v.index(uint32_t(ix), uint32_t(iy), uint32_t(iz))];
}

uint8_t sample_label_nearest(const LabelVolume& l, double x, double y, double z)
{
    const Dims& d = l.dims();
    if (!inside(x, d.w) || !inside(y, d.h) || !inside(z, d.d))
        return 0;
    const int64_t ix = clampi(int64_t(std::floor(x + 0.5)), 0, d.w - 1);
    const int64_t iy = clampi(int64_t(std::floor(y + 0.5)), 0, d.h - 1);
    const int64_t iz = clampi(int64_t(std::floor(z + 0.5)), 0, d.d - 1);
    return l.data()[l.index(uint32_t(ix), uint32_t(iy), uint32_t(iz))];
}

float sample_linear(const Volume& v, double x, double y, double z)
{
    const Dims& d = v.dims();
    if (!inside(x, d.w) || !inside(y, d.h) || !inside(z, d.d))
        return 0.0f;
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const int64_t ix = int64_t(fx), iy = int64_t(fy), iz = int64_t(fz);
    const double px = x - fx, py = y - fy, pz = z - fz;
    const int64_t x0 = clampi(ix, 0, d.w - 1), x1 = clampi(ix + 1, 0, d.w - 1);
    const int64_t y0 = clampi(iy, 0, d.h - 1), y1 = clampi(iy + 1, 0, d.h - 1);
    const int64_t z0 = clampi(iz, 0, d.d - 1), z1 = clampi(iz + 1, 0, d.d - 1);
    const float* p = v.data();
    auto val = [&](int64_t a, int64_t b, int64_t c) {
        return double(p[a + size_t(d.w) * (b + size_t(d.h) * c)]);
    };
    const double c00 = val(x0, y0, z0) * (1 - px) + val(x1, y0, z0) * px;
    const double c10 = val(x0, y1, z0) * (1 - px) + val(x1, y1, z0) * px;
    const double c01 = val(x0, y0, z1) * (1 - px) + val(x1, y0, z1) * px;
    const double c11 = val(x0, y1, z1) * (1 - px) + val(x1, y1, z1) * px;
    const double c0 = c00 * (1 - py) + c10 * py;
    const double c1 = c01 * (1 - py) + c11 * py;
    return float(c0 * (1 - pz) + c1 * pz);
}

namespace {

// Catmull-Rom weights (cardinal spline, tension 0.5). At t == 0 the weights
// are exactly (0,1,0,0) so on-grid samples reproduce the input bitwise.
inline void catmull_rom_weights(double t, double w[4])
{
    const double t2 = t * t, t3 = t2 * t;
    w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
    w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
    w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
    w[3] = 0.5 * (t3 - t2);
}

} // namespace

float sample_cubic(const Volume& v, double x, double y, double z)
{
    const Dims& d = v.dims();
    if (!inside(x, d.w) || !inside(y, d.h) || !inside(z, d.d))
        return 0.0f;
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const int64_t ix = int64_t(fx), iy = int64_t(fy), iz = int64_t(fz);
    double wx[4], wy[4], wz[4];
    catmull_rom_weights(x - fx, wx);
    catmull_rom_weights(y - fy, wy);
    catmull_rom_weights(z - fz, wz);
    int64_t xi[4], yi[4], zi[4];
    for (int k = 0; k < 4; ++k) {
        xi[k] = clampi(ix - 1 + k, 0, d.w - 1);
        yi[k] = clampi(iy - 1 + k, 0, d.h - 1);
        zi[k] = clampi(iz - 1 + k, 0, d.d - 1);
    }
    const float* p = v.data();
    double acc = 0.0;
    for (int kz = 0; kz < 4; ++kz) {
        double plane = 0.0;
        for (int ky = 0; ky < 4; ++ky) {
            const float* row = p + size_t(d.w) * (size_t(yi[ky]) + size_t(d.h) * size_t(zi[kz]));
            double line = 0.0;
            for (int kx = 0; kx < 4; ++kx)
                line += wx[kx] * double(row[xi[kx]]);
            plane += wy[ky] * line;
        }
        acc += wz[kz] * plane;
    }
    return float(acc);
}

// --- operations -----------------------------------------------------------

Volume normalize_max_one(const Volume& v)
{
    float maxv = 0.0f;
    for (float x : v.vec()) {
        if (!std::isfinite(x))
            throw std::runtime_error("degenerate volume: non-finite intensity");
        maxv = std::max(maxv, x);
    }
    if (maxv <= 0.0f)
        throw std::runtime_error("degenerate volume: maximum is not positive");
    if (maxv == 1.0f)
        return v;
    Volume out(v.dims(), v.spacing());
    const float* src = v.data();
    float* dst = out.data();
    for (size_t i = 0; i < v.size(); ++i)
        dst[i] = src[i] / maxv;
    return out;
}

Volume resample(const Volume& v, Dims target_dims, Spacing target_spacing, Interp method)
{
    if (target_dims.w < 1 || target_dims.h < 1 || target_dims.d < 1)
        throw std::invalid_argument("resample target dims must be >= 1");
    Volume out(target_dims, target_spacing);
    // voxel-0 centers aligned; physical position x*spacing maps across grids
    const double rx = double(target_spacing.x) / double(v.spacing().x);
    const double ry = double(target_spacing.y) / double(v.spacing().y);
    const double rz = double(target_spacing.z) / double(v.spacing().z);
    float* dst = out.data();
    parallel_for(target_dims.d, [&](size_t z) {
        const double sz = double(z) * rz;
        for (uint32_t y = 0; y < target_dims.h; ++y) {
            const double sy = double(y) * ry;
            size_t o = out.index(0, y, uint32_t(z));
            for (uint32_t x = 0; x < target_dims.w; ++x, ++o) {
                const double sx = double(x) * rx;
                switch (method) {
                case Interp::nearest: dst[o] = sample_nearest(v, sx, sy, sz); break;
                case Interp::linear: dst[o] = sample_linear(v, sx, sy, sz); break;
                case Interp::cubic_spline: dst[o] = sample_cubic(v, sx, sy, sz); break;
                }
            }
        }
    });
    return out;
}

LabelVolume resample_labels(const LabelVolume& l, Dims target_dims)
{
    LabelVolume out(target_dims);
    const double rx = double(l.dims().w) / double(target_dims.w);
    const double ry = double(l.dims().h) / double(target_dims.h);
    const double rz = double(l.dims().d) / double(target_dims.d);
    for (uint32_t z = 0; z < target_dims.d; ++z)
        for (uint32_t y = 0; y < target_dims.h; ++y)
            for (uint32_t x = 0; x < target_dims.w; ++x)
                out.at(x, y, z) = sample_label_nearest(l, x * rx, y * ry, z * rz);
    return out;
}

ErrorSplit mse_split(const ChannelStack& output, const LabelVolume& target,
                     const LabelVolume& mask_labels)
{
    if (!(output.dims() == target.dims()) || !(output.dims() == mask_labels.dims()))
        throw std::invalid_argument("mse_split: dims mismatch");
    const uint32_t K = output.channels();
    const size_t n = output.voxels();
    double fg_sum = 0.0, bg_sum = 0.0;
    size_t fg_n = 0, bg_n = 0;
    for (size_t i = 0; i < n; ++i) {
        const uint8_t t = target.data()[i];
        double e = 0.0;
        for (uint32_t c = 0; c < K; ++c) {
            const double want = (t == c + 1) ? 1.0 : 0.0;
            const double diff = double(output.channel(c)[i]) - want;
            e += diff * diff;
        }
        e /= double(K);
        if (mask_labels.data()[i] != 0) {
            fg_sum += e;
            ++fg_n;
        } else {
            bg_sum += e;
            ++bg_n;
        }
    }
    ErrorSplit split;
    if (fg_n)
        split.foreground_mse = fg_sum / double(fg_n);
    if (bg_n)
        split.background_mse = bg_sum / double(bg_n);
    split.total_mse = (fg_sum + bg_sum) / double(n);
    return split;
}

} // namespace vpa
