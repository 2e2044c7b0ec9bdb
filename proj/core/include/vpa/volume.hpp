#ifndef VPA_VOLUME_HPP
#define VPA_VOLUME_HPP
#include <cstdint>
#include <optional>
#include <vector>

namespace vpa {

struct Dims {
    uint32_t w = 0, h = 0, d = 0;
    size_t count() const { return size_t(w) * h * d; }
    bool operator==(const Dims&) const = default;
};

struct Spacing {
    float x = 1.0f, y = 1.0f, z = 1.0f;
    bool operator==(const Spacing&) const = default;
};

// 3D scalar field, float32, row-major with x fastest:
// index = x + w*(y + h*z). Matches NIfTI data order.
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, Spacing spacing = {}, float fill = 0.0f);
    Volume(Dims dims, Spacing spacing, std::vector<float> data);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    size_t size() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    size_t index(uint32_t x, uint32_t y, uint32_t z) const
    {
        return x + size_t(dims_.w) * (y + size_t(dims_.h) * z);
    }
    float& at(uint32_t x, uint32_t y, uint32_t z) { return data_[index(x, y, z)]; }
    float at(uint32_t x, uint32_t y, uint32_t z) const { return data_[index(x, y, z)]; }

private:
    Dims dims_;
    Spacing spacing_;
    std::vector<float> data_;
};

// 3D class-id field, one uint8 per voxel, 0 = background.
class LabelVolume {
public:
    LabelVolume() = default;
    explicit LabelVolume(Dims dims, uint8_t fill = 0);
    LabelVolume(Dims dims, std::vector<uint8_t> labels);

    const Dims& dims() const { return dims_; }
    size_t size() const { return labels_.size(); }

    uint8_t* data() { return labels_.data(); }
    const uint8_t* data() const { return labels_.data(); }
    std::vector<uint8_t>& vec() { return labels_; }
    const std::vector<uint8_t>& vec() const { return labels_; }

    size_t index(uint32_t x, uint32_t y, uint32_t z) const
    {
        return x + size_t(dims_.w) * (y + size_t(dims_.h) * z);
    }
    uint8_t& at(uint32_t x, uint32_t y, uint32_t z) { return labels_[index(x, y, z)]; }
    uint8_t at(uint32_t x, uint32_t y, uint32_t z) const { return labels_[index(x, y, z)]; }

    uint8_t max_label() const;

private:
    Dims dims_;
    std::vector<uint8_t> labels_;
};

// K per-class channels over one voxel grid; channel-major storage, each
// channel laid out like a Volume.
class ChannelStack {
public:
    ChannelStack() = default;
    ChannelStack(uint32_t channels, Dims dims, float fill = 0.0f);

    uint32_t channels() const { return channels_; }
    const Dims& dims() const { return dims_; }
    size_t voxels() const { return dims_.count(); }
    size_t size() const { return data_.size(); }

    float* channel(uint32_t c) { return data_.data() + size_t(c) * dims_.count(); }
    const float* channel(uint32_t c) const { return data_.data() + size_t(c) * dims_.count(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

private:
    uint32_t channels_ = 0;
    Dims dims_;
    std::vector<float> data_;
};

// Foreground/background partition of a mean squared error. A component is
// absent (nullopt) when its voxel set is empty, never reported as zero.
struct ErrorSplit {
    std::optional<double> foreground_mse;
    std::optional<double> background_mse;
    double total_mse = 0.0;
};

enum class Interp { cubic_spline, linear, nearest };

// --- sampling -------------------------------------------------------------
// Real-valued coordinates are in voxel units. A coordinate is inside the
// volume iff it lies within half a voxel of the node range on each axis
// (-0.5 <= x <= w-0.5); outside reads return 0 (air). Edge taps clamp.
float sample_nearest(const Volume& v, double x, double y, double z);
float sample_linear(const Volume& v, double x, double y, double z);
float sample_cubic(const Volume& v, double x, double y, double z);
uint8_t sample_label_nearest(const LabelVolume& l, double x, double y, double z);

// --- operations -----------------------------------------------------------

// Scales so that max(result) == 1. Throws "degenerate volume" on all-zero,
// negative-max, or non-finite input.
Volume normalize_max_one(const Volume& v);

Volume resample(const Volume& v, Dims target_dims, Spacing target_spacing, Interp method);
LabelVolume resample_labels(const LabelVolume& l, Dims target_dims);

// Per-voxel squared error against the one-hot encoding of target, averaged
// over channels, then averaged separately over background (mask==0) and
// foreground (mask!=0) voxels. 64-bit accumulation.
ErrorSplit mse_split(const ChannelStack& output, const LabelVolume& target,
                     const LabelVolume& mask_labels);
inline ErrorSplit mse_split(const ChannelStack& output, const LabelVolume& target)
{
    return mse_split(output, target, target);
}

} // namespace vpa
#endif
