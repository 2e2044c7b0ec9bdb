#ifndef VPA_UNET_HPP
#define VPA_UNET_HPP
#include <cstdint>
#include <string>
#include <vector>

#include "vpa/rng.hpp"
#include "vpa/volume.hpp"

namespace vpa {

struct UNetConfig {
    uint32_t in_channels = 1;
    uint32_t out_channels = 5; // K
    uint32_t levels = 5;
    uint32_t base_features = 8; // doubles per level: 8,16,32,64,128
    float bn_momentum = 0.1f;
    float bn_epsilon = 1e-5f;

    void validate() const;
    uint32_t features(uint32_t level) const { return base_features << level; }
    uint32_t pool_divisor() const { return 1u << (levels - 1); }
    bool operator==(const UNetConfig&) const = default;
};

// C-channel grid of T, channel-major, x fastest within a channel.
template <typename T>
struct Grid {
    uint32_t c = 0, d = 0, h = 0, w = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(uint32_t c_, uint32_t d_, uint32_t h_, uint32_t w_)
        : c(c_), d(d_), h(h_), w(w_), v(size_t(c_) * d_ * h_ * w_, T(0))
    {
    }
    size_t voxels() const { return size_t(d) * h * w; }
    size_t size() const { return v.size(); }
    T* channel(uint32_t ch) { return v.data() + size_t(ch) * voxels(); }
    const T* channel(uint32_t ch) const { return v.data() + size_t(ch) * voxels(); }
    void resize(uint32_t c_, uint32_t d_, uint32_t h_, uint32_t w_)
    {
        c = c_;
        d = d_;
        h = h_;
        w = w_;
        v.assign(size_t(c_) * d_ * h_ * w_, T(0));
    }
};

namespace detail {

template <typename T>
struct Conv {
    uint32_t in_ch = 0, out_ch = 0, k = 3;
    std::vector<T> w, b, gw, gb;
};

template <typename T>
struct Norm {
    uint32_t ch = 0;
    std::vector<T> gamma, beta, ggamma, gbeta;
    std::vector<T> running_mean, running_var;
    mutable std::vector<T> saved_mean, saved_invstd; // train-mode batch stats
};

// conv -> ReLU -> BN, twice
template <typename T>
struct Block {
    Conv<T> conv1, conv2;
    Norm<T> bn1, bn2;
};

template <typename T>
struct BlockActs {
    Grid<T> a1, r1, b1, a2, r2, out;
};

template <typename T>
struct Workspace {
    Grid<T> input;
    std::vector<Grid<T>> pooled;                  // pooled input per level >= 1
    std::vector<std::vector<uint32_t>> argmax;    // per pool, per-channel flat offsets
    std::vector<BlockActs<T>> enc, dec;
    std::vector<Grid<T>> cat;                     // concat input per decoder level
    Grid<T> head_out;
};

} // namespace detail

template <typename T>
struct NamedTensorRef {
    std::string name;
    std::vector<uint32_t> shape;
    T* data = nullptr;
    T* grad = nullptr; // nullptr for non-learnable state (BN running stats)
    size_t count = 0;
};

template <typename T>
struct AdamState {
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    uint64_t step = 0;
    std::vector<std::vector<T>> m, v; // parallel to the model's learnable tensors
};

// 3D U-Net with two conv+ReLU+BN stages per level, max-pool downs, nearest
// upsample ups and skip concatenation. Channel plan: with feature count
// f_i = base<<i, every decoder level receives from below exactly as many
// channels as its skip provides, so decoder blocks consume 2*f_i; the
// bottleneck and each decoder's second conv halve the count on the way up.
// The head is a 1x1x1 conv to K channels.
template <typename T>
class Unet {
public:
    Unet() = default;
    Unet(const UNetConfig& config, uint64_t init_seed);

    const UNetConfig& config() const { return config_; }

    // Eval mode: BN uses running statistics, no state mutation; safe for
    // concurrent callers on a shared model.
    Grid<T> forward_eval(const Grid<T>& input) const;
    // Train mode: BN uses per-sample spatial statistics and updates running
    // stats; activations are kept for backward().
    Grid<T> forward_train(const Grid<T>& input);

    // forward_train + MSE-vs-one-hot loss + reverse sweep. Gradients
    // accumulate until adam_step. Returns the loss.
    double backward(const Grid<T>& input, const LabelVolume& label);

    // Standard Adam with bias correction; zeroes gradients afterwards.
    // Throws if no backward() ran since the last step.
    void adam_step(AdamState<T>& state, T learning_rate);

    void zero_grad();
    uint32_t accumulated_backwards() const { return accumulated_; }

    // Stable-order tensor table: conv weight/bias and BN gamma/beta
    // (learnable, grad set), then BN running stats (grad null).
    std::vector<NamedTensorRef<T>> named_tensors();

    bool state_equals(const Unet& other) const;

private:
    void check_input(const Grid<T>& input) const;

    UNetConfig config_;
    uint32_t accumulated_ = 0;
    std::vector<detail::Block<T>> enc_, dec_;
    detail::Conv<T> head_;
    detail::Workspace<T> ws_;
};

// MSE against the one-hot target (label 0 -> all-zero target vector),
// averaged over all voxels and channels. Throws if a label exceeds K.
double loss_mse(const ChannelStack& output, const LabelVolume& label);
template <typename T>
double loss_mse_grid(const Grid<T>& output, const LabelVolume& label);

// conversions between the float volume types and compute grids
ChannelStack to_stack(const Grid<float>& grid, const Spacing& spacing);
Grid<float> to_grid(const ChannelStack& stack);
Grid<float> to_grid(const Volume& volume);

} // namespace vpa
#endif
