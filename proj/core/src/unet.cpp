#include "vpa/unet.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "vpa/parallel.hpp"

namespace vpa {

using detail::Block;
using detail::BlockActs;
using detail::Conv;
using detail::Norm;

void UNetConfig::validate() const
{
    if (levels < 1)
        throw std::invalid_argument("unet: levels must be >= 1");
    if (base_features < 1 || in_channels < 1 || out_channels < 1)
        throw std::invalid_argument("unet: channel counts must be >= 1");
    if (!(bn_epsilon > 0.0f))
        throw std::invalid_argument("unet: bn_epsilon must be > 0");
    if (!(bn_momentum >= 0.0f && bn_momentum <= 1.0f))
        throw std::invalid_argument("unet: bn_momentum must lie in [0,1]");
}

namespace {

// --- convolution ------------------------------------------------------------
// weight layout: w[(((oc*in + ic)*k + kz)*k + ky)*k + kx], zero padding k/2.

template <typename T>
void conv_forward(const Conv<T>& c, const Grid<T>& in, Grid<T>& out)
{
    const uint32_t D = in.d, H = in.h, W = in.w;
    out.resize(c.out_ch, D, H, W);
    const size_t plane = size_t(H) * W;
    const size_t vox = size_t(D) * plane;

    if (c.k == 1) {
        parallel_for(size_t(c.out_ch) * D, [&](size_t job) {
            const uint32_t oc = uint32_t(job / D), z = uint32_t(job % D);
            T* orow = out.v.data() + oc * vox + z * plane;
            for (size_t i = 0; i < plane; ++i)
                orow[i] = c.b[oc];
            for (uint32_t ic = 0; ic < c.in_ch; ++ic) {
                const T wv = c.w[oc * c.in_ch + ic];
                const T* irow = in.v.data() + ic * vox + z * plane;
                for (size_t i = 0; i < plane; ++i)
                    orow[i] += wv * irow[i];
            }
        });
        return;
    }

    parallel_for(size_t(c.out_ch) * D, [&](size_t job) {
        const uint32_t oc = uint32_t(job / D), z = uint32_t(job % D);
        for (uint32_t y = 0; y < H; ++y) {
            T* orow = out.v.data() + oc * vox + z * plane + size_t(y) * W;
            for (uint32_t x = 0; x < W; ++x)
                orow[x] = c.b[oc];
            for (uint32_t ic = 0; ic < c.in_ch; ++ic)
                for (uint32_t kz = 0; kz < 3; ++kz) {
                    const int64_t zz = int64_t(z) + kz - 1;
                    if (zz < 0 || zz >= D)
                        continue;
                    for (uint32_t ky = 0; ky < 3; ++ky) {
                        const int64_t yy = int64_t(y) + ky - 1;
                        if (yy < 0 || yy >= H)
                            continue;
                        const T* irow = in.v.data() + ic * vox + size_t(zz) * plane + size_t(yy) * W;
                        const T* wk = c.w.data() + ((size_t(oc) * c.in_ch + ic) * 3 + kz) * 9 + ky * 3;
                        const T w0 = wk[0], w1 = wk[1], w2 = wk[2];
                        if (W == 1) {
                            orow[0] += w1 * irow[0];
                            continue;
                        }
                        orow[0] += w1 * irow[0] + w2 * irow[1];
                        for (uint32_t x = 1; x + 1 < W; ++x)
                            orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
                        orow[W - 1] += w0 * irow[W - 2] + w1 * irow[W - 1];
                    }
                }
        }
    });
}

// gradient w.r.t. the input: correlate gout with the flipped kernel
template <typename T>
void conv_backward_input(const Conv<T>& c, const Grid<T>& gout, Grid<T>& gin)
{
    const uint32_t D = gout.d, H = gout.h, W = gout.w;
    gin.resize(c.in_ch, D, H, W);
    const size_t plane = size_t(H) * W;
    const size_t vox = size_t(D) * plane;

    if (c.k == 1) {
        parallel_for(size_t(c.in_ch) * D, [&](size_t job) {
            const uint32_t ic = uint32_t(job / D), z = uint32_t(job % D);
            T* grow = gin.v.data() + ic * vox + z * plane;
            for (uint32_t oc = 0; oc < c.out_ch; ++oc) {
                const T wv = c.w[oc * c.in_ch + ic];
                const T* orow = gout.v.data() + oc * vox + z * plane;
                for (size_t i = 0; i < plane; ++i)
                    grow[i] += wv * orow[i];
            }
        });
        return;
    }

    parallel_for(size_t(c.in_ch) * D, [&](size_t job) {
        const uint32_t ic = uint32_t(job / D), z = uint32_t(job % D);
        for (uint32_t y = 0; y < H; ++y) {
            T* grow = gin.v.data() + ic * vox + z * plane + size_t(y) * W;
            for (uint32_t oc = 0; oc < c.out_ch; ++oc)
                for (uint32_t kz = 0; kz < 3; ++kz) {
                    const int64_t zz = int64_t(z) - (int64_t(kz) - 1);
                    if (zz < 0 || zz >= D)
                        continue;
                    for (uint32_t ky = 0; ky < 3; ++ky) {
                        const int64_t yy = int64_t(y) - (int64_t(ky) - 1);
                        if (yy < 0 || yy >= H)
                            continue;
                        const T* orow =
                            gout.v.data() + oc * vox + size_t(zz) * plane + size_t(yy) * W;
                        const T* wk = c.w.data() + ((size_t(oc) * c.in_ch + ic) * 3 + kz) * 9 + ky * 3;
                        const T w0 = wk[0], w1 = wk[1], w2 = wk[2];
                        if (W == 1) {
                            grow[0] += w1 * orow[0];
                            continue;
                        }
                        // source pixel x contributes to output x - (kx-1)
                        grow[0] += w1 * orow[0] + w0 * orow[1];
                        for (uint32_t x = 1; x + 1 < W; ++x)
                            grow[x] += w2 * orow[x - 1] + w1 * orow[x] + w0 * orow[x + 1];
                        grow[W - 1] += w2 * orow[W - 2] + w1 * orow[W - 1];
                    }
                }
        }
    });
}

// gradients w.r.t. weight and bias, accumulated (+=)
template <typename T>
void conv_backward_params(Conv<T>& c, const Grid<T>& in, const Grid<T>& gout)
{
    const uint32_t D = gout.d, H = gout.h, W = gout.w;
    const size_t plane = size_t(H) * W;
    const size_t vox = size_t(D) * plane;

    if (c.k == 1) {
        parallel_for(c.out_ch, [&](size_t oc) {
            T gb_acc = T(0);
            const T* gbase = gout.v.data() + oc * vox;
            for (size_t i = 0; i < vox; ++i)
                gb_acc += gbase[i];
            c.gb[oc] += gb_acc;
            for (uint32_t ic = 0; ic < c.in_ch; ++ic) {
                T acc = T(0);
                const T* ibase = in.v.data() + ic * vox;
                for (size_t i = 0; i < vox; ++i)
                    acc += ibase[i] * gbase[i];
                c.gw[oc * c.in_ch + ic] += acc;
            }
        });
        return;
    }

    parallel_for(c.out_ch, [&](size_t oc) {
        T gb_acc = T(0);
        for (size_t i = 0; i < vox; ++i)
            gb_acc += gout.v[oc * vox + i];
        c.gb[oc] += gb_acc;

        for (uint32_t ic = 0; ic < c.in_ch; ++ic) {
            T acc[27] = {};
            for (uint32_t z = 0; z < D; ++z)
                for (uint32_t y = 0; y < H; ++y) {
                    const T* grow = gout.v.data() + oc * vox + size_t(z) * plane + size_t(y) * W;
                    for (uint32_t kz = 0; kz < 3; ++kz) {
                        const int64_t zz = int64_t(z) + kz - 1;
                        if (zz < 0 || zz >= D)
                            continue;
                        for (uint32_t ky = 0; ky < 3; ++ky) {
                            const int64_t yy = int64_t(y) + ky - 1;
                            if (yy < 0 || yy >= H)
                                continue;
                            const T* irow =
                                in.v.data() + ic * vox + size_t(zz) * plane + size_t(yy) * W;
                            T s0 = T(0), s1 = T(0), s2 = T(0);
                            if (W == 1) {
                                s1 = irow[0] * grow[0];
                            } else {
                                s1 += irow[0] * grow[0];
                                s2 += irow[1] * grow[0];
                                for (uint32_t x = 1; x + 1 < W; ++x) {
                                    const T g = grow[x];
                                    s0 += irow[x - 1] * g;
                                    s1 += irow[x] * g;
                                    s2 += irow[x + 1] * g;
                                }
                                const T g = grow[W - 1];
                                s0 += irow[W - 2] * g;
                                s1 += irow[W - 1] * g;
                            }
                            T* a = acc + (kz * 3 + ky) * 3;
                            a[0] += s0;
                            a[1] += s1;
                            a[2] += s2;
                        }
                    }
                }
            T* gw = c.gw.data() + (size_t(oc) * c.in_ch + ic) * 27;
            for (int i = 0; i < 27; ++i)
                gw[i] += acc[i];
        }
    });
}

// --- ReLU ---------------------------------------------------------------------

template <typename T>
void relu_forward(const Grid<T>& in, Grid<T>& out)
{
    out.resize(in.c, in.d, in.h, in.w);
    for (size_t i = 0; i < in.size(); ++i)
        out.v[i] = in.v[i] > T(0) ? in.v[i] : T(0);
}

template <typename T>
void relu_backward(const Grid<T>& in, Grid<T>& g)
{
    for (size_t i = 0; i < in.size(); ++i)
        if (!(in.v[i] > T(0)))
            g.v[i] = T(0);
}

// --- batch normalization --------------------------------------------------------
// Batch of one: statistics over the spatial dims of each channel.

template <typename T>
void bn_forward(Norm<T>& n, const Grid<T>& in, Grid<T>& out, bool train, T momentum, T eps)
{
    out.resize(in.c, in.d, in.h, in.w);
    const size_t vox = in.voxels();
    if (train) {
        n.saved_mean.resize(in.c);
        n.saved_invstd.resize(in.c);
    }
    parallel_for(in.c, [&](size_t ch) {
        const T* x = in.channel(uint32_t(ch));
        T* y = out.channel(uint32_t(ch));
        if (train) {
            double sum = 0.0;
            for (size_t i = 0; i < vox; ++i)
                sum += double(x[i]);
            const T mean = T(sum / double(vox));
            double var_sum = 0.0;
            for (size_t i = 0; i < vox; ++i) {
                const double dxi = double(x[i]) - double(mean);
                var_sum += dxi * dxi;
            }
            const T var = T(var_sum / double(vox));
            const T invstd = T(1) / std::sqrt(var + eps);
            n.saved_mean[ch] = mean;
            n.saved_invstd[ch] = invstd;
            const T unbiased =
                vox > 1 ? T(var_sum / double(vox - 1)) : var;
            n.running_mean[ch] = (T(1) - momentum) * n.running_mean[ch] + momentum * mean;
            n.running_var[ch] = (T(1) - momentum) * n.running_var[ch] + momentum * unbiased;
            const T a = n.gamma[ch] * invstd;
            const T b = n.beta[ch] - a * mean;
            for (size_t i = 0; i < vox; ++i)
                y[i] = a * x[i] + b;
        } else {
            const T invstd = T(1) / std::sqrt(n.running_var[ch] + eps);
            const T a = n.gamma[ch] * invstd;
            const T b = n.beta[ch] - a * n.running_mean[ch];
            for (size_t i = 0; i < vox; ++i)
                y[i] = a * x[i] + b;
        }
    });
}

// eval-mode-only variant that cannot touch the layer (concurrent eval callers)
template <typename T>
void bn_forward_eval(const Norm<T>& n, const Grid<T>& in, Grid<T>& out, T eps)
{
    out.resize(in.c, in.d, in.h, in.w);
    const size_t vox = in.voxels();
    parallel_for(in.c, [&](size_t ch) {
        const T invstd = T(1) / std::sqrt(n.running_var[ch] + eps);
        const T a = n.gamma[ch] * invstd;
        const T b = n.beta[ch] - a * n.running_mean[ch];
        const T* x = in.channel(uint32_t(ch));
        T* y = out.channel(uint32_t(ch));
        for (size_t i = 0; i < vox; ++i)
            y[i] = a * x[i] + b;
    });
}

// train-mode backward through the batch statistics
template <typename T>
void bn_backward(Norm<T>& n, const Grid<T>& in, const Grid<T>& gout, Grid<T>& gin)
{
    gin.resize(in.c, in.d, in.h, in.w);
    const size_t vox = in.voxels();
    parallel_for(in.c, [&](size_t ch) {
        const T mean = n.saved_mean[ch];
        const T invstd = n.saved_invstd[ch];
        const T* x = in.channel(uint32_t(ch));
        const T* go = gout.channel(uint32_t(ch));
        T* gi = gin.channel(uint32_t(ch));
        double sum_g = 0.0, sum_gx = 0.0;
        for (size_t i = 0; i < vox; ++i) {
            const double xhat = (double(x[i]) - double(mean)) * double(invstd);
            sum_g += double(go[i]);
            sum_gx += double(go[i]) * xhat;
        }
        n.gbeta[ch] += T(sum_g);
        n.ggamma[ch] += T(sum_gx);
        const T inv_n = T(1) / T(double(vox));
        const T k = n.gamma[ch] * invstd;
        const T mg = T(sum_g) * inv_n;
        const T mgx = T(sum_gx) * inv_n;
        for (size_t i = 0; i < vox; ++i) {
            const T xhat = (x[i] - mean) * invstd;
            gi[i] = k * (go[i] - mg - xhat * mgx);
        }
    });
}

// --- max pooling (2x2x2, stride 2) --------------------------------------------

template <typename T>
void pool_forward(const Grid<T>& in, Grid<T>& out, std::vector<uint32_t>& argmax)
{
    const uint32_t D = in.d / 2, H = in.h / 2, W = in.w / 2;
    out.resize(in.c, D, H, W);
    argmax.resize(out.size());
    const size_t iplane = size_t(in.h) * in.w;
    parallel_for(in.c, [&](size_t ch) {
        const T* src = in.channel(uint32_t(ch));
        T* dst = out.channel(uint32_t(ch));
        uint32_t* am = argmax.data() + ch * out.voxels();
        size_t o = 0;
        for (uint32_t z = 0; z < D; ++z)
            for (uint32_t y = 0; y < H; ++y)
                for (uint32_t x = 0; x < W; ++x, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    uint32_t best_i = 0;
                    for (uint32_t dz = 0; dz < 2; ++dz)
                        for (uint32_t dy = 0; dy < 2; ++dy)
                            for (uint32_t dx = 0; dx < 2; ++dx) {
                                const uint32_t idx = uint32_t((size_t(2 * z + dz) * iplane) +
                                                              size_t(2 * y + dy) * in.w + 2 * x + dx);
                                if (src[idx] > best) {
                                    best = src[idx];
                                    best_i = idx;
                                }
                            }
                    dst[o] = best;
                    am[o] = best_i;
                }
        (void)ivox;
    });
}

template <typename T>
void pool_backward(const Grid<T>& gout, const std::vector<uint32_t>& argmax, uint32_t in_d,
                   uint32_t in_h, uint32_t in_w, Grid<T>& gin)
{
    gin.resize(gout.c, in_d, in_h, in_w);
    parallel_for(gout.c, [&](size_t ch) {
        const T* go = gout.channel(uint32_t(ch));
        const uint32_t* am = argmax.data() + ch * gout.voxels();
        T* gi = gin.channel(uint32_t(ch));
        for (size_t i = 0; i < gout.voxels(); ++i)
            gi[am[i]] += go[i];
    });
}

// --- nearest upsample (x2) ------------------------------------------------------

template <typename T>
void upsample_forward(const Grid<T>& in, Grid<T>& out)
{
    out.resize(in.c, in.d * 2, in.h * 2, in.w * 2);
    parallel_for(in.c, [&](size_t ch) {
        const T* src = in.channel(uint32_t(ch));
        T* dst = out.channel(uint32_t(ch));
        size_t o = 0;
        for (uint32_t z = 0; z < out.d; ++z)
            for (uint32_t y = 0; y < out.h; ++y) {
                const T* row = src + (size_t(z / 2) * in.h + y / 2) * in.w;
                for (uint32_t x = 0; x < out.w; ++x, ++o)
                    dst[o] = row[x / 2];
            }
    });
}

template <typename T>
void upsample_backward(const Grid<T>& gout, Grid<T>& gin)
{
    gin.resize(gout.c, gout.d / 2, gout.h / 2, gout.w / 2);
    parallel_for(gout.c, [&](size_t ch) {
        const T* go = gout.channel(uint32_t(ch));
        T* gi = gin.channel(uint32_t(ch));
        size_t o = 0;
        for (uint32_t z = 0; z < gin.d; ++z)
            for (uint32_t y = 0; y < gin.h; ++y)
                for (uint32_t x = 0; x < gin.w; ++x, ++o) {
                    T acc = T(0);
                    for (uint32_t dz = 0; dz < 2; ++dz)
                        for (uint32_t dy = 0; dy < 2; ++dy) {
                            const T* row =
                                go + (size_t(2 * z + dz) * gout.h + 2 * y + dy) * gout.w + 2 * x;
                            acc += row[0] + row[1];
                        }
                    gi[o] = acc;
                }
    });
}

// --- concatenation ----------------------------------------------------------------

template <typename T>
void concat(const Grid<T>& a, const Grid<T>& b, Grid<T>& out)
{
    out.resize(a.c + b.c, a.d, a.h, a.w);
    std::memcpy(out.v.data(), a.v.data(), a.size() * sizeof(T));
    std::memcpy(out.v.data() + a.size(), b.v.data(), b.size() * sizeof(T));
}

// --- layer construction -------------------------------------------------------------

template <typename T>
Conv<T> make_conv(uint32_t in_ch, uint32_t out_ch, uint32_t k, Rng& rng)
{
    Conv<T> c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.k = k;
    const size_t n = size_t(out_ch) * in_ch * k * k * k;
    c.w.resize(n);
    c.b.assign(out_ch, T(0));
    c.gw.assign(n, T(0));
    c.gb.assign(out_ch, T(0));
    // Kaiming-uniform, fan-in mode
    const double bound = std::sqrt(6.0 / (double(in_ch) * k * k * k));
    for (auto& w : c.w)
        w = T(rng.uniform(-bound, bound));
    return c;
}

template <typename T>
Norm<T> make_norm(uint32_t ch)
{
    Norm<T> n;
    n.ch = ch;
    n.gamma.assign(ch, T(1));
    n.beta.assign(ch, T(0));
    n.ggamma.assign(ch, T(0));
    n.gbeta.assign(ch, T(0));
    n.running_mean.assign(ch, T(0));
    n.running_var.assign(ch, T(1));
    return n;
}

template <typename T>
Block<T> make_block(uint32_t in_ch, uint32_t mid_ch, uint32_t out_ch, Rng& rng)
{
    Block<T> b;
    b.conv1 = make_conv<T>(in_ch, mid_ch, 3, rng);
    b.bn1 = make_norm<T>(mid_ch);
    b.conv2 = make_conv<T>(mid_ch, out_ch, 3, rng);
    b.bn2 = make_norm<T>(out_ch);
    return b;
}

} // namespace

// --- model -----------------------------------------------------------------------------

template <typename T>
Unet<T>::Unet(const UNetConfig& config, uint64_t init_seed) : config_(config)
{
    config.validate();
    Rng rng(init_seed);
    const uint32_t L = config.levels;
    enc_.reserve(L);
    for (uint32_t i = 0; i < L; ++i) {
        const uint32_t in_ch = i == 0 ? config.in_channels : config.features(i - 1);
        const uint32_t f = config.features(i);
        // the bottleneck sends features(L-2) channels back up
        const uint32_t out_ch = (L >= 2 && i == L - 1) ? config.features(L - 2) : f;
        enc_.push_back(make_block<T>(in_ch, f, out_ch, rng));
    }
    if (L >= 2) {
        dec_.resize(L - 1);
        for (int32_t i = int32_t(L) - 2; i >= 0; --i) {
            const uint32_t f = config.features(uint32_t(i));
            const uint32_t out_ch = i > 0 ? config.features(uint32_t(i) - 1) : config.features(0);
            dec_[uint32_t(i)] = make_block<T>(2 * f, f, out_ch, rng);
        }
    }
    head_ = make_conv<T>(config.features(0), config.out_channels, 1, rng);
}

template <typename T>
void Unet<T>::check_input(const Grid<T>& input) const
{
    if (input.c != config_.in_channels)
        throw std::invalid_argument("unet: input channel count mismatch");
    const uint32_t div = config_.pool_divisor();
    const char axes[3] = {'x', 'y', 'z'};
    const uint32_t size[3] = {input.w, input.h, input.d};
    for (int a = 0; a < 3; ++a)
        if (size[a] % div != 0)
            throw std::invalid_argument(std::string("unet: input ") + axes[a] + " dim " +
                                        std::to_string(size[a]) + " not divisible by " +
                                        std::to_string(div));
}

template <typename T>
Grid<T> Unet<T>::forward_eval(const Grid<T>& input) const
{
    check_input(input);
    const T eps = T(config_.bn_epsilon);
    const uint32_t L = config_.levels;

    auto run_eval_block = [&](const Block<T>& blk, const Grid<T>& in, Grid<T>& out) {
        Grid<T> a1, r1, b1, a2, r2;
        conv_forward(blk.conv1, in, a1);
        relu_forward(a1, r1);
        bn_forward_eval(blk.bn1, r1, b1, eps);
        conv_forward(blk.conv2, b1, a2);
        relu_forward(a2, r2);
        bn_forward_eval(blk.bn2, r2, out, eps);
    };

    std::vector<Grid<T>> skips(L >= 2 ? L - 1 : 0);
    Grid<T> x, tmp;
    run_eval_block(enc_[0], input, x);
    for (uint32_t i = 1; i < L; ++i) {
        if (i - 1 < skips.size())
            skips[i - 1] = x;
        std::vector<uint32_t> argmax;
        pool_forward(x, tmp, argmax);
        run_eval_block(enc_[i], tmp, x);
    }
    for (int32_t i = int32_t(L) - 2; i >= 0; --i) {
        Grid<T> up, cat_in;
        upsample_forward(x, up);
        concat(skips[uint32_t(i)], up, cat_in);
        run_eval_block(dec_[uint32_t(i)], cat_in, x);
    }
    Grid<T> out;
    conv_forward(head_, x, out);
    return out;
}

template <typename T>
Grid<T> Unet<T>::forward_train(const Grid<T>& input)
{
    check_input(input);
    const T eps = T(config_.bn_epsilon);
    const T mom = T(config_.bn_momentum);
    const uint32_t L = config_.levels;
    ws_.input = input;
    ws_.enc.resize(L);
    ws_.dec.resize(L >= 2 ? L - 1 : 0);
    ws_.pooled.resize(L >= 2 ? L - 1 : 0);
    ws_.argmax.resize(L >= 2 ? L - 1 : 0);
    ws_.cat.resize(L >= 2 ? L - 1 : 0);

    auto run_train_block = [&](Block<T>& blk, const Grid<T>& in, BlockActs<T>& acts) {
        conv_forward(blk.conv1, in, acts.a1);
        relu_forward(acts.a1, acts.r1);
        bn_forward(blk.bn1, acts.r1, acts.b1, true, mom, eps);
        conv_forward(blk.conv2, acts.b1, acts.a2);
        relu_forward(acts.a2, acts.r2);
        bn_forward(blk.bn2, acts.r2, acts.out, true, mom, eps);
    };

    run_train_block(enc_[0], ws_.input, ws_.enc[0]);
    for (uint32_t i = 1; i < L; ++i) {
        pool_forward(ws_.enc[i - 1].out, ws_.pooled[i - 1], ws_.argmax[i - 1]);
        run_train_block(enc_[i], ws_.pooled[i - 1], ws_.enc[i]);
    }
    const Grid<T>* below = &ws_.enc[L - 1].out;
    for (int32_t i = int32_t(L) - 2; i >= 0; --i) {
        Grid<T> up;
        upsample_forward(*below, up);
        concat(ws_.enc[uint32_t(i)].out, up, ws_.cat[uint32_t(i)]);
        run_train_block(dec_[uint32_t(i)], ws_.cat[uint32_t(i)], ws_.dec[uint32_t(i)]);
        below = &ws_.dec[uint32_t(i)].out;
    }
    conv_forward(head_, *below, ws_.head_out);
    return ws_.head_out;
}

template <typename T>
double Unet<T>::backward(const Grid<T>& input, const LabelVolume& label)
{
    if (label.size() != size_t(input.d) * input.h * input.w)
        throw std::invalid_argument("unet backward: label size mismatch");
    forward_train(input);
    const Grid<T>& out = ws_.head_out;
    const uint32_t K = config_.out_channels;
    const size_t n = out.voxels();

    // loss and its gradient; mean over channels and voxels
    double loss_sum = 0.0;
    Grid<T> g(out.c, out.d, out.h, out.w);
    const double inv = 1.0 / (double(K) * double(n));
    for (uint32_t c = 0; c < K; ++c) {
        const T* o = out.channel(c);
        T* gc = g.channel(c);
        const uint8_t* lb = label.data();
        for (size_t i = 0; i < n; ++i) {
            if (lb[i] > K)
                throw std::invalid_argument("unet backward: label value exceeds K");
            const double target = lb[i] == c + 1 ? 1.0 : 0.0;
            const double diff = double(o[i]) - target;
            loss_sum += diff * diff;
            gc[i] = T(2.0 * diff * inv);
        }
    }
    const double loss = loss_sum * inv;

    const uint32_t L = config_.levels;
    auto block_backward = [&](Block<T>& blk, const Grid<T>& in, BlockActs<T>& acts,
                              const Grid<T>& gout, Grid<T>& gin) {
        Grid<T> t1, t2;
        bn_backward(blk.bn2, acts.r2, gout, t1);
        relu_backward(acts.a2, t1);
        conv_backward_params(blk.conv2, acts.b1, t1);
        conv_backward_input(blk.conv2, t1, t2);
        bn_backward(blk.bn1, acts.r1, t2, t1);
        relu_backward(acts.a1, t1);
        conv_backward_params(blk.conv1, in, t1);
        conv_backward_input(blk.conv1, t1, gin);
    };

    // head
    const Grid<T>& head_in = L >= 2 ? ws_.dec[0].out : ws_.enc[0].out;
    conv_backward_params(head_, head_in, g);
    Grid<T> gx;
    conv_backward_input(head_, g, gx);

    // decoder sweep, shallowest first; collect skip gradients per level
    std::vector<Grid<T>> gskip(L >= 2 ? L - 1 : 0);
    for (uint32_t i = 0; i + 1 < L; ++i) {
        Grid<T> gcat;
        block_backward(dec_[i], ws_.cat[i], ws_.dec[i], gx, gcat);
        const uint32_t f = dec_[i].conv1.in_ch / 2;
        Grid<T>& skip = gskip[i];
        skip.resize(f, gcat.d, gcat.h, gcat.w);
        std::memcpy(skip.v.data(), gcat.v.data(), skip.size() * sizeof(T));
        Grid<T> gup(f, gcat.d, gcat.h, gcat.w);
        std::memcpy(gup.v.data(), gcat.v.data() + skip.size(), gup.size() * sizeof(T));
        upsample_backward(gup, gx); // gradient flowing into the level below
    }

    // encoder sweep, deepest first
    for (int32_t i = int32_t(L) - 1; i >= 0; --i) {
        if (uint32_t(i) + 1 < L)
            for (size_t j = 0; j < gx.size(); ++j)
                gx.v[j] += gskip[uint32_t(i)].v[j];
        const Grid<T>& in = i == 0 ? ws_.input : ws_.pooled[uint32_t(i) - 1];
        Grid<T> gin;
        block_backward(enc_[uint32_t(i)], in, ws_.enc[uint32_t(i)], gx, gin);
        if (i > 0) {
            const Grid<T>& enc_out = ws_.enc[uint32_t(i) - 1].out;
            pool_backward(gin, ws_.argmax[uint32_t(i) - 1], enc_out.d, enc_out.h, enc_out.w, gx);
        }
    }

    ++accumulated_;
    return loss;
}

template <typename T>
void Unet<T>::zero_grad()
{
    auto refs = named_tensors();
    for (auto& r : refs)
        if (r.grad)
            std::fill(r.grad, r.grad + r.count, T(0));
    accumulated_ = 0;
}

template <typename T>
void Unet<T>::adam_step(AdamState<T>& state, T learning_rate)
{
    if (accumulated_ == 0)
        throw std::runtime_error("adam_step: no accumulated gradients");
    auto refs = named_tensors();
    std::vector<NamedTensorRef<T>*> learnable;
    for (auto& r : refs)
        if (r.grad)
            learnable.push_back(&r);
    if (state.m.empty()) {
        state.m.resize(learnable.size());
        state.v.resize(learnable.size());
        for (size_t i = 0; i < learnable.size(); ++i) {
            state.m[i].assign(learnable[i]->count, T(0));
            state.v[i].assign(learnable[i]->count, T(0));
        }
    }
    if (state.m.size() != learnable.size())
        throw std::runtime_error("adam_step: state does not match the model");
    ++state.step;
    const T b1 = state.beta1, b2 = state.beta2;
    const T bc1 = T(1) - T(std::pow(double(b1), double(state.step)));
    const T bc2 = T(1) - T(std::pow(double(b2), double(state.step)));
    for (size_t i = 0; i < learnable.size(); ++i) {
        NamedTensorRef<T>& p = *learnable[i];
        if (state.m[i].size() != p.count)
            throw std::runtime_error("adam_step: moment shape mismatch");
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        for (size_t j = 0; j < p.count; ++j) {
            const T grad = p.grad[j];
            m[j] = b1 * m[j] + (T(1) - b1) * grad;
            v[j] = b2 * v[j] + (T(1) - b2) * grad * grad;
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p.data[j] -= learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
    zero_grad();
}

template <typename T>
std::vector<NamedTensorRef<T>> Unet<T>::named_tensors()
{
    std::vector<NamedTensorRef<T>> out;
    auto add = [&out](const std::string& name, std::vector<T>& data, std::vector<T>* grad,
                      std::vector<uint32_t> shape) {
        out.push_back({name, std::move(shape), data.data(), grad ? grad->data() : nullptr,
                       data.size()});
    };
    auto add_conv = [&](const std::string& prefix, Conv<T>& c) {
        add(prefix + ".weight", c.w, &c.gw, {c.out_ch, c.in_ch, c.k, c.k, c.k});
        add(prefix + ".bias", c.b, &c.gb, {c.out_ch});
    };
    auto add_norm_params = [&](const std::string& prefix, Norm<T>& n) {
        add(prefix + ".gamma", n.gamma, &n.ggamma, {n.ch});
        add(prefix + ".beta", n.beta, &n.gbeta, {n.ch});
    };
    auto add_norm_stats = [&](const std::string& prefix, Norm<T>& n) {
        add(prefix + ".running_mean", n.running_mean, nullptr, {n.ch});
        add(prefix + ".running_var", n.running_var, nullptr, {n.ch});
    };
    auto add_block = [&](const std::string& prefix, Block<T>& b) {
        add_conv(prefix + ".conv1", b.conv1);
        add_norm_params(prefix + ".bn1", b.bn1);
        add_conv(prefix + ".conv2", b.conv2);
        add_norm_params(prefix + ".bn2", b.bn2);
    };
    for (size_t i = 0; i < enc_.size(); ++i)
        add_block("enc" + std::to_string(i), enc_[i]);
    for (size_t i = 0; i < dec_.size(); ++i)
        add_block("dec" + std::to_string(i), dec_[i]);
    add_conv("head", head_);
    for (size_t i = 0; i < enc_.size(); ++i) {
        add_norm_stats("enc" + std::to_string(i) + ".bn1", enc_[i].bn1);
        add_norm_stats("enc" + std::to_string(i) + ".bn2", enc_[i].bn2);
    }
    for (size_t i = 0; i < dec_.size(); ++i) {
        add_norm_stats("dec" + std::to_string(i) + ".bn1", dec_[i].bn1);
        add_norm_stats("dec" + std::to_string(i) + ".bn2", dec_[i].bn2);
    }
    return out;
}

template <typename T>
bool Unet<T>::state_equals(const Unet<T>& other) const
{
    auto& a = const_cast<Unet<T>&>(*this);
    auto& b = const_cast<Unet<T>&>(other);
    auto ra = a.named_tensors();
    auto rb = b.named_tensors();
    if (ra.size() != rb.size())
        return false;
    for (size_t i = 0; i < ra.size(); ++i) {
        if (ra[i].name != rb[i].name || ra[i].count != rb[i].count)
            return false;
        if (std::memcmp(ra[i].data, rb[i].data, ra[i].count * sizeof(T)) != 0)
            return false;
    }
    return true;
}

// --- loss -------------------------------------------------------------------------------

template <typename T>
double loss_mse_grid(const Grid<T>& output, const LabelVolume& label)
{
    const uint32_t K = output.c;
    const size_t n = output.voxels();
    if (label.size() != n)
        throw std::invalid_argument("loss_mse: dims mismatch");
    double sum = 0.0;
    for (uint32_t c = 0; c < K; ++c) {
        const T* o = output.channel(c);
        const uint8_t* lb = label.data();
        for (size_t i = 0; i < n; ++i) {
            if (lb[i] > K)
                throw std::invalid_argument("loss_mse: label value exceeds K");
            const double target = lb[i] == c + 1 ? 1.0 : 0.0;
            const double diff = double(o[i]) - target;
            sum += diff * diff;
        }
    }
    return sum / (double(K) * double(n));
}

double loss_mse(const ChannelStack& output, const LabelVolume& label)
{
    Grid<float> g = to_grid(output);
    return loss_mse_grid(g, label);
}

// --- conversions -----------------------------------------------------------------------

ChannelStack to_stack(const Grid<float>& grid, const Spacing& spacing)
{
    (void)spacing;
    ChannelStack s(grid.c, Dims{grid.w, grid.h, grid.d});
    std::memcpy(s.vec().data(), grid.v.data(), grid.size() * sizeof(float));
    return s;
}

Grid<float> to_grid(const ChannelStack& stack)
{
    Grid<float> g(stack.channels(), stack.dims().d, stack.dims().h, stack.dims().w);
    std::memcpy(g.v.data(), stack.vec().data(), g.size() * sizeof(float));
    return g;
}

Grid<float> to_grid(const Volume& volume)
{
    Grid<float> g(1, volume.dims().d, volume.dims().h, volume.dims().w);
    std::memcpy(g.v.data(), volume.vec().data(), g.size() * sizeof(float));
    return g;
}

template class Unet<float>;
template class Unet<double>;
template double loss_mse_grid<float>(const Grid<float>&, const LabelVolume&);
template double loss_mse_grid<double>(const Grid<double>&, const LabelVolume&);

} // namespace vpa
