#include "vpa/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "vpa/parallel.hpp"

namespace vpa {

namespace {

void require(bool cond, const char* msg)
{
    if (!cond)
        throw std::invalid_argument(msg);
}

void check_range(const Range& r, const char* name)
{
    if (!(std::isfinite(r.lo) && std::isfinite(r.hi)) || r.lo > r.hi)
        throw std::invalid_argument(std::string("bad range for ") + name);
}

} // namespace

void AugmentConfig::validate() const
{
    check_range(crop_radius, "crop_radius");
    check_range(crop_fill, "crop_fill");
    check_range(ambient, "ambient");
    check_range(lens_k, "lens_k");
    check_range(perspective, "perspective");
    check_range(scale, "scale");
    check_range(aspect, "aspect");
    check_range(stamp_scale, "stamp_scale");
    require(noise_max >= 0.0 && std::isfinite(noise_max), "noise_max must be >= 0");
    require(rotation_max >= 0.0, "rotation_max must be >= 0");
    require(translation_max >= 0.0, "translation_max must be >= 0");
    require(stamp_count >= 0, "stamp_count must be >= 0");
    require(perlin_levels >= 1, "perlin_levels must be >= 1");
    require(perlin_cells > 0.0, "perlin_cells must be > 0");
    for (double p : {subsample_prob, noise_prob, crop_prob, lighting_prob, texture_prob})
        require(p >= 0.0 && p <= 1.0, "probabilities must lie in [0,1]");
}

AugmentConfig AugmentConfig::standard()
{
    return AugmentConfig{};
}

AugmentConfig AugmentConfig::tumor()
{
    AugmentConfig c;
    c.enable_cropping = true;
    return c;
}

AugmentConfig AugmentConfig::all_off()
{
    AugmentConfig c;
    c.enable_reduction = c.enable_cropping = c.enable_lighting = false;
    c.enable_rigid = c.enable_camera = c.enable_textures = false;
    return c;
}

AugmentConfig AugmentConfig::rigid_only()
{
    AugmentConfig c = all_off();
    c.enable_rigid = true;
    return c;
}

// --- parameter sampling -----------------------------------------------------

AugmentParams sample_params(Rng& rng, const AugmentConfig& config, const Dims& dims)
{
    config.validate();
    require(dims.w >= 8 && dims.h >= 8 && dims.d >= 8, "sample_params needs dims >= 8");
    const double dim_size[3] = {double(dims.w), double(dims.h), double(dims.d)};
    const double width = dim_size[0];

    AugmentParams p;
    p.stamps.clear();

    // 1. reduction
    if (config.enable_reduction) {
        for (int a = 0; a < 3; ++a)
            p.subsample_axes[a] = rng.bernoulli(config.subsample_prob);
        p.noise_on = rng.bernoulli(config.noise_prob);
        p.noise_max = config.noise_max;
    }
    // 2. cropping
    if (config.enable_cropping) {
        p.crop_on = rng.bernoulli(config.crop_prob);
        if (p.crop_on) {
            for (int a = 0; a < 3; ++a)
                p.crop_center[a] = rng.uniform(0.0, dim_size[a]);
            p.crop_radius_frac = rng.uniform(config.crop_radius.lo, config.crop_radius.hi);
            p.crop_fill = rng.uniform(config.crop_fill.lo, config.crop_fill.hi);
        }
    }
    // 3. lighting
    if (config.enable_lighting) {
        p.ambient_on = rng.bernoulli(config.lighting_prob);
        if (p.ambient_on)
            p.ambient = rng.uniform(config.ambient.lo, config.ambient.hi);
        p.diffuse_on = rng.bernoulli(config.lighting_prob);
        if (p.diffuse_on) {
            double dir[3];
            rng.unit_vector(dir);
            p.diffuse_dir = {dir[0], dir[1], dir[2]};
        }
        p.specular_on = rng.bernoulli(config.lighting_prob);
        if (p.specular_on)
            for (int a = 0; a < 3; ++a)
                p.specular_center[a] = rng.uniform(0.0, dim_size[a]);
    }
    // 4. lens distortion, 5. perspective
    if (config.enable_camera) {
        const double k = rng.uniform(config.lens_k.lo, config.lens_k.hi);
        p.lens_m = 0.5 * width * k;
        // reject perspective vectors whose divisor drops below 0.05 anywhere
        const double c[3] = {dim_size[0] * 0.5, dim_size[1] * 0.5, dim_size[2] * 0.5};
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (int a = 0; a < 3; ++a)
                p.perspective_p[a] =
                    rng.uniform(config.perspective.lo, config.perspective.hi) / dim_size[a];
            double worst = 1.0;
            for (int corner = 0; corner < 8; ++corner) {
                double dot = 0.0;
                for (int a = 0; a < 3; ++a) {
                    const double coord = (corner >> a) & 1 ? dim_size[a] : 0.0;
                    dot += p.perspective_p[a] * (coord - c[a]);
                }
                worst = std::min(worst, dot + 1.0);
            }
            if (worst > 0.05)
                break;
            if (attempt == 99)
                throw std::runtime_error("perspective range rejects every draw");
        }
    }
    // 6. rotation, 7. translation
    if (config.enable_rigid) {
        for (int a = 0; a < 3; ++a) {
            const double mag = rng.uniform(0.0, config.rotation_max);
            p.rotation[a] = rng.bernoulli(0.5) ? mag : -mag;
        }
        for (int a = 0; a < 3; ++a) {
            const double mag = rng.uniform(0.0, config.translation_max) * dim_size[a];
            p.translation[a] = rng.bernoulli(0.5) ? mag : -mag;
        }
    }
    // 8. scale, 9. aspect
    if (config.enable_camera) {
        p.scale = rng.uniform(config.scale.lo, config.scale.hi);
        p.aspect = rng.uniform(config.aspect.lo, config.aspect.hi);
        p.aspect_axis = int(rng.below(3));
    }
    // 10. background textures
    if (config.enable_textures) {
        p.stamp_on = rng.bernoulli(config.texture_prob);
        if (p.stamp_on) {
            p.stamps.resize(config.stamp_count);
            for (auto& s : p.stamps) {
                for (int a = 0; a < 3; ++a)
                    s.angles[a] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                for (int a = 0; a < 3; ++a)
                    s.shift[a] = rng.uniform(-0.5 * width, 0.5 * width);
                s.scale = rng.uniform(config.stamp_scale.lo, config.stamp_scale.hi);
            }
        }
        p.perlin_on = rng.bernoulli(config.texture_prob);
        if (p.perlin_on) {
            p.perlin_seed = rng.next_u64();
            p.perlin_freq = config.perlin_cells / width;
            p.perlin_levels = config.perlin_levels;
        }
    }
    return p;
}

// --- reduction ---------------------------------------------------------------

Volume reduce(const Volume& v, const AugmentParams& params, Rng& rng)
{
    Volume cur = v;
    if (params.subsample_axes[0] || params.subsample_axes[1] || params.subsample_axes[2]) {
        const Dims d = v.dims();
        const Spacing s = v.spacing();
        const Dims half = {params.subsample_axes[0] ? (d.w + 1) / 2 : d.w,
                           params.subsample_axes[1] ? (d.h + 1) / 2 : d.h,
                           params.subsample_axes[2] ? (d.d + 1) / 2 : d.d};
        const Spacing hs = {params.subsample_axes[0] ? s.x * 2 : s.x,
                            params.subsample_axes[1] ? s.y * 2 : s.y,
                            params.subsample_axes[2] ? s.z * 2 : s.z};
        Volume decimated = resample(cur, half, hs, Interp::nearest);
        cur = resample(decimated, d, s, Interp::linear);
    }
    if (params.noise_on) {
        float* p = cur.data();
        for (size_t i = 0; i < cur.size(); ++i)
            p[i] += float(rng.uniform(0.0, params.noise_max));
    }
    return cur;
}

// --- cropping ------------------------------------------------------------------

std::pair<Volume, LabelVolume> crop_sphere(const Volume& v, const LabelVolume& l,
                                           const AugmentParams& params)
{
    Volume img = v;
    LabelVolume lab = l;
    if (!params.crop_on || params.crop_radius_frac <= 0.0)
        return {std::move(img), std::move(lab)};
    const Dims d = v.dims();
    const double radius = params.crop_radius_frac * double(d.w);
    const double r2 = radius * radius;
    const auto& c = params.crop_center;
    const float fill = float(params.crop_fill);
    for (uint32_t z = 0; z < d.d; ++z)
        for (uint32_t y = 0; y < d.h; ++y)
            for (uint32_t x = 0; x < d.w; ++x) {
                const double dx = double(x) - c[0], dy = double(y) - c[1], dz = double(z) - c[2];
                if (dx * dx + dy * dy + dz * dz < r2) {
                    const size_t i = img.index(x, y, z);
                    img.data()[i] = fill;
                    lab.data()[i] = 0;
                }
            }
    return {std::move(img), std::move(lab)};
}

// --- lighting --------------------------------------------------------------------

Volume apply_lighting(const Volume& v, const AugmentParams& params)
{
    Volume out = v;
    if (!params.ambient_on && !params.diffuse_on && !params.specular_on)
        return out;
    const Dims d = v.dims();
    const double W = double(d.w);
    const double cx = d.w * 0.5, cy = d.h * 0.5, cz = d.d * 0.5;
    const float ambient = float(params.ambient);
    float* p = out.data();
    parallel_for(d.d, [&](size_t z) {
        for (uint32_t y = 0; y < d.h; ++y) {
            size_t i = out.index(0, uint32_t(y), uint32_t(z));
            for (uint32_t x = 0; x < d.w; ++x, ++i) {
                float val = p[i];
                if (params.ambient_on)
                    val += ambient;
                if (params.diffuse_on) {
                    const double dot = params.diffuse_dir[0] * ((x - cx) / W) +
                                       params.diffuse_dir[1] * ((y - cy) / W) +
                                       params.diffuse_dir[2] * ((z - cz) / W);
                    val *= float(1.0 + 0.2 * dot);
                }
                if (params.specular_on) {
                    const double dx = x - params.specular_center[0];
                    const double dy = y - params.specular_center[1];
                    const double dz = z - params.specular_center[2];
                    val *= float(std::sqrt(dx * dx + dy * dy + dz * dz) / W);
                }
                p[i] = std::max(0.0f, val);
            }
        }
    });
    return out;
}

// --- geometry ------------------------------------------------------------------------

namespace {

// Rz*Ry*Rx composed with the diagonal scale (global scale, extra aspect
// factor on one axis); shared by spatial_map and warp.
struct BackwardMap {
    double c[3];
    double W;
    double m;
    double p[3];
    double t[3];
    double M[3][3];

    BackwardMap(const AugmentParams& params, const Dims& dims)
    {
        c[0] = dims.w * 0.5;
        c[1] = dims.h * 0.5;
        c[2] = dims.d * 0.5;
        W = double(dims.w);
        m = params.lens_m;
        for (int a = 0; a < 3; ++a) {
            p[a] = params.perspective_p[a];
            t[a] = params.translation[a];
        }
        const double ca = std::cos(params.rotation[0]), sa = std::sin(params.rotation[0]);
        const double cb = std::cos(params.rotation[1]), sb = std::sin(params.rotation[1]);
        const double cg = std::cos(params.rotation[2]), sg = std::sin(params.rotation[2]);
        // R = Rz(g) * Ry(b) * Rx(a)
        const double R[3][3] = {
            {cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa},
            {sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa},
            {-sb, cb * sa, cb * ca},
        };
        double s[3] = {params.scale, params.scale, params.scale};
        s[params.aspect_axis] *= params.aspect;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                M[i][j] = R[i][j] * s[j];
    }

    void map(const double u[3], double v[3]) const
    {
        // lens distortion: u + m * ((c-u)/W) * ||(c-u)/W||^2
        double r[3], q[3];
        for (int a = 0; a < 3; ++a)
            r[a] = (c[a] - u[a]) / W;
        const double n2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        for (int a = 0; a < 3; ++a)
            q[a] = u[a] + m * r[a] * n2;
        // perspective: c + (q-c) / (dot(p, q-c) + 1)
        double dq[3];
        for (int a = 0; a < 3; ++a)
            dq[a] = q[a] - c[a];
        const double div = p[0] * dq[0] + p[1] * dq[1] + p[2] * dq[2] + 1.0;
        for (int a = 0; a < 3; ++a)
            dq[a] /= div;
        // linear: R*S*(q-c) + c + t
        for (int i = 0; i < 3; ++i)
            v[i] = M[i][0] * dq[0] + M[i][1] * dq[1] + M[i][2] * dq[2] + c[i] + t[i];
    }
};

} // namespace

std::array<double, 3> spatial_map(const std::array<double, 3>& u, const AugmentParams& params,
                                  const Dims& dims)
{
    BackwardMap bm(params, dims);
    double v[3];
    bm.map(u.data(), v);
    return {v[0], v[1], v[2]};
}

std::pair<Volume, LabelVolume> warp(const Volume& v, const LabelVolume& l,
                                    const AugmentParams& params)
{
    if (!(v.dims() == l.dims()))
        throw std::invalid_argument("warp: image/label dims mismatch");
    const Dims d = v.dims();
    Volume img(d, v.spacing());
    LabelVolume lab(d);
    const BackwardMap bm(params, d);
    parallel_for(d.d, [&](size_t z) {
        double u[3], s[3];
        for (uint32_t y = 0; y < d.h; ++y) {
            size_t i = img.index(0, uint32_t(y), uint32_t(z));
            for (uint32_t x = 0; x < d.w; ++x, ++i) {
                u[0] = double(x);
                u[1] = double(y);
                u[2] = double(z);
                bm.map(u, s);
                img.data()[i] = sample_cubic(v, s[0], s[1], s[2]);
                lab.data()[i] = sample_label_nearest(l, s[0], s[1], s[2]);
            }
        }
    });
    return {std::move(img), std::move(lab)};
}

// --- background textures ---------------------------------------------------------------

Volume stamp_background(const Volume& v, const LabelVolume& l, const AugmentParams& params)
{
    Volume out = v;
    if (!params.stamp_on || params.stamps.empty())
        return out;
    const Dims d = v.dims();
    // source texture: the current background with the foreground removed
    Volume bg(d, v.spacing());
    for (size_t i = 0; i < v.size(); ++i)
        bg.data()[i] = l.data()[i] == 0 ? v.data()[i] : 0.0f;

    for (const auto& stamp : params.stamps) {
        AugmentParams sp;
        sp.rotation = stamp.angles;
        sp.translation = stamp.shift;
        sp.scale = stamp.scale;
        const BackwardMap bm(sp, d);
        parallel_for(d.d, [&](size_t z) {
            double u[3], s[3];
            for (uint32_t y = 0; y < d.h; ++y) {
                size_t i = out.index(0, uint32_t(y), uint32_t(z));
                for (uint32_t x = 0; x < d.w; ++x, ++i) {
                    if (l.data()[i] != 0)
                        continue;
                    u[0] = double(x);
                    u[1] = double(y);
                    u[2] = double(z);
                    bm.map(u, s);
                    const float b = sample_linear(bg, s[0], s[1], s[2]);
                    out.data()[i] = blend(out.data()[i], b);
                }
            }
        });
    }
    return out;
}

// --- Perlin noise -----------------------------------------------------------------------

PerlinTable PerlinTable::identity()
{
    PerlinTable t;
    for (int i = 0; i < 256; ++i)
        t.p[i] = t.p[i + 256] = uint8_t(i);
    return t;
}

PerlinTable PerlinTable::seeded(uint64_t seed)
{
    PerlinTable t;
    std::array<uint8_t, 256> perm;
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (int i = 255; i > 0; --i)
        std::swap(perm[i], perm[rng.below(uint64_t(i) + 1)]);
    for (int i = 0; i < 256; ++i)
        t.p[i] = t.p[i + 256] = perm[i];
    return t;
}

namespace {

inline double perlin_fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }
inline double perlin_lerp(double t, double a, double b) { return a + t * (b - a); }

inline double perlin_grad(int hash, double x, double y, double z)
{
    const int h = hash & 15;
    const double u = h < 8 ? x : y;
    const double v = h < 4 ? y : (h == 12 || h == 14 ? x : z);
    return ((h & 1) == 0 ? u : -u) + ((h & 2) == 0 ? v : -v);
}

} // namespace

double perlin3(double x, double y, double z, const PerlinTable& table)
{
    const auto& p = table.p;
    const int X = int(std::floor(x)) & 255;
    const int Y = int(std::floor(y)) & 255;
    const int Z = int(std::floor(z)) & 255;
    x -= std::floor(x);
    y -= std::floor(y);
    z -= std::floor(z);
    const double u = perlin_fade(x), v = perlin_fade(y), w = perlin_fade(z);
    const int A = p[X] + Y, AA = p[A] + Z, AB = p[A + 1] + Z;
    const int B = p[X + 1] + Y, BA = p[B] + Z, BB = p[B + 1] + Z;
    return perlin_lerp(w,
        perlin_lerp(v,
            perlin_lerp(u, perlin_grad(p[AA], x, y, z), perlin_grad(p[BA], x - 1, y, z)),
            perlin_lerp(u, perlin_grad(p[AB], x, y - 1, z), perlin_grad(p[BB], x - 1, y - 1, z))),
        perlin_lerp(v,
            perlin_lerp(u, perlin_grad(p[AA + 1], x, y, z - 1),
                        perlin_grad(p[BA + 1], x - 1, y, z - 1)),
            perlin_lerp(u, perlin_grad(p[AB + 1], x, y - 1, z - 1),
                        perlin_grad(p[BB + 1], x - 1, y - 1, z - 1))));
}

Volume perlin_background(const Volume& v, const LabelVolume& l, const AugmentParams& params)
{
    Volume out = v;
    if (!params.perlin_on)
        return out;
    const Dims d = v.dims();
    const PerlinTable table = PerlinTable::seeded(params.perlin_seed);
    const double freq = params.perlin_freq;
    const double levels = double(params.perlin_levels);
    parallel_for(d.d, [&](size_t z) {
        for (uint32_t y = 0; y < d.h; ++y) {
            size_t i = out.index(0, uint32_t(y), uint32_t(z));
            for (uint32_t x = 0; x < d.w; ++x, ++i) {
                if (l.data()[i] != 0)
                    continue;
                const double n = perlin3(x * freq, y * freq, double(z) * freq, table);
                const float tex = float(std::floor(levels * (n + 1.0) * 0.5) / levels);
                out.data()[i] = blend(out.data()[i], tex);
            }
        }
    });
    return out;
}

// --- full pipeline -------------------------------------------------------------------------

namespace {

std::optional<std::pair<Volume, LabelVolume>> augment_attempt(const Volume& template_image,
                                                              const LabelVolume& label,
                                                              const AugmentConfig& config,
                                                              uint64_t seed, AugmentTrace* trace)
{
    Rng rng(seed);
    const AugmentParams params = sample_params(rng, config, template_image.dims());

    Volume img = reduce(template_image, params, rng);
    LabelVolume lab = label;
    if (config.enable_cropping && params.crop_on) {
        auto cropped = crop_sphere(img, lab, params);
        img = std::move(cropped.first);
        lab = std::move(cropped.second);
    }
    img = apply_lighting(img, params);
    auto warped = warp(img, lab, params);
    img = std::move(warped.first);
    lab = std::move(warped.second);
    if (trace) {
        trace->params = params;
        trace->pre_texture = img;
        trace->warped_label = lab;
    }
    if (params.stamp_on)
        img = stamp_background(img, lab, params);
    if (trace)
        trace->post_stamp = img;
    if (params.perlin_on)
        img = perlin_background(img, lab, params);
    if (trace)
        trace->post_perlin = img;
    float maxv = 0.0f;
    for (float x : img.vec())
        maxv = std::max(maxv, x);
    if (maxv <= 0.0f)
        return std::nullopt;
    img = normalize_max_one(img);
    return std::make_pair(std::move(img), std::move(lab));
}

} // namespace

std::pair<Volume, LabelVolume> augment_once(const Volume& template_image,
                                            const LabelVolume& label,
                                            const AugmentConfig& config, uint64_t seed,
                                            AugmentTrace* trace)
{
    if (!(template_image.dims() == label.dims()))
        throw std::invalid_argument("augment_once: image/label dims mismatch");
    float maxv = 0.0f;
    for (float x : template_image.vec())
        maxv = std::max(maxv, x);
    if (maxv > 1.0f + 1e-5f || maxv <= 0.0f)
        throw std::invalid_argument("augment_once: template must be normalized to [0,1]");

    for (uint64_t k = 0; k <= 8; ++k) {
        auto result = augment_attempt(template_image, label, config, seed + k, trace);
        if (result)
            return std::move(*result);
    }
    throw std::runtime_error("augment_once: degenerate result after 8 retries");
}

// --- params serialization -------------------------------------------------------------------

namespace {

void put(std::ostringstream& os, const char* key, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << key << " " << buf << "\n";
}

void put(std::ostringstream& os, const char* key, const std::array<double, 3>& v)
{
    char buf[200];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", v[0], v[1], v[2]);
    os << key << " " << buf << "\n";
}

} // namespace

std::string AugmentParams::to_text() const
{
    std::ostringstream os;
    os << "subsample_axes " << subsample_axes[0] << " " << subsample_axes[1] << " "
       << subsample_axes[2] << "\n";
    os << "noise_on " << noise_on << "\n";
    put(os, "noise_max", noise_max);
    os << "crop_on " << crop_on << "\n";
    put(os, "crop_center", crop_center);
    put(os, "crop_radius_frac", crop_radius_frac);
    put(os, "crop_fill", crop_fill);
    os << "ambient_on " << ambient_on << "\n";
    put(os, "ambient", ambient);
    os << "diffuse_on " << diffuse_on << "\n";
    put(os, "diffuse_dir", diffuse_dir);
    os << "specular_on " << specular_on << "\n";
    put(os, "specular_center", specular_center);
    put(os, "lens_m", lens_m);
    put(os, "perspective_p", perspective_p);
    put(os, "rotation", rotation);
    put(os, "translation", translation);
    put(os, "scale", scale);
    put(os, "aspect", aspect);
    os << "aspect_axis " << aspect_axis << "\n";
    os << "stamp_on " << stamp_on << "\n";
    os << "stamp_count " << stamps.size() << "\n";
    for (const auto& s : stamps) {
        put(os, "stamp_angles", s.angles);
        put(os, "stamp_shift", s.shift);
        put(os, "stamp_scale", s.scale);
    }
    os << "perlin_on " << perlin_on << "\n";
    os << "perlin_seed " << perlin_seed << "\n";
    put(os, "perlin_freq", perlin_freq);
    os << "perlin_levels " << perlin_levels << "\n";
    return os.str();
}

AugmentParams AugmentParams::parse(const std::string& text)
{
    AugmentParams p;
    p.stamps.clear();
    std::istringstream is(text);
    std::string key;
    size_t stamp_count = 0;
    while (is >> key) {
        if (key == "subsample_axes")
            is >> p.subsample_axes[0] >> p.subsample_axes[1] >> p.subsample_axes[2];
        else if (key == "noise_on")
            is >> p.noise_on;
        else if (key == "noise_max")
            is >> p.noise_max;
        else if (key == "crop_on")
            is >> p.crop_on;
        else if (key == "crop_center")
            is >> p.crop_center[0] >> p.crop_center[1] >> p.crop_center[2];
        else if (key == "crop_radius_frac")
            is >> p.crop_radius_frac;
        else if (key == "crop_fill")
            is >> p.crop_fill;
        else if (key == "ambient_on")
            is >> p.ambient_on;
        else if (key == "ambient")
            is >> p.ambient;
        else if (key == "diffuse_on")
            is >> p.diffuse_on;
        else if (key == "diffuse_dir")
            is >> p.diffuse_dir[0] >> p.diffuse_dir[1] >> p.diffuse_dir[2];
        else if (key == "specular_on")
            is >> p.specular_on;
        else if (key == "specular_center")
            is >> p.specular_center[0] >> p.specular_center[1] >> p.specular_center[2];
        else if (key == "lens_m")
            is >> p.lens_m;
        else if (key == "perspective_p")
            is >> p.perspective_p[0] >> p.perspective_p[1] >> p.perspective_p[2];
        else if (key == "rotation")
            is >> p.rotation[0] >> p.rotation[1] >> p.rotation[2];
        else if (key == "translation")
            is >> p.translation[0] >> p.translation[1] >> p.translation[2];
        else if (key == "scale")
            is >> p.scale;
        else if (key == "aspect")
            is >> p.aspect;
        else if (key == "aspect_axis")
            is >> p.aspect_axis;
        else if (key == "stamp_on")
            is >> p.stamp_on;
        else if (key == "stamp_count")
            is >> stamp_count;
        else if (key == "stamp_angles") {
            p.stamps.emplace_back();
            is >> p.stamps.back().angles[0] >> p.stamps.back().angles[1] >>
                p.stamps.back().angles[2];
        } else if (key == "stamp_shift")
            is >> p.stamps.back().shift[0] >> p.stamps.back().shift[1] >> p.stamps.back().shift[2];
        else if (key == "stamp_scale")
            is >> p.stamps.back().scale;
        else if (key == "perlin_on")
            is >> p.perlin_on;
        else if (key == "perlin_seed")
            is >> p.perlin_seed;
        else if (key == "perlin_freq")
            is >> p.perlin_freq;
        else if (key == "perlin_levels")
            is >> p.perlin_levels;
        else
            throw std::invalid_argument("AugmentParams::parse: unknown key " + key);
    }
    if (p.stamps.size() != stamp_count)
        throw std::invalid_argument("AugmentParams::parse: stamp count mismatch");
    return p;
}

} // namespace vpa
