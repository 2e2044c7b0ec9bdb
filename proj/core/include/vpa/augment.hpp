#ifndef VPA_AUGMENT_HPP
#define VPA_AUGMENT_HPP
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vpa/rng.hpp"
#include "vpa/volume.hpp"

namespace vpa {

struct Range {
    double lo = 0.0, hi = 0.0;
};

// One enable flag per augmentation stage plus the sampling ranges for every
// random quantity. Defaults reproduce the published ranges; cropping is off
// in the standard preset and on in the tumor preset.
struct AugmentConfig {
    bool enable_reduction = true;
    bool enable_cropping = false;
    bool enable_lighting = true;
    bool enable_rigid = true;
    bool enable_camera = true;
    bool enable_textures = true;

    double subsample_prob = 0.5;    // per axis
    double noise_prob = 0.5;
    double noise_max = 0.2;

    double crop_prob = 0.5;
    Range crop_radius = {0.1, 0.2}; // fraction of image width
    Range crop_fill = {0.0, 2.0};

    double lighting_prob = 0.5;     // per effect, independent
    Range ambient = {0.0, 2.0};

    Range lens_k = {0.0, 0.1};
    Range perspective = {-0.5, 0.5}; // divided by the dim size per axis
    double rotation_max = 0.2;       // rad, random sign per axis
    double translation_max = 0.2;    // fraction of dim size, random sign per axis
    Range scale = {0.8, 1.25};
    Range aspect = {1.0, 1.25};

    double texture_prob = 0.5;       // per texture, independent
    int stamp_count = 5;
    Range stamp_scale = {0.8, 1.25};
    double perlin_cells = 8.0;       // lattice cells across the image width
    int perlin_levels = 4;

    void validate() const;

    static AugmentConfig standard();
    static AugmentConfig tumor();
    static AugmentConfig all_off();
    static AugmentConfig rigid_only();
};

// Every random quantity of one augmented sample. A seed plus a config fully
// determine the params, the params fully determine the deterministic stages.
struct AugmentParams {
    std::array<bool, 3> subsample_axes = {false, false, false};
    bool noise_on = false;
    double noise_max = 0.2;

    bool crop_on = false;
    std::array<double, 3> crop_center = {0, 0, 0};
    double crop_radius_frac = 0.0;
    double crop_fill = 0.0;

    bool ambient_on = false;
    double ambient = 0.0;
    bool diffuse_on = false;
    std::array<double, 3> diffuse_dir = {0, 0, 1};
    bool specular_on = false;
    std::array<double, 3> specular_center = {0, 0, 0};

    double lens_m = 0.0; // voxels; (W/2) * k
    std::array<double, 3> perspective_p = {0, 0, 0};
    std::array<double, 3> rotation = {0, 0, 0};
    std::array<double, 3> translation = {0, 0, 0};
    double scale = 1.0;
    double aspect = 1.0;
    int aspect_axis = 0;

    struct Stamp {
        std::array<double, 3> angles = {0, 0, 0};
        std::array<double, 3> shift = {0, 0, 0};
        double scale = 1.0;
    };
    bool stamp_on = false;
    std::vector<Stamp> stamps;

    bool perlin_on = false;
    uint64_t perlin_seed = 0;
    double perlin_freq = 0.0;
    int perlin_levels = 4;

    // human-readable record for fixture capture; parse() inverts it
    std::string to_text() const;
    static AugmentParams parse(const std::string& text);
};

// Draws every parameter in a fixed documented order so one seed determines
// the whole sample: reduction -> crop -> lighting -> lens -> perspective ->
// rotation -> translation -> scale -> aspect -> textures. Stages disabled in
// the config draw nothing.
AugmentParams sample_params(Rng& rng, const AugmentConfig& config, const Dims& dims);

// Half-samples the flagged axes (decimation) and linearly upsamples back,
// then adds per-voxel uniform noise in [0, noise_max) when noise_on.
Volume reduce(const Volume& v, const AugmentParams& params, Rng& rng);

// Replaces a sphere of radius crop_radius_frac*width with crop_fill in the
// image and 0 in the label.
std::pair<Volume, LabelVolume> crop_sphere(const Volume& v, const LabelVolume& l,
                                           const AugmentParams& params);

// Ambient add, diffuse directional gain, specular radial gain, then clamp >= 0.
Volume apply_lighting(const Volume& v, const AugmentParams& params);

// Backward map from destination voxel coordinates to source coordinates:
// lens distortion, then perspective, then the linear rigid+camera transform.
std::array<double, 3> spatial_map(const std::array<double, 3>& u, const AugmentParams& params,
                                  const Dims& dims);

// Resamples image (cubic spline) and label (nearest) through spatial_map.
std::pair<Volume, LabelVolume> warp(const Volume& v, const LabelVolume& l,
                                    const AugmentParams& params);

// Draws the rotated/scaled/shifted background (label==0, foreground zeroed)
// onto the background stamp_count times, blending with blend(). Foreground
// voxels are untouched.
Volume stamp_background(const Volume& v, const LabelVolume& l, const AugmentParams& params);

// Banded Perlin texture blended onto the background; foreground untouched.
Volume perlin_background(const Volume& v, const LabelVolume& l, const AugmentParams& params);

// s <- s + b*f(s) with f(s) = 0.1 when 1-s < 0.1, else 1-s.
inline float blend(float s, float b)
{
    const float f = (1.0f - s < 0.1f) ? 0.1f : 1.0f - s;
    return s + b * f;
}

// Ken Perlin's improved noise (2002 gradient set), in [-1, 1], zero on the
// integer lattice. The permutation table is 0..255 shuffled then doubled.
struct PerlinTable {
    std::array<uint8_t, 512> p;
    static PerlinTable identity();
    static PerlinTable seeded(uint64_t seed);
};
double perlin3(double x, double y, double z, const PerlinTable& table);

// Optional capture of pipeline intermediates (for tests and inspection).
struct AugmentTrace {
    AugmentParams params;
    Volume pre_texture;      // after warp, before background textures
    LabelVolume warped_label;
    Volume post_stamp;
    Volume post_perlin;
};

// The full pipeline: reduce -> crop -> lighting -> warp -> stamping ->
// Perlin -> normalize to max 1. Pure function of (template, label, config,
// seed); a degenerate all-zero result retries with seed+1, up to 8 times.
std::pair<Volume, LabelVolume> augment_once(const Volume& template_image,
                                            const LabelVolume& label,
                                            const AugmentConfig& config, uint64_t seed,
                                            AugmentTrace* trace = nullptr);

} // namespace vpa
#endif
