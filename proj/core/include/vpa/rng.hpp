#ifndef VPA_RNG_HPP
#define VPA_RNG_HPP
#include <cstdint>
#include <cmath>

namespace vpa {

// splitmix64 (Steele, Lea, Flood 2014). Used for seed expansion and for
// deriving per-sample seeds: every implementation of this tool must
// produce the same stream bit for bit.
inline uint64_t splitmix64(uint64_t& state)
{
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t splitmix64_once(uint64_t x)
{
    return splitmix64(x);
}

// xoshiro256** 1.0 (Blackman & Vigna 2018), seeded from splitmix64.
// The generator is pinned algorithmically so seeds reproduce across
// platforms and compilers.
class Rng {
public:
    explicit Rng(uint64_t seed = 0)
    {
        for (auto& word : s_)
            word = splitmix64(seed);
    }

    uint64_t next_u64()
    {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1), 53-bit resolution
    double uniform01()
    {
        return double(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi)
    {
        return lo + uniform01() * (hi - lo);
    }

    // true with probability p
    bool bernoulli(double p = 0.5)
    {
        return uniform01() < p;
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n)
    {
        return next_u64() % n;
    }

    // uniform point on the unit sphere (z = cos(theta) uniform, then azimuth)
    void unit_vector(double out[3])
    {
        const double z = uniform(-1.0, 1.0);
        const double phi = uniform(0.0, 2.0 * 3.14159265358979323846);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        out[0] = r * std::cos(phi);
        out[1] = r * std::sin(phi);
        out[2] = z;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

// Per-sample seed derivation used by the augmentation generator and the
// training loop: sample i of a run draws from Rng(sample_seed(master, i)).
inline uint64_t sample_seed(uint64_t master_seed, uint64_t sample_index)
{
    return splitmix64_once(master_seed ^ sample_index);
}

} // namespace vpa
#endif
