#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace hdrdistill {

// Deterministic random stream keyed by (root seed, label). Every consumer of
// randomness draws from its own labeled stream, so worker counts and call
// sites never change the numbers. Raw engine output is mapped to doubles by
// hand to stay independent of libstdc++ distribution internals.
class RngStream {
  public:
    RngStream(std::uint64_t root_seed, const std::string& label)
        : engine_(mix(root_seed, label)) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    static std::uint64_t mix(std::uint64_t root_seed, const std::string& label) {
        // FNV-1a over the label, mixed with the seed through splitmix64.
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : label) {
            h ^= c;
            h *= 1099511628211ull;
        }
        std::uint64_t z = root_seed + 0x9e3779b97f4a7c15ull * (h | 1ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hdrdistill
