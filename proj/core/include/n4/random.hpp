#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "n4/errors.hpp"

namespace n4 {

/// Deterministic random stream. All stochastic choices in the library flow
/// from a single run seed through named forks of this stream, so results are
/// reproducible across runs and platforms. Gaussian and integer draws are
/// implemented here instead of through <random> distributions because the
/// standard leaves their sequences implementation-defined.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    /// Derive an independent stream for a named purpose.
    RandomStream fork(std::string_view tag, std::uint64_t index = 0) const {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (char c : tag) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 1099511628211ull;
        }
        h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        return RandomStream(splitmix(seed_ ^ h));
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniformIndex(std::uint64_t n) {
        if (n == 0) throw ArgumentError("uniformIndex: n must be positive");
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Standard normal via Box-Muller, one cached value.
    double gaussian() {
        if (haveSpare_) {
            haveSpare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        haveSpare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

    bool coin() { return (engine_() & 1ull) != 0; }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniformIndex(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Sample k distinct values from [0, n) (Floyd's algorithm), returned sorted.
    std::vector<std::uint64_t> sampleWithoutReplacement(std::uint64_t n, std::uint64_t k) {
        if (k > n) throw ArgumentError("sampleWithoutReplacement: k exceeds population");
        std::unordered_set<std::uint64_t> chosen;
        chosen.reserve(k * 2);
        for (std::uint64_t j = n - k; j < n; ++j) {
            std::uint64_t r = uniformIndex(j + 1);
            if (!chosen.insert(r).second) chosen.insert(j);
        }
        std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_ = 0;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool haveSpare_ = false;
};

}  // namespace n4
