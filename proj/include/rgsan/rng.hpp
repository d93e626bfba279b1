#pragma once

#include <cmath>
#include <cstdint>

#include "rgsan/matrix.hpp"

namespace rgsan {

/// splitmix64 step; the whole project draws randomness through this so runs
/// replay bit-exactly regardless of platform or standard library.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Inclusive integer range.
    int uniform_int(int lo, int hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller (no cached second value).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Independent substream: deterministic function of (state, stream id).
    Rng fork(std::uint64_t stream) const {
        std::uint64_t s = state_ ^ (0xA02BDBF7BB3C0A7ull * (stream + 1));
        splitmix64(s);
        return Rng(s);
    }

private:
    std::uint64_t state_;
};

template <typename Real>
Matrix<Real> random_uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix<Real> m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.uniform(lo, hi));
    return m;
}

template <typename Real>
Matrix<Real> random_normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix<Real> m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(scale * rng.normal());
    return m;
}

/// Glorot uniform, the default for projection weights.
template <typename Real>
Matrix<Real> glorot_matrix(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return random_uniform_matrix<Real>(rng, fan_in, fan_out, -limit, limit);
}

}  // namespace rgsan
