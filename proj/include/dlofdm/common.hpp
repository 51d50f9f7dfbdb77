// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlofdm {

using Complex = std::complex<double>;
using Bit = std::uint8_t;

/// Ordered 0/1 sequence.
using BitVector = std::vector<Bit>;

/// N complex frequency-domain symbols of one OFDM block: X(k), Y(k), H(k), W(k).
using FreqBlock = std::vector<Complex>;

/// Complex baseband samples in time: x(n), y(n), w(n).
using TimeSignal = std::vector<Complex>;

using Rng = std::mt19937_64;

/// Sentinel for "no noise" SNR.
inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

// Error taxonomy. The CLI maps these to exit codes 2/3/4.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// Plain product without the inf/NaN recovery of operator*, which the
// compiler otherwise routes through a library call.
inline Complex cmul(Complex a, Complex b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent child seed from a base seed and a path of indices,
/// e.g. derive_seed(seed, {sub_model}) or derive_seed(seed, {snr_tag, frame}).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = detail::splitmix64(base);
    for (auto p : path) h = detail::splitmix64(h ^ detail::splitmix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

/// Uniform random bits.
inline BitVector random_bits(std::size_t n, Rng& rng) {
    BitVector bits(n);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i % 64 == 0) word = rng();
        bits[i] = static_cast<Bit>((word >> (i % 64)) & 1U);
    }
    return bits;
}

/// Noise variance for an SNR in dB against unit received power; 0 for +inf.
inline double noise_variance(double snr_db) {
    if (snr_db == kNoiselessSnr) return 0.0;
    return std::pow(10.0, -snr_db / 10.0);
}

}  // namespace dlofdm
