// SPDX-License-Identifier: Apache-2.0
#pragma once

// OFDM baseband primitives: QPSK mapping, unitary DFT, cyclic prefix,
// clipping and frame assembly.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlofdm/common.hpp"

namespace dlofdm {

// ---------------------------------------------------------------------------
// QPSK

/// Gray-mapped unit-energy QPSK: (b0, b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt(2).
inline FreqBlock qpsk_modulate(std::span<const Bit> bits) {
    if (bits.size() % 2 != 0) throw InvalidInput("qpsk_modulate: odd number of bits");
    constexpr double a = std::numbers::sqrt2 / 2.0;
    FreqBlock out(bits.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Bit b0 = bits[2 * i];
        const Bit b1 = bits[2 * i + 1];
        if (b0 > 1 || b1 > 1) throw InvalidInput("qpsk_modulate: bit value outside {0,1}");
        out[i] = {b0 ? -a : a, b1 ? -a : a};
    }
    return out;
}

/// Hard decision; a component of exactly 0 maps to bit 0.
inline BitVector qpsk_demodulate_hard(std::span<const Complex> symbols) {
    BitVector bits(2 * symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        bits[2 * i] = symbols[i].real() < 0.0 ? 1 : 0;
        bits[2 * i + 1] = symbols[i].imag() < 0.0 ? 1 : 0;
    }
    return bits;
}

// ---------------------------------------------------------------------------
// Unitary DFT

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Twiddles e^{-j 2 pi k / n}, k < n/2, for the most recent size on this thread.
inline const std::vector<Complex>& twiddles(std::size_t n) {
    thread_local std::vector<Complex> table;
    thread_local std::size_t table_n = 0;
    if (table_n != n) {
        table.resize(n / 2);
        for (std::size_t k = 0; k < n / 2; ++k)
            table[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
        table_n = n;
    }
    return table;
}

// sign = -1 forward, +1 inverse. Unscaled.
inline void fft_radix2(std::vector<Complex>& a, int sign) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& tw = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t stride = n / len;
        for (std::size_t k = 0; k < half; ++k) {
            const Complex w = sign < 0 ? tw[k * stride] : std::conj(tw[k * stride]);
            for (std::size_t i = k; i < n; i += len) {
                const Complex u = a[i];
                const Complex v = cmul(a[i + half], w);
                a[i] = u + v;
                a[i + half] = u - v;
            }
        }
    }
}

inline std::vector<Complex> dft_direct(std::span<const Complex> x, int sign) {
    const std::size_t n = x.size();
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc{};
        for (std::size_t m = 0; m < n; ++m) {
            const double ang = sign * 2.0 * std::numbers::pi *
                               static_cast<double>((k * m) % n) / static_cast<double>(n);
            acc += cmul(x[m], std::polar(1.0, ang));
        }
        out[k] = acc;
    }
    return out;
}

inline std::vector<Complex> unitary_transform(std::span<const Complex> x, int sign) {
    std::vector<Complex> out;
    if (is_pow2(x.size())) {
        out.assign(x.begin(), x.end());
        fft_radix2(out, sign);
    } else {
        out = dft_direct(x, sign);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (auto& v : out) v *= scale;
    return out;
}

}  // namespace detail

/// X(k) = N^{-1/2} sum_n x(n) e^{-j 2 pi k n / N}.
inline FreqBlock dft(std::span<const Complex> x, std::size_t n) {
    if (x.size() != n || n == 0) throw InvalidInput("dft: input length does not match N");
    return detail::unitary_transform(x, -1);
}

inline TimeSignal idft(std::span<const Complex> spectrum) {
    if (spectrum.empty()) throw InvalidInput("idft: empty block");
    return detail::unitary_transform(spectrum, +1);
}

// ---------------------------------------------------------------------------
// Cyclic prefix

inline TimeSignal add_cp(std::span<const Complex> t, std::size_t cp_len) {
    const std::size_t n = t.size();
    if (cp_len > n) throw InvalidInput("add_cp: cp_len exceeds block length");
    TimeSignal out;
    out.reserve(n + cp_len);
    out.insert(out.end(), t.end() - static_cast<std::ptrdiff_t>(cp_len), t.end());
    out.insert(out.end(), t.begin(), t.end());
    return out;
}

inline TimeSignal remove_cp(std::span<const Complex> t, std::size_t cp_len) {
    if (cp_len > t.size()) throw InvalidInput("remove_cp: cp_len exceeds signal length");
    return {t.begin() + static_cast<std::ptrdiff_t>(cp_len), t.end()};
}

// ---------------------------------------------------------------------------
// Clipping

/// CR = A / sigma. sigma_ref is the ensemble rms of the unclipped signal,
/// which is 1 for unit-power symbols under the unitary IDFT.
struct ClipConfig {
    double clip_ratio = 1.0;
    double sigma_ref = 1.0;

    double threshold() const { return clip_ratio * sigma_ref; }
    void validate() const {
        if (!(clip_ratio > 0.0) || !(sigma_ref > 0.0))
            throw InvalidInput("ClipConfig: clip_ratio and sigma_ref must be positive");
    }
};

/// Magnitudes above A are limited to A; phase is kept.
inline TimeSignal clip_signal(std::span<const Complex> t, const ClipConfig& clip) {
    clip.validate();
    const double a = clip.threshold();
    TimeSignal out(t.begin(), t.end());
    for (auto& v : out) {
        const double mag = std::abs(v);
        if (mag > a) v *= a / mag;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frames

struct FrameConfig {
    std::size_t n_subcarriers = 64;
    std::size_t cp_len = 16;
    std::vector<std::size_t> pilot_indices;  // sorted, unique, < n_subcarriers
    std::optional<ClipConfig> clip;

    std::size_t n_pilots() const { return pilot_indices.size(); }

    /// Evenly spaced comb: index i * N / n_pilots.
    static std::vector<std::size_t> comb_pilots(std::size_t n_subcarriers, std::size_t n_pilots) {
        if (n_pilots == 0 || n_pilots > n_subcarriers)
            throw InvalidInput("n_pilots must be in [1, n_subcarriers]");
        std::vector<std::size_t> idx(n_pilots);
        for (std::size_t i = 0; i < n_pilots; ++i) idx[i] = i * n_subcarriers / n_pilots;
        return idx;
    }

    static FrameConfig standard(std::size_t n_subcarriers = 64, std::size_t cp_len = 16,
                                std::size_t n_pilots = 64) {
        FrameConfig cfg;
        cfg.n_subcarriers = n_subcarriers;
        cfg.cp_len = cp_len;
        cfg.pilot_indices = comb_pilots(n_subcarriers, n_pilots);
        return cfg;
    }

    void validate() const {
        if (n_subcarriers == 0) throw InvalidInput("FrameConfig: n_subcarriers must be >= 1");
        if (cp_len > n_subcarriers) throw InvalidInput("FrameConfig: cp_len exceeds n_subcarriers");
        if (pilot_indices.empty()) throw InvalidInput("FrameConfig: at least one pilot required");
        for (std::size_t i = 0; i < pilot_indices.size(); ++i) {
            if (pilot_indices[i] >= n_subcarriers)
                throw InvalidInput("FrameConfig: pilot index out of range");
            if (i > 0 && pilot_indices[i] <= pilot_indices[i - 1])
                throw InvalidInput("FrameConfig: pilot indices must be sorted and unique");
        }
        if (clip) clip->validate();
    }

    bool is_pilot(std::size_t k) const {
        return std::binary_search(pilot_indices.begin(), pilot_indices.end(), k);
    }
};

/// Seed of the fixed pilot bit pattern. Changing it invalidates every trained
/// receiver bundle.
inline constexpr std::uint64_t kPilotPatternSeed = 0x5EED'0FD3'2017'0064ULL;

/// QPSK modulation of a fixed pseudo-random pattern of 2N bits. Subcarrier k
/// of the pilot block carries element k whenever k is a pilot tone.
inline FreqBlock pilot_sequence(std::size_t n_subcarriers) {
    thread_local FreqBlock cached;
    if (cached.size() != n_subcarriers) {
        Rng rng(kPilotPatternSeed);
        cached = qpsk_modulate(random_bits(2 * n_subcarriers, rng));
    }
    return cached;
}

struct TxFrame {
    FreqBlock pilot_block;
    FreqBlock data_block;
    BitVector data_bits;
    TimeSignal time_signal;
};

/// Pilot block followed by data block; each goes through IDFT and CP
/// insertion, then the whole frame is clipped if configured. Non-pilot tones
/// of the pilot block carry random QPSK filler drawn from `rng`.
inline TxFrame build_frame(std::span<const Bit> data_bits, const FrameConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.n_subcarriers;
    if (data_bits.size() != 2 * n) throw InvalidInput("build_frame: expected 2*N data bits");

    TxFrame frame;
    frame.data_bits.assign(data_bits.begin(), data_bits.end());
    frame.data_block = qpsk_modulate(data_bits);

    const FreqBlock pilots = pilot_sequence(n);
    if (cfg.n_pilots() == n) {
        frame.pilot_block = pilots;
    } else {
        frame.pilot_block = qpsk_modulate(random_bits(2 * n, rng));
        for (auto k : cfg.pilot_indices) frame.pilot_block[k] = pilots[k];
    }

    frame.time_signal.reserve(2 * (n + cfg.cp_len));
    for (const FreqBlock* block : {&frame.pilot_block, &frame.data_block}) {
        const TimeSignal with_cp = add_cp(idft(*block), cfg.cp_len);
        frame.time_signal.insert(frame.time_signal.end(), with_cp.begin(), with_cp.end());
    }
    if (cfg.clip) frame.time_signal = clip_signal(frame.time_signal, *cfg.clip);
    return frame;
}

}  // namespace dlofdm
