// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sample-spaced multipath channel: tapped delay line with an exponential
// power-delay profile, linear/circular propagation and AWGN.

#include <cmath>
#include <numbers>
#include <span>
#include <utility>

#include <boost/random/normal_distribution.hpp>

#include "dlofdm/common.hpp"
#include "dlofdm/signal.hpp"

namespace dlofdm {

struct ChannelConfig {
    std::size_t n_paths = 24;
    std::size_t max_delay = 16;   // samples
    double decay_const = 4.0;     // samples
    bool fading = true;           // false: static unit channel h = [1, 0, ..., 0]

    void validate() const {
        if (n_paths < 1) throw InvalidInput("ChannelConfig: n_paths must be >= 1");
        if (!(decay_const > 0.0)) throw InvalidInput("ChannelConfig: decay_const must be positive");
    }

    bool operator==(const ChannelConfig&) const = default;
};

/// Taps h(0..D), D = max_delay.
struct ChannelRealization {
    std::vector<Complex> taps;

    std::size_t max_delay() const { return taps.empty() ? 0 : taps.size() - 1; }
    double energy() const {
        double e = 0.0;
        for (const auto& t : taps) e += std::norm(t);
        return e;
    }
};

/// Per-path variance scale c such that n_paths * E_d[c * exp(-d/tau)] = 1 for
/// d uniform on {0..D}.
inline double path_power_scale(const ChannelConfig& cfg) {
    double mean_profile = 0.0;
    for (std::size_t d = 0; d <= cfg.max_delay; ++d)
        mean_profile += std::exp(-static_cast<double>(d) / cfg.decay_const);
    mean_profile /= static_cast<double>(cfg.max_delay + 1);
    return 1.0 / (static_cast<double>(cfg.n_paths) * mean_profile);
}

/// n_paths paths at uniform integer delays in [0, max_delay], coinciding
/// paths add. Each path gain is CN(0, c exp(-delay/decay_const)).
inline ChannelRealization sample_channel(const ChannelConfig& cfg, Rng& rng) {
    cfg.validate();
    if (!cfg.fading) {
        ChannelRealization unit;
        unit.taps.assign(cfg.max_delay + 1, Complex{});
        unit.taps[0] = 1.0;
        return unit;
    }
    const double scale = path_power_scale(cfg);
    std::vector<double> sd(cfg.max_delay + 1);  // per-component std-dev at each delay
    for (std::size_t d = 0; d <= cfg.max_delay; ++d)
        sd[d] = std::sqrt(0.5 * scale * std::exp(-static_cast<double>(d) / cfg.decay_const));

    std::uniform_int_distribution<std::size_t> delay_dist(0, cfg.max_delay);
    boost::random::normal_distribution<double> gauss(0.0, 1.0);
    ChannelRealization h;
    h.taps.assign(cfg.max_delay + 1, Complex{});
    for (std::size_t p = 0; p < cfg.n_paths; ++p) {
        const std::size_t d = delay_dist(rng);
        const double re = gauss(rng);
        const double im = gauss(rng);
        h.taps[d] += Complex{sd[d] * re, sd[d] * im};
    }
    return h;
}

/// y(n) = sum_l h(l) x((n - l) mod N).
inline TimeSignal circular_convolve(std::span<const Complex> x, const ChannelRealization& h) {
    const std::size_t n = x.size();
    TimeSignal y(n);
    for (std::size_t i = 0; i < n; ++i) {
        Complex acc{};
        for (std::size_t l = 0; l < h.taps.size(); ++l) acc += detail::cmul(h.taps[l], x[(i + n * (l / n + 1) - l) % n]);
        y[i] = acc;
    }
    return y;
}

/// Full linear convolution, length len(x) + D.
inline TimeSignal linear_convolve(std::span<const Complex> x, const ChannelRealization& h) {
    if (x.empty() || h.taps.empty()) return TimeSignal(x.begin(), x.end());
    TimeSignal y(x.size() + h.taps.size() - 1);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t l = 0; l < h.taps.size(); ++l) y[i + l] += detail::cmul(x[i], h.taps[l]);
    return y;
}

/// Adds CN(0, 10^(-snr_db/10)) noise per sample; +inf SNR is a no-op.
inline TimeSignal add_awgn(std::span<const Complex> y, double snr_db, Rng& rng) {
    TimeSignal out(y.begin(), y.end());
    const double var = noise_variance(snr_db);
    if (var == 0.0) return out;
    boost::random::normal_distribution<double> gauss(0.0, std::sqrt(var / 2.0));
    for (auto& v : out) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        v += Complex{re, im};
    }
    return out;
}

/// H(k) = sum_l h(l) e^{-j 2 pi k l / N}; with unitary block DFTs this gives
/// Y = X .* H exactly when the CP covers the channel.
inline FreqBlock frequency_response(const ChannelRealization& h, std::size_t n) {
    if (h.taps.size() > n) throw InvalidInput("frequency_response: channel longer than N");
    FreqBlock padded(n);
    std::copy(h.taps.begin(), h.taps.end(), padded.begin());
    FreqBlock hk = dft(padded, n);
    const double s = std::sqrt(static_cast<double>(n));
    for (auto& v : hk) v *= s;
    return hk;
}

struct RxBlocks {
    FreqBlock pilot;
    FreqBlock data;
};

/// Propagates a frame through h with AWGN and returns the two received
/// frequency-domain blocks. Without a CP each block is read from its own
/// N-sample window of the received stream, so inter-block interference
/// leaks in unchanged.
inline RxBlocks transmit_frame(const TxFrame& frame, const ChannelRealization& h, double snr_db,
                               const FrameConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.n_subcarriers;
    const std::size_t block_len = n + cfg.cp_len;
    if (frame.time_signal.size() != 2 * block_len)
        throw InvalidInput("transmit_frame: frame length does not match FrameConfig");

    // The convolution tail belongs to the next frame and is dropped. Noise on
    // the discarded CP samples would never be observed, so it is only drawn
    // for the two N-sample windows.
    const TimeSignal rx = linear_convolve(frame.time_signal, h);
    auto block_at = [&](std::size_t b) {
        const auto first = rx.begin() + static_cast<std::ptrdiff_t>(b * block_len + cfg.cp_len);
        const TimeSignal noisy = add_awgn(std::span<const Complex>(&*first, n), snr_db, rng);
        return dft(noisy, n);
    };
    RxBlocks out;
    out.pilot = block_at(0);
    out.data = block_at(1);
    return out;
}

}  // namespace dlofdm
