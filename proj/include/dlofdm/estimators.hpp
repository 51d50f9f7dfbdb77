// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pilot-based baseline receivers: LS and LMMSE channel estimation, cyclic
// linear interpolation, zero-forcing equalization and hard detection.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dlofdm/channel.hpp"
#include "dlofdm/common.hpp"
#include "dlofdm/signal.hpp"

namespace dlofdm {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

struct PilotPattern {
    std::vector<std::size_t> indices;
    std::vector<Complex> values;

    static PilotPattern from_frame(const FrameConfig& cfg) {
        const FreqBlock seq = pilot_sequence(cfg.n_subcarriers);
        PilotPattern p;
        p.indices = cfg.pilot_indices;
        for (auto k : p.indices) p.values.push_back(seq[k]);
        return p;
    }

    std::size_t size() const { return indices.size(); }

    void validate() const {
        if (indices.size() != values.size()) throw InvalidInput("PilotPattern: size mismatch");
        for (const auto& v : values)
            if (std::abs(std::abs(v) - 1.0) > 1e-9) throw InvalidInput("PilotPattern: pilots must be unit magnitude");
    }
};

/// Second-order channel statistics in the frequency domain.
struct CorrelationStats {
    static constexpr int kFormatVersion = 1;

    std::size_t n_subcarriers = 0;
    std::vector<std::size_t> pilot_indices;
    CMatrix r_full_pilot;   // N x P, E[H(k) conj(H(p))]
    CMatrix r_pilot_pilot;  // P x P, Hermitian
    std::size_t n_draws = 0;
    ChannelConfig channel;
};

/// Sample means of H(k) conj(H(p)) over independent channel draws.
inline CorrelationStats estimate_correlation_stats(const ChannelConfig& cfg, const PilotPattern& pattern,
                                                   std::size_t n_subcarriers, std::size_t n_draws, Rng& rng) {
    if (n_draws < 10'000) throw InvalidInput("estimate_correlation_stats: n_draws must be >= 1e4");
    if (cfg.max_delay >= n_subcarriers) throw InvalidInput("estimate_correlation_stats: max_delay must be < N");
    const auto n = static_cast<Eigen::Index>(n_subcarriers);
    const auto p = static_cast<Eigen::Index>(pattern.size());

    constexpr std::size_t kChunk = 512;
    CMatrix acc = CMatrix::Zero(n, p);
    CMatrix full(n, kChunk);
    CMatrix pilots(p, kChunk);
    std::size_t done = 0;
    while (done < n_draws) {
        const std::size_t m = std::min(kChunk, n_draws - done);
        for (std::size_t c = 0; c < m; ++c) {
            const FreqBlock hk = frequency_response(sample_channel(cfg, rng), n_subcarriers);
            const auto col = static_cast<Eigen::Index>(c);
            for (Eigen::Index k = 0; k < n; ++k) full(k, col) = hk[static_cast<std::size_t>(k)];
            for (Eigen::Index i = 0; i < p; ++i) pilots(i, col) = hk[pattern.indices[static_cast<std::size_t>(i)]];
        }
        const auto mm = static_cast<Eigen::Index>(m);
        acc.noalias() += full.leftCols(mm) * pilots.leftCols(mm).adjoint();
        done += m;
    }
    acc /= static_cast<double>(n_draws);

    CorrelationStats stats;
    stats.n_subcarriers = n_subcarriers;
    stats.pilot_indices = pattern.indices;
    stats.n_draws = n_draws;
    stats.channel = cfg;
    stats.r_full_pilot = acc;
    CMatrix rpp(p, p);
    for (Eigen::Index i = 0; i < p; ++i) rpp.row(i) = acc.row(static_cast<Eigen::Index>(pattern.indices[static_cast<std::size_t>(i)]));
    stats.r_pilot_pilot = 0.5 * (rpp + rpp.adjoint());
    return stats;
}

/// H_LS(p) = Y(p) / X(p) at every pilot tone.
inline std::vector<Complex> ls_estimate(std::span<const Complex> y_pilot, const PilotPattern& pattern) {
    std::vector<Complex> est(pattern.size());
    for (std::size_t i = 0; i < pattern.size(); ++i) est[i] = y_pilot[pattern.indices[i]] / pattern.values[i];
    return est;
}

/// Piecewise-linear interpolation of real and imaginary parts over subcarrier
/// index, wrapping from the last pilot back to the first.
inline FreqBlock interpolate_linear(std::span<const std::size_t> indices, std::span<const Complex> values,
                                    std::size_t n) {
    if (indices.size() < 2) throw InvalidInput("interpolate_linear: need at least two pilot tones");
    if (indices.size() != values.size()) throw InvalidInput("interpolate_linear: size mismatch");
    FreqBlock out(n);
    const std::size_t p = indices.size();
    for (std::size_t i = 0; i < p; ++i) {
        const std::size_t lo = indices[i];
        const std::size_t hi = (i + 1 < p) ? indices[i + 1] : indices[0] + n;
        const Complex a = values[i];
        const Complex b = values[(i + 1) % p];
        const double span = static_cast<double>(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) {
            const double t = static_cast<double>(k - lo) / span;
            out[k % n] = a + t * (b - a);
        }
    }
    return out;
}

/// Precomputed LMMSE smoother W = R_fp (R_pp + sigma^2 I)^{-1} for one SNR.
class MmseFilter {
public:
    MmseFilter(const CorrelationStats& stats, double snr_db) : n_(stats.n_subcarriers) {
        const double var = noise_variance(snr_db);
        CMatrix a = stats.r_pilot_pilot;
        a.diagonal().array() += var;
        Eigen::LLT<CMatrix> llt(a);
        if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13))
            throw NumericError("mmse_estimate: regularized pilot correlation is singular");
        // W^H = A^{-1} R_fp^H, A Hermitian.
        weights_ = llt.solve(stats.r_full_pilot.adjoint()).adjoint();
        if (!weights_.allFinite()) throw NumericError("mmse_estimate: non-finite filter weights");
    }

    FreqBlock apply(std::span<const Complex> h_ls) const {
        const CVector x = Eigen::Map<const CVector>(h_ls.data(), static_cast<Eigen::Index>(h_ls.size()));
        const CVector y = weights_ * x;
        return {y.data(), y.data() + y.size()};
    }

    std::size_t n_subcarriers() const { return n_; }
    const CMatrix& weights() const { return weights_; }

private:
    std::size_t n_;
    CMatrix weights_;
};

inline FreqBlock mmse_estimate(std::span<const Complex> y_pilot, const PilotPattern& pattern,
                               const CorrelationStats& stats, double snr_db) {
    if (stats.pilot_indices != pattern.indices)
        throw InvalidInput("mmse_estimate: statistics were computed for a different pilot pattern");
    return MmseFilter(stats, snr_db).apply(ls_estimate(y_pilot, pattern));
}

struct EqualizerDiagnostics {
    std::size_t guarded_tones = 0;
};

inline constexpr double kDeepFadeFloor = 1e-12;

/// Zero-forcing X = Y / H followed by hard QPSK decisions. Estimates below
/// kDeepFadeFloor in magnitude are lifted to the floor (phase kept, or 1 if
/// the estimate is exactly 0) and counted in `diag`.
inline BitVector equalize_and_detect(std::span<const Complex> y_data, std::span<const Complex> h_est,
                                     EqualizerDiagnostics* diag = nullptr) {
    if (y_data.size() != h_est.size()) throw InvalidInput("equalize_and_detect: length mismatch");
    FreqBlock x(y_data.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        Complex h = h_est[k];
        const double mag = std::abs(h);
        if (mag < kDeepFadeFloor) {
            h = mag > 0.0 ? h * (kDeepFadeFloor / mag) : Complex{kDeepFadeFloor, 0.0};
            if (diag) ++diag->guarded_tones;
        }
        x[k] = y_data[k] / h;
    }
    return qpsk_demodulate_hard(x);
}

// ---------------------------------------------------------------------------
// Cache file

namespace detail {

inline nlohmann::json matrix_to_json(const CMatrix& m) {
    nlohmann::json data = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back({m(r, c).real(), m(r, c).imag()});
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline CMatrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw InvalidInput("matrix entry count mismatch");
    CMatrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& e = data[static_cast<std::size_t>(r * cols + c)];
            m(r, c) = {e.at(0).get<double>(), e.at(1).get<double>()};
        }
    return m;
}

}  // namespace detail

inline nlohmann::json channel_to_json(const ChannelConfig& c) {
    nlohmann::json j{{"n_paths", c.n_paths}, {"max_delay", c.max_delay}, {"decay_const", c.decay_const}};
    if (!c.fading) j["fading"] = false;
    return j;
}

inline ChannelConfig channel_from_json(const nlohmann::json& j) {
    ChannelConfig c;
    c.n_paths = j.at("n_paths").get<std::size_t>();
    c.max_delay = j.at("max_delay").get<std::size_t>();
    c.decay_const = j.at("decay_const").get<double>();
    c.fading = j.value("fading", true);
    return c;
}

inline void save_stats(const CorrelationStats& s, const std::filesystem::path& path) {
    nlohmann::json j{{"format_version", CorrelationStats::kFormatVersion},
                     {"n_subcarriers", s.n_subcarriers},
                     {"pilot_indices", s.pilot_indices},
                     {"n_draws", s.n_draws},
                     {"channel", channel_to_json(s.channel)},
                     {"r_full_pilot", detail::matrix_to_json(s.r_full_pilot)},
                     {"r_pilot_pilot", detail::matrix_to_json(s.r_pilot_pilot)}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline CorrelationStats load_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ResourceError("correlation statistics not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ResourceError("corrupt statistics file " + path.string() + ": " + e.what());
    }
    if (j.value("format_version", 0) != CorrelationStats::kFormatVersion)
        throw ResourceError("unsupported statistics format in " + path.string());
    CorrelationStats s;
    s.n_subcarriers = j.at("n_subcarriers").get<std::size_t>();
    s.pilot_indices = j.at("pilot_indices").get<std::vector<std::size_t>>();
    s.n_draws = j.at("n_draws").get<std::size_t>();
    s.channel = channel_from_json(j.at("channel"));
    s.r_full_pilot = detail::matrix_from_json(j.at("r_full_pilot"));
    s.r_pilot_pilot = detail::matrix_from_json(j.at("r_pilot_pilot"));
    return s;
}

}  // namespace dlofdm
