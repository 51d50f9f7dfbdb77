// SPDX-License-Identifier: Apache-2.0
#pragma once

// Monte Carlo BER evaluation, SNR sweeps, the train/test mismatch grid,
// result files and reports.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dlofdm/channel.hpp"
#include "dlofdm/common.hpp"
#include "dlofdm/estimators.hpp"
#include "dlofdm/neuralnet.hpp"
#include "dlofdm/receiver.hpp"
#include "dlofdm/signal.hpp"

namespace dlofdm {

enum class Detector { ls, mmse, dnn, perfect_csi };

inline std::string to_string(Detector d) {
    switch (d) {
        case Detector::ls: return "ls";
        case Detector::mmse: return "mmse";
        case Detector::dnn: return "dnn";
        case Detector::perfect_csi: return "perfect_csi";
    }
    return "?";
}

inline Detector detector_from_string(const std::string& s) {
    if (s == "ls") return Detector::ls;
    if (s == "mmse") return Detector::mmse;
    if (s == "dnn") return Detector::dnn;
    if (s == "perfect_csi") return Detector::perfect_csi;
    throw InvalidInput("unknown detector: " + s);
}

inline std::vector<Detector> parse_detector_list(const std::string& csv) {
    std::vector<Detector> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(detector_from_string(item));
    if (out.empty()) throw InvalidInput("empty detector list");
    return out;
}

struct BerPoint {
    std::string scenario_id;
    std::string detector;
    double snr_db = 0.0;
    std::uint64_t n_bits = 0;
    std::uint64_t n_errors = 0;
    std::uint64_t seed = 0;

    double ber() const { return n_bits == 0 ? 0.0 : static_cast<double>(n_errors) / static_cast<double>(n_bits); }
    /// Binomial standard deviation of the estimate.
    double stddev() const {
        const double p = ber();
        return n_bits == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(n_bits));
    }
    bool operator==(const BerPoint&) const = default;
};

// ---------------------------------------------------------------------------
// Evaluation

/// Everything a detector may look at for one frame. `true_response` is
/// only meant for the perfect-CSI reference; `frame_seed` for controls that
/// need their own randomness.
struct Observation {
    RxBlocks rx;
    FreqBlock true_response;
    std::uint64_t frame_seed = 0;
};

/// Fills one bit vector per observation. Must be a pure function of its
/// input for shard-count independence.
using BatchDetector = std::function<void(std::span<const Observation>, std::span<BitVector>)>;

struct DetectorResources {
    const CorrelationStats* stats = nullptr;
    const DnnReceiver* receiver = nullptr;
};

struct EvalOptions {
    std::uint64_t min_bits = 1'000'000;
    std::uint64_t max_frames = 0;  // 0 = no cap
    std::size_t jobs = 1;
};

/// Frames are generated and detected in fixed chunks of this many frames,
/// aligned to global frame indices, whatever the number of jobs.
inline constexpr std::size_t kEvalChunk = 256;

/// Seed of the channel draws behind an experiment's correlation statistics.
inline std::uint64_t stats_seed(std::uint64_t seed) { return derive_seed(seed, {0x57A75}); }

inline std::uint64_t frame_seed(std::uint64_t seed, double snr_db, std::uint64_t frame) {
    return derive_seed(seed, {std::bit_cast<std::uint64_t>(snr_db), frame});
}

/// Simulates frame `index` of an evaluation run. Detectors evaluated with
/// the same (seed, snr_db) see identical frames.
inline Observation simulate_frame(const ScenarioConfig& scenario, double snr_db, std::uint64_t seed,
                                  std::uint64_t index, BitVector& bits) {
    Observation obs;
    obs.frame_seed = frame_seed(seed, snr_db, index);
    Rng rng(obs.frame_seed);
    bits = random_bits(scenario.data_bits_per_frame(), rng);
    const TxFrame frame = build_frame(bits, scenario.frame, rng);
    const ChannelRealization h = sample_channel(scenario.channel, rng);
    obs.rx = transmit_frame(frame, h, snr_db, scenario.frame, rng);
    obs.true_response = frequency_response(h, scenario.frame.n_subcarriers);
    return obs;
}

inline std::uint64_t frames_for(const ScenarioConfig& scenario, const EvalOptions& opts) {
    const std::uint64_t per_frame = scenario.data_bits_per_frame();
    std::uint64_t frames = (opts.min_bits + per_frame - 1) / per_frame;
    if (opts.max_frames > 0) frames = std::min(frames, opts.max_frames);
    return frames;
}

/// Streams fresh frames through `detect` and counts data-bit errors.
inline BerPoint evaluate_ber_with(const std::string& scenario_id_str, const std::string& detector_name,
                                  const ScenarioConfig& scenario, double snr_db, std::uint64_t seed,
                                  const BatchDetector& detect, const EvalOptions& opts = {}) {
    scenario.validate();
    const std::uint64_t frames = frames_for(scenario, opts);
    const std::uint64_t n_chunks = (frames + kEvalChunk - 1) / kEvalChunk;
    std::vector<std::uint64_t> chunk_errors(n_chunks, 0);

    std::atomic<std::uint64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        std::vector<Observation> obs;
        std::vector<BitVector> sent;
        std::vector<BitVector> decided;
        for (std::uint64_t c = next++; c < n_chunks; c = next++) {
            try {
                const std::uint64_t first = c * kEvalChunk;
                const std::uint64_t count = std::min<std::uint64_t>(kEvalChunk, frames - first);
                obs.resize(count);
                sent.resize(count);
                decided.assign(count, BitVector{});
                for (std::uint64_t i = 0; i < count; ++i) obs[i] = simulate_frame(scenario, snr_db, seed, first + i, sent[i]);
                detect(obs, decided);
                std::uint64_t errors = 0;
                for (std::uint64_t i = 0; i < count; ++i) {
                    if (decided[i].size() != sent[i].size()) throw InvalidInput("detector returned the wrong number of bits");
                    for (std::size_t b = 0; b < sent[i].size(); ++b) errors += decided[i][b] != sent[i][b];
                }
                chunk_errors[c] = errors;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n_chunks;
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(opts.jobs, 1, std::max<std::uint64_t>(n_chunks, 1));
    std::vector<std::thread> threads;
    for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);

    BerPoint p;
    p.scenario_id = scenario_id_str;
    p.detector = detector_name;
    p.snr_db = snr_db;
    p.n_bits = frames * scenario.data_bits_per_frame();
    for (auto e : chunk_errors) p.n_errors += e;
    p.seed = seed;
    return p;
}

/// Builds the batch detector for one of the standard receivers at a given
/// evaluation SNR (the LMMSE filter depends on it).
inline BatchDetector make_detector(Detector which, const ScenarioConfig& scenario, double snr_db,
                                   const DetectorResources& res) {
    const PilotPattern pattern = PilotPattern::from_frame(scenario.frame);
    const std::size_t n = scenario.frame.n_subcarriers;
    switch (which) {
        case Detector::perfect_csi:
            return [](std::span<const Observation> obs, std::span<BitVector> out) {
                for (std::size_t i = 0; i < obs.size(); ++i) out[i] = equalize_and_detect(obs[i].rx.data, obs[i].true_response);
            };
        case Detector::ls:
            if (pattern.size() < n && pattern.size() < 2)
                throw InvalidInput("ls detector needs at least two pilots to interpolate");
            return [pattern, n](std::span<const Observation> obs, std::span<BitVector> out) {
                for (std::size_t i = 0; i < obs.size(); ++i) {
                    const auto h_ls = ls_estimate(obs[i].rx.pilot, pattern);
                    const FreqBlock h = pattern.size() == n ? FreqBlock(h_ls) : interpolate_linear(pattern.indices, h_ls, n);
                    out[i] = equalize_and_detect(obs[i].rx.data, h);
                }
            };
        case Detector::mmse: {
            if (!res.stats) throw ResourceError("mmse detector needs correlation statistics (run `stats` first)");
            if (res.stats->pilot_indices != pattern.indices || res.stats->n_subcarriers != n)
                throw ResourceError("correlation statistics were computed for a different pilot pattern");
            auto filter = std::make_shared<const MmseFilter>(*res.stats, snr_db);
            return [pattern, filter](std::span<const Observation> obs, std::span<BitVector> out) {
                for (std::size_t i = 0; i < obs.size(); ++i)
                    out[i] = equalize_and_detect(obs[i].rx.data, filter->apply(ls_estimate(obs[i].rx.pilot, pattern)));
            };
        }
        case Detector::dnn: {
            if (!res.receiver) throw ResourceError("dnn detector needs a trained receiver bundle (run `train` first)");
            res.receiver->validate();
            if (res.receiver->n_subcarriers != n) throw ResourceError("receiver was trained for a different frame size");
            const DnnReceiver* rx = res.receiver;
            return [rx, n](std::span<const Observation> obs, std::span<BitVector> out) {
                nn::Matrix<float> features(static_cast<Eigen::Index>(4 * n), static_cast<Eigen::Index>(obs.size()));
                for (std::size_t i = 0; i < obs.size(); ++i)
                    featurize_into<float>(obs[i].rx.pilot, obs[i].rx.data, features.col(static_cast<Eigen::Index>(i)).data());
                auto bits = detect_bits_batch(*rx, features);
                std::move(bits.begin(), bits.end(), out.begin());
            };
        }
    }
    throw InvalidInput("unknown detector");
}

inline BerPoint evaluate_ber(Detector which, const ScenarioConfig& scenario, double snr_db, std::uint64_t seed,
                             const DetectorResources& res, const EvalOptions& opts = {}) {
    return evaluate_ber_with(scenario_id(scenario), to_string(which), scenario, snr_db, seed,
                             make_detector(which, scenario, snr_db, res), opts);
}

// ---------------------------------------------------------------------------
// Result files

inline constexpr const char* kCsvHeader = "scenario_id,detector,snr_db,n_bits,n_errors,ber,seed";

inline std::string format_snr(double snr_db) {
    if (std::isinf(snr_db)) return snr_db > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", snr_db);
    return buf;
}

inline std::string to_csv_row(const BerPoint& p) {
    char ber[40];
    std::snprintf(ber, sizeof ber, "%.10e", p.ber());
    std::ostringstream os;
    os << p.scenario_id << ',' << p.detector << ',' << format_snr(p.snr_db) << ',' << p.n_bits << ',' << p.n_errors
       << ',' << ber << ',' << p.seed;
    return os.str();
}

inline BerPoint from_csv_row(const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 7) throw InvalidInput("malformed results row: " + line);
    BerPoint p;
    try {
        p.scenario_id = f[0];
        p.detector = f[1];
        p.snr_db = std::stod(f[2]);
        p.n_bits = std::stoull(f[3]);
        p.n_errors = std::stoull(f[4]);
        p.seed = std::stoull(f[6]);
    } catch (const std::exception&) {
        throw InvalidInput("malformed results row: " + line);
    }
    if (p.n_errors > p.n_bits) throw InvalidInput("results row has more errors than bits: " + line);
    return p;
}

inline std::vector<BerPoint> read_results(const std::filesystem::path& path) {
    std::vector<BerPoint> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    if (!std::getline(in, line)) return out;
    if (line != kCsvHeader) throw InvalidInput("unexpected results header in " + path.string());
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(from_csv_row(line));
    return out;
}

/// Rewrites the file with `p` appended, via a temporary and a rename, so a
/// crash never leaves a half-written row behind.
inline void append_result(const std::filesystem::path& path, const BerPoint& p) {
    std::vector<BerPoint> rows = read_results(path);
    rows.push_back(p);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << kCsvHeader << '\n';
        for (const auto& r : rows) out << to_csv_row(r) << '\n';
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline bool same_point(const BerPoint& a, const std::string& scenario, const std::string& detector, double snr,
                       std::uint64_t seed) {
    return a.scenario_id == scenario && a.detector == detector && format_snr(a.snr_db) == format_snr(snr) &&
           a.seed == seed;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
    ScenarioConfig scenario;
    std::vector<double> snr_grid = {5, 10, 15, 20, 25};
    std::vector<Detector> detectors = {Detector::ls, Detector::mmse, Detector::dnn};
    EvalOptions eval;
    std::uint64_t seed = 1;

    void validate() const {
        scenario.validate();
        if (snr_grid.empty()) throw InvalidInput("SweepSpec: empty SNR grid");
        if (detectors.empty()) throw InvalidInput("SweepSpec: no detectors");
        if (eval.min_bits < 10'000) throw InvalidInput("SweepSpec: min_bits must be >= 1e4");
    }
};

/// Evaluates detectors x snr_grid, appending each new point to `csv_path`.
/// Points already present in the file are returned as stored, not rerun.
inline std::vector<BerPoint> run_sweep(const SweepSpec& spec, const DetectorResources& res,
                                       const std::filesystem::path& csv_path,
                                       const std::function<void(const BerPoint&)>& on_point = {}) {
    spec.validate();
    const std::string id = scenario_id(spec.scenario);
    std::vector<BerPoint> out;
    for (Detector d : spec.detectors) {
        for (double snr : spec.snr_grid) {
            const auto existing = read_results(csv_path);
            auto hit = std::find_if(existing.begin(), existing.end(), [&](const BerPoint& p) {
                return same_point(p, id, to_string(d), snr, spec.seed);
            });
            if (hit != existing.end()) {
                out.push_back(*hit);
                continue;
            }
            BerPoint p = evaluate_ber(d, spec.scenario, snr, spec.seed, res, spec.eval);
            append_result(csv_path, p);
            if (on_point) on_point(p);
            out.push_back(std::move(p));
        }
    }
    return out;
}

struct RobustnessCell {
    ChannelConfig channel;
    bool exceeds_cp = false;  // max_delay > cp_len: genuine ISI at test time
    BerPoint point;
};

/// n_paths in {12, 24, 36} x max_delay in {8, 12, 16}, decay constant kept.
inline std::vector<ChannelConfig> default_robustness_grid(const ChannelConfig& base) {
    std::vector<ChannelConfig> out;
    for (std::size_t paths : {12, 24, 36})
        for (std::size_t delay : {8, 12, 16}) {
            ChannelConfig c = base;
            c.n_paths = paths;
            c.max_delay = delay;
            out.push_back(c);
        }
    return out;
}

inline std::string variation_id(const ScenarioConfig& base, const ChannelConfig& c) {
    std::ostringstream os;
    os << scenario_id(base) << "@paths" << c.n_paths << "-delay" << c.max_delay;
    return os.str();
}

/// Evaluates one fixed receiver, trained on `base`, against channels drawn
/// from each variation.
inline std::vector<RobustnessCell> run_robustness_grid(const ScenarioConfig& base,
                                                       const std::vector<ChannelConfig>& variations,
                                                       const DnnReceiver& rx, const std::vector<double>& snr_grid,
                                                       std::uint64_t seed, const EvalOptions& opts = {}) {
    if (snr_grid.empty()) throw InvalidInput("robustness grid: empty SNR grid");
    std::vector<RobustnessCell> out;
    DetectorResources res;
    res.receiver = &rx;
    for (const auto& var : variations) {
        ScenarioConfig sc = base;
        sc.channel = var;
        sc.validate();
        for (double snr : snr_grid) {
            RobustnessCell cell;
            cell.channel = var;
            cell.exceeds_cp = var.max_delay > base.frame.cp_len;
            cell.point = evaluate_ber_with(variation_id(base, var), "dnn", sc, snr, seed,
                                           make_detector(Detector::dnn, sc, snr, res), opts);
            out.push_back(std::move(cell));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

/// Zero-error points are drawn at 1/(2 n_bits).
inline double plotted_ber(const BerPoint& p) {
    return p.n_errors == 0 ? 1.0 / (2.0 * static_cast<double>(p.n_bits)) : p.ber();
}

/// Bottom of the log axis: min(1e-5, smallest nonzero BER / 2), lowered
/// further if a zero-error marker would otherwise fall off the chart.
inline double report_y_floor(std::span<const BerPoint> points) {
    double floor = 1e-5;
    for (const auto& p : points) floor = std::min(floor, p.n_errors == 0 ? plotted_ber(p) : p.ber() / 2.0);
    return floor;
}

namespace detail {

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string file_safe(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    return out;
}

}  // namespace detail

/// One log-scale BER chart (SVG) for a single scenario.
inline std::string render_ber_chart(const std::string& title, std::span<const BerPoint> points) {
    if (points.empty()) throw InvalidInput("render_ber_chart: no points");
    constexpr double W = 640, H = 480, L = 80, R = 160, T = 40, B = 60;
    const double x_min = std::min_element(points.begin(), points.end(), [](auto& a, auto& b) { return a.snr_db < b.snr_db; })->snr_db;
    double x_max = std::max_element(points.begin(), points.end(), [](auto& a, auto& b) { return a.snr_db < b.snr_db; })->snr_db;
    if (x_max == x_min) x_max = x_min + 1.0;
    const double y_lo = std::log10(report_y_floor(points));
    const double y_hi = 0.0;
    auto px = [&](double snr) { return L + (snr - x_min) / (x_max - x_min) * (W - L - R); };
    auto py = [&](double ber) { return T + (y_hi - std::log10(ber)) / (y_hi - y_lo) * (H - T - B); };

    static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::map<std::string, std::vector<BerPoint>> curves;
    for (const auto& p : points) curves[p.detector].push_back(p);

    std::ostringstream os;
    char buf[256];
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << detail::svg_escape(title)
       << "</text>\n";
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n",
                  L, T, W - L - R, H - T - B);
    os << buf;
    for (int e = static_cast<int>(std::ceil(y_lo)); e <= 0; ++e) {
        const double y = py(std::pow(10.0, e));
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                      "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">1e%d</text>\n",
                      L, y, W - R, y, L - 6, y + 4, e);
        os << buf;
    }
    std::set<double> xs;
    for (const auto& p : points) xs.insert(p.snr_db);
    for (double x : xs) {
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n", px(x), H - B + 18,
                      format_snr(x).c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">SNR (dB)</text>\n", L + (W - L - R) / 2,
                  H - 16);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"18\" y=\"%.1f\" transform=\"rotate(-90 18 %.1f)\" text-anchor=\"middle\">BER</text>\n",
                  T + (H - T - B) / 2, T + (H - T - B) / 2);
    os << buf;

    std::size_t ci = 0;
    for (auto& [name, pts] : curves) {
        std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.snr_db < b.snr_db; });
        const char* color = colors[ci % std::size(colors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : pts) {
            std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(p.snr_db), py(plotted_ber(p)));
            os << buf;
        }
        os << "\"/>\n";
        for (const auto& p : pts) {
            const bool zero = p.n_errors == 0;
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"4\" fill=\"%s\" stroke=\"%s\"/>\n",
                          px(p.snr_db), py(plotted_ber(p)), zero ? "white" : color, color);
            os << buf;
        }
        const double ly = T + 20 + 20 * static_cast<double>(ci);
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>"
                      "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                      W - R + 12, ly, W - R + 36, ly, color, W - R + 42, ly + 4, detail::svg_escape(name).c_str());
        os << buf;
        ++ci;
    }
    const double note_y = T + 30 + 20 * static_cast<double>(ci);
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"4\" fill=\"white\" stroke=\"black\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">0 errors, drawn</text><text x=\"%.1f\" y=\"%.1f\">at 1/(2 n_bits)</text>\n",
                  W - R + 24, note_y, W - R + 42, note_y + 4, W - R + 42, note_y + 18);
    os << buf;
    os << "</svg>\n";
    return os.str();
}

/// Plain-text table of every point.
inline std::string render_summary(std::span<const BerPoint> points) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-40s %-12s %8s %12s %10s %12s\n", "scenario_id", "detector", "snr_db", "n_bits",
                  "n_errors", "ber");
    os << buf;
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%-40s %-12s %8s %12llu %10llu %12.4e\n", p.scenario_id.c_str(), p.detector.c_str(),
                      format_snr(p.snr_db).c_str(), static_cast<unsigned long long>(p.n_bits),
                      static_cast<unsigned long long>(p.n_errors), p.ber());
        os << buf;
    }
    return os.str();
}

/// Writes ber_<scenario>.svg per scenario and summary.txt into `out_dir`.
/// With a detector filter, only those detectors are drawn; an empty
/// selection is an error rather than an empty chart.
inline std::vector<std::filesystem::path> emit_report(std::span<const BerPoint> points, const std::filesystem::path& out_dir,
                                                      const std::vector<std::string>& detectors = {}) {
    std::vector<BerPoint> selected;
    for (const auto& p : points)
        if (detectors.empty() || std::find(detectors.begin(), detectors.end(), p.detector) != detectors.end())
            selected.push_back(p);
    if (selected.empty()) throw InvalidInput("emit_report: no points for the selected detectors");

    std::filesystem::create_directories(out_dir);
    std::map<std::string, std::vector<BerPoint>> by_scenario;
    for (const auto& p : selected) by_scenario[p.scenario_id].push_back(p);

    std::vector<std::filesystem::path> written;
    for (const auto& [id, pts] : by_scenario) {
        const auto path = out_dir / ("ber_" + detail::file_safe(id) + ".svg");
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << render_ber_chart(id, pts);
        written.push_back(path);
    }
    const auto summary = out_dir / "summary.txt";
    std::ofstream out(summary);
    if (!out) throw std::runtime_error("cannot write " + summary.string());
    out << render_summary(selected);
    written.push_back(summary);
    return written;
}

// ---------------------------------------------------------------------------
// Experiment configuration file

struct ExperimentConfig {
    ScenarioConfig scenario;
    std::vector<double> snr_grid = {5, 10, 15, 20, 25};
    EvalOptions eval;
    std::uint64_t seed = 1;
    nn::TrainConfig train;
    std::size_t stats_draws = 100'000;
    std::vector<ChannelConfig> variations;  // empty = default grid around scenario.channel
};

/// Parses a JSON experiment configuration. Unknown keys are rejected.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "name",       "n_subcarriers", "cp_len",        "n_pilots",      "pilot_indices", "clip_ratio",
        "clip_sigma_ref", "n_paths",   "max_delay",     "decay_const",   "train_snr_db",  "train_snr_range",
        "snr_grid",   "min_bits",      "max_frames",    "seed",          "n_steps",       "batch_size",
        "learning_rate", "stats_draws", "variations", "fading"};
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw InvalidInput("unknown config key: " + key);

    ExperimentConfig c;
    try {
        c.scenario = scenario_from_json(j);
        if (j.contains("snr_grid")) {
            c.snr_grid.clear();
            for (const auto& v : j["snr_grid"]) c.snr_grid.push_back(detail::snr_from_json(v));
        }
        c.eval.min_bits = j.value("min_bits", c.eval.min_bits);
        c.eval.max_frames = j.value("max_frames", c.eval.max_frames);
        c.seed = j.value("seed", c.seed);
        c.train.n_steps = j.value("n_steps", c.train.n_steps);
        c.train.batch_size = j.value("batch_size", c.train.batch_size);
        c.train.learning_rate = j.value("learning_rate", c.train.learning_rate);
        c.train.seed = c.seed;
        c.stats_draws = j.value("stats_draws", c.stats_draws);
        if (j.contains("variations")) {
            for (const auto& v : j["variations"]) {
                ChannelConfig ch = c.scenario.channel;
                ch.n_paths = v.value("n_paths", ch.n_paths);
                ch.max_delay = v.value("max_delay", ch.max_delay);
                ch.decay_const = v.value("decay_const", ch.decay_const);
                ch.validate();
                if (ch.max_delay >= c.scenario.frame.n_subcarriers)
                    throw InvalidInput("variation max_delay must be smaller than n_subcarriers");
                c.variations.push_back(ch);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("config: ") + e.what());
    }
    if (c.snr_grid.empty()) throw InvalidInput("config: snr_grid must not be empty");
    if (c.eval.min_bits < 10'000) throw InvalidInput("config: min_bits must be >= 1e4");
    if (c.stats_draws < 10'000) throw InvalidInput("config: stats_draws must be >= 1e4");
    c.train.validate();
    if (c.variations.empty()) c.variations = default_robustness_grid(c.scenario.channel);
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config " + path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

}  // namespace dlofdm
