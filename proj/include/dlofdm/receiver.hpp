// SPDX-License-Identifier: Apache-2.0
#pragma once

// Neural receiver: eight independently trained sub-networks, each mapping
// the received pilot and data blocks straight to 16 data bits.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dlofdm/channel.hpp"
#include "dlofdm/common.hpp"
#include "dlofdm/estimators.hpp"
#include "dlofdm/neuralnet.hpp"
#include "dlofdm/signal.hpp"

namespace dlofdm {

inline constexpr std::size_t kBitsPerGroup = 16;

/// Frame layout, propagation model and training-time SNR of one experiment.
struct ScenarioConfig {
    std::string name = "default";
    FrameConfig frame = FrameConfig::standard();
    ChannelConfig channel;
    double train_snr_db = 20.0;
    /// When set, each training frame draws its SNR uniformly from [lo, hi].
    std::optional<std::pair<double, double>> train_snr_range;

    std::size_t data_bits_per_frame() const { return 2 * frame.n_subcarriers; }
    std::size_t feature_dim() const { return 4 * frame.n_subcarriers; }
    std::size_t n_groups() const { return data_bits_per_frame() / kBitsPerGroup; }

    void validate() const {
        frame.validate();
        channel.validate();
        if (channel.max_delay >= frame.n_subcarriers)
            throw InvalidInput("ScenarioConfig: max_delay must be smaller than n_subcarriers");
        if (data_bits_per_frame() % kBitsPerGroup != 0)
            throw InvalidInput("ScenarioConfig: data bits per frame must be a multiple of 16");
        if (train_snr_range && !(train_snr_range->first <= train_snr_range->second))
            throw InvalidInput("ScenarioConfig: empty training SNR range");
    }
};

// ---------------------------------------------------------------------------
// Features

/// [Re Y_pilot, Im Y_pilot, Re Y_data, Im Y_data], no normalization.
template <class T>
void featurize_into(std::span<const Complex> y_pilot, std::span<const Complex> y_data, T* out) {
    const std::size_t n = y_pilot.size();
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = static_cast<T>(y_pilot[k].real());
        out[n + k] = static_cast<T>(y_pilot[k].imag());
        out[2 * n + k] = static_cast<T>(y_data[k].real());
        out[3 * n + k] = static_cast<T>(y_data[k].imag());
    }
}

inline std::vector<double> featurize(std::span<const Complex> y_pilot, std::span<const Complex> y_data) {
    if (y_pilot.size() != y_data.size()) throw InvalidInput("featurize: block lengths differ");
    std::vector<double> f(4 * y_pilot.size());
    featurize_into(y_pilot, y_data, f.data());
    return f;
}

/// Bits [16 g, 16 g + 16) of a frame, carried on data subcarriers [8 g, 8 g + 8).
inline std::span<const Bit> group_bits(std::span<const Bit> data_bits, std::size_t group) {
    return data_bits.subspan(group * kBitsPerGroup, kBitsPerGroup);
}

// ---------------------------------------------------------------------------
// Training data

struct TrainingSample {
    std::vector<double> features;
    BitVector data_bits;
};

/// Endless, seed-determined stream of simulated (features, bits) pairs.
class TrainingStream {
public:
    TrainingStream(ScenarioConfig scenario, std::uint64_t seed) : scenario_(std::move(scenario)), rng_(seed) {
        scenario_.validate();
    }

    /// Writes the features of the next frame to `features` (feature_dim
    /// entries) and returns its data bits.
    template <class T>
    BitVector next_into(T* features) {
        const std::size_t n = scenario_.frame.n_subcarriers;
        BitVector bits = random_bits(2 * n, rng_);
        const TxFrame frame = build_frame(bits, scenario_.frame, rng_);
        const ChannelRealization h = sample_channel(scenario_.channel, rng_);
        double snr = scenario_.train_snr_db;
        if (scenario_.train_snr_range) {
            std::uniform_real_distribution<double> pick(scenario_.train_snr_range->first, scenario_.train_snr_range->second);
            snr = pick(rng_);
        }
        const RxBlocks rx = transmit_frame(frame, h, snr, scenario_.frame, rng_);
        featurize_into<T>(rx.pilot, rx.data, features);
        return bits;
    }

    TrainingSample next() {
        TrainingSample s;
        s.features.resize(scenario_.feature_dim());
        s.data_bits = next_into(s.features.data());
        return s;
    }

    const ScenarioConfig& scenario() const { return scenario_; }

private:
    ScenarioConfig scenario_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Receiver

struct DnnReceiver {
    std::size_t n_subcarriers = 64;
    std::vector<nn::Mlp<float>> models;  // model g predicts group_bits(., g)

    void validate() const {
        const std::size_t groups = 2 * n_subcarriers / kBitsPerGroup;
        if (models.size() != groups) throw InvalidInput("DnnReceiver: wrong number of sub-models");
        for (const auto& m : models)
            if (m.input_dim() != 4 * n_subcarriers || m.output_dim() != kBitsPerGroup)
                throw InvalidInput("DnnReceiver: sub-model shape does not match the frame");
    }
};

/// Output >= 0.5 decides bit 1.
template <class T>
BitVector threshold_outputs(std::span<const T> outputs) {
    BitVector bits(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i) bits[i] = outputs[i] >= T(0.5) ? 1 : 0;
    return bits;
}

/// Detects every column of a feature batch (feature_dim x B). Returns
/// B bit vectors in column order.
inline std::vector<BitVector> detect_bits_batch(const DnnReceiver& rx, const nn::Matrix<float>& features) {
    const auto batch = static_cast<std::size_t>(features.cols());
    const std::size_t total_bits = 2 * rx.n_subcarriers;
    std::vector<BitVector> out(batch, BitVector(total_bits));
    for (std::size_t g = 0; g < rx.models.size(); ++g) {
        const auto cache = nn::forward(rx.models[g], features);
        const auto& pred = cache.prediction();
        for (std::size_t c = 0; c < batch; ++c)
            for (std::size_t b = 0; b < kBitsPerGroup; ++b)
                out[c][g * kBitsPerGroup + b] = pred(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)) >= 0.5f ? 1 : 0;
    }
    return out;
}

inline BitVector detect_bits(const DnnReceiver& rx, std::span<const Complex> y_pilot, std::span<const Complex> y_data) {
    if (y_pilot.size() != rx.n_subcarriers || y_data.size() != rx.n_subcarriers)
        throw InvalidInput("detect_bits: block length does not match the receiver");
    nn::Matrix<float> f(static_cast<Eigen::Index>(4 * rx.n_subcarriers), 1);
    featurize_into<float>(y_pilot, y_data, f.data());
    return detect_bits_batch(rx, f).front();
}

struct SubModelReport {
    double initial_loss = 0.0;  // first batch, before any update
    double final_loss = 0.0;    // mean over the last min(100, n_steps) batches
    std::uint64_t init_seed = 0;
    std::uint64_t stream_seed = 0;
};

struct TrainedReceiver {
    DnnReceiver receiver;
    std::vector<SubModelReport> reports;
};

struct TrainProgress {
    std::size_t group;
    std::size_t step;
    double recent_loss;
};

/// Progress callback; may be invoked concurrently from worker threads.
using ProgressFn = std::function<void(const TrainProgress&)>;

inline std::uint64_t sub_model_init_seed(std::uint64_t seed, std::size_t group) { return derive_seed(seed, {1, group}); }
inline std::uint64_t sub_model_stream_seed(std::uint64_t seed, std::size_t group) { return derive_seed(seed, {2, group}); }

/// Trains one sub-model on its 16-bit slice of a private training stream.
inline std::pair<nn::Mlp<float>, SubModelReport> train_sub_model(const ScenarioConfig& scenario,
                                                                  const nn::TrainConfig& cfg, std::uint64_t seed,
                                                                  std::size_t group, const ProgressFn& progress = {}) {
    cfg.validate();
    SubModelReport report;
    report.init_seed = sub_model_init_seed(seed, group);
    report.stream_seed = sub_model_stream_seed(seed, group);

    const std::size_t n = scenario.frame.n_subcarriers;
    std::vector<std::size_t> dims = {4 * n, 500, 250, 120, kBitsPerGroup};
    Rng init_rng(report.init_seed);
    const auto specs = nn::chain(dims);
    nn::Mlp<float> net = nn::init_params<float>(specs, init_rng);
    nn::AdamState<float> adam(net);
    TrainingStream stream(scenario, report.stream_seed);

    const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
    nn::Matrix<float> x(static_cast<Eigen::Index>(4 * n), batch);
    nn::Matrix<float> t(static_cast<Eigen::Index>(kBitsPerGroup), batch);

    const std::size_t tail = std::min<std::size_t>(100, cfg.n_steps);
    double tail_sum = 0.0;
    double recent = 0.0;
    for (std::size_t step = 0; step < cfg.n_steps; ++step) {
        for (Eigen::Index c = 0; c < batch; ++c) {
            const BitVector bits = stream.next_into(x.col(c).data());
            const auto slice = group_bits(bits, group);
            for (std::size_t b = 0; b < kBitsPerGroup; ++b) t(static_cast<Eigen::Index>(b), c) = slice[b];
        }
        const auto cache = nn::forward(net, x);
        const double loss = nn::loss_l2(cache.prediction(), t);
        if (!std::isfinite(loss))
            throw NumericError("training diverged: sub-model " + std::to_string(group) + " loss is not finite at step " +
                               std::to_string(step));
        if (step == 0) report.initial_loss = loss;
        if (step + tail >= cfg.n_steps) tail_sum += loss;
        recent = step == 0 ? loss : 0.99 * recent + 0.01 * loss;
        const auto grads = nn::backward(net, cache, t);
        nn::adam_step(net, grads, adam, cfg);
        if (progress && (step + 1) % 1000 == 0) progress({group, step + 1, recent});
    }
    report.final_loss = tail_sum / static_cast<double>(tail);
    return {std::move(net), report};
}

/// Trains all sub-models, `jobs` at a time. Each sub-model's result depends
/// only on (scenario, cfg, seed, group), never on `jobs`.
inline TrainedReceiver train_receiver(const ScenarioConfig& scenario, const nn::TrainConfig& cfg, std::uint64_t seed,
                                      std::size_t jobs = 1, const ProgressFn& progress = {}) {
    scenario.validate();
    cfg.validate();
    const std::size_t groups = scenario.n_groups();
    TrainedReceiver out;
    out.receiver.n_subcarriers = scenario.frame.n_subcarriers;
    out.receiver.models.resize(groups);
    out.reports.resize(groups);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t g = next++; g < groups; g = next++) {
            try {
                auto [net, report] = train_sub_model(scenario, cfg, seed, g, progress);
                out.receiver.models[g] = std::move(net);
                out.reports[g] = report;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, groups);
    std::vector<std::thread> threads;
    for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
    worker();
    for (auto& th : threads) th.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

// ---------------------------------------------------------------------------
// Scenario and bundle serialization

namespace detail {

// JSON has no infinity; the noiseless sentinel is written as "inf".
inline nlohmann::json snr_to_json(double snr_db) {
    if (std::isinf(snr_db)) return snr_db > 0 ? "inf" : "-inf";
    return snr_db;
}

inline double snr_from_json(const nlohmann::json& v) {
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf" || s == "+inf") return kNoiselessSnr;
        if (s == "-inf") return -kNoiselessSnr;
        throw InvalidInput("bad SNR value: " + s);
    }
    return v.get<double>();
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const ScenarioConfig& s) {
    nlohmann::json j{{"name", s.name},
                     {"n_subcarriers", s.frame.n_subcarriers},
                     {"cp_len", s.frame.cp_len},
                     {"n_pilots", s.frame.n_pilots()},
                     {"pilot_indices", s.frame.pilot_indices},
                     {"n_paths", s.channel.n_paths},
                     {"max_delay", s.channel.max_delay},
                     {"decay_const", s.channel.decay_const},
                     {"train_snr_db", detail::snr_to_json(s.train_snr_db)}};
    if (!s.channel.fading) j["fading"] = false;
    j["clip_ratio"] = s.frame.clip ? nlohmann::json(s.frame.clip->clip_ratio) : nlohmann::json(nullptr);
    if (s.frame.clip) j["clip_sigma_ref"] = s.frame.clip->sigma_ref;
    if (s.train_snr_range) j["train_snr_range"] = {s.train_snr_range->first, s.train_snr_range->second};
    return j;
}

/// Parses the scenario keys of a config document. Missing keys keep their
/// defaults; `pilot_indices` defaults to an evenly spaced comb of `n_pilots`.
inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
    ScenarioConfig s;
    try {
        s.name = j.value("name", s.name);
        s.frame.n_subcarriers = j.value("n_subcarriers", s.frame.n_subcarriers);
        s.frame.cp_len = j.value("cp_len", s.frame.cp_len);
        const std::size_t n_pilots = j.value("n_pilots", s.frame.n_subcarriers);
        if (j.contains("pilot_indices") && !j["pilot_indices"].is_null()) {
            s.frame.pilot_indices = j["pilot_indices"].get<std::vector<std::size_t>>();
            if (s.frame.pilot_indices.size() != n_pilots)
                throw InvalidInput("pilot_indices has " + std::to_string(s.frame.pilot_indices.size()) +
                                   " entries but n_pilots is " + std::to_string(n_pilots));
        } else {
            s.frame.pilot_indices = FrameConfig::comb_pilots(s.frame.n_subcarriers, n_pilots);
        }
        if (j.contains("clip_ratio") && !j["clip_ratio"].is_null()) {
            ClipConfig clip;
            clip.clip_ratio = j["clip_ratio"].get<double>();
            clip.sigma_ref = j.value("clip_sigma_ref", 1.0);
            s.frame.clip = clip;
        }
        s.channel.n_paths = j.value("n_paths", s.channel.n_paths);
        s.channel.max_delay = j.value("max_delay", s.channel.max_delay);
        s.channel.decay_const = j.value("decay_const", s.channel.decay_const);
        s.channel.fading = j.value("fading", s.channel.fading);
        if (j.contains("train_snr_db")) s.train_snr_db = detail::snr_from_json(j["train_snr_db"]);
        if (j.contains("train_snr_range") && !j["train_snr_range"].is_null()) {
            const auto r = j["train_snr_range"].get<std::vector<double>>();
            if (r.size() != 2) throw InvalidInput("train_snr_range must be [lo, hi]");
            s.train_snr_range = std::make_pair(r[0], r[1]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("scenario config: ") + e.what());
    }
    s.validate();
    return s;
}

/// Short stable hash of everything that affects simulated frames.
inline std::string scenario_fingerprint(const ScenarioConfig& s) {
    nlohmann::json j = scenario_to_json(s);
    j.erase("name");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
    return buf;
}

inline std::string scenario_id(const ScenarioConfig& s) { return s.name + "-" + scenario_fingerprint(s); }

inline constexpr int kBundleFormatVersion = 1;

inline std::filesystem::path sub_model_path(const std::filesystem::path& dir, std::size_t g) {
    return dir / ("model_" + std::to_string(g) + ".json");
}

inline void save_bundle(const std::filesystem::path& dir, const TrainedReceiver& trained, const ScenarioConfig& scenario,
                        const nn::TrainConfig& cfg, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kBundleFormatVersion;
    manifest["scenario"] = scenario_to_json(scenario);
    manifest["scenario_id"] = scenario_id(scenario);
    manifest["train_config"] = nn::train_config_to_json(cfg);
    manifest["seed"] = seed;
    manifest["sub_models"] = nlohmann::json::array();
    for (std::size_t g = 0; g < trained.receiver.models.size(); ++g) {
        const auto& r = trained.reports[g];
        nn::save_weights(sub_model_path(dir, g), trained.receiver.models[g], cfg, r.init_seed);
        manifest["sub_models"].push_back({{"file", sub_model_path(dir, g).filename().string()},
                                          {"group", g},
                                          {"init_seed", r.init_seed},
                                          {"stream_seed", r.stream_seed},
                                          {"initial_loss", r.initial_loss},
                                          {"final_loss", r.final_loss}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write bundle manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

struct LoadedBundle {
    TrainedReceiver trained;
    ScenarioConfig scenario;
    nn::TrainConfig train_config;
    std::uint64_t seed = 0;
};

inline LoadedBundle load_bundle(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ResourceError("receiver bundle not found: " + dir.string());
    LoadedBundle b;
    try {
        const auto manifest = nlohmann::json::parse(in);
        if (manifest.value("format_version", 0) != kBundleFormatVersion)
            throw ResourceError("unsupported bundle format in " + dir.string());
        b.scenario = scenario_from_json(manifest.at("scenario"));
        b.train_config = nn::train_config_from_json(manifest.at("train_config"));
        b.seed = manifest.at("seed").get<std::uint64_t>();
        b.trained.receiver.n_subcarriers = b.scenario.frame.n_subcarriers;
        for (const auto& sm : manifest.at("sub_models")) {
            b.trained.receiver.models.push_back(nn::load_weights<float>(dir / sm.at("file").get<std::string>()).net);
            SubModelReport r;
            r.init_seed = sm.at("init_seed").get<std::uint64_t>();
            r.stream_seed = sm.at("stream_seed").get<std::uint64_t>();
            r.initial_loss = sm.at("initial_loss").get<double>();
            r.final_loss = sm.at("final_loss").get<double>();
            b.trained.reports.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ResourceError("corrupt bundle manifest in " + dir.string() + ": " + e.what());
    }
    b.trained.receiver.validate();
    return b;
}

}  // namespace dlofdm
