// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: correlation statistics, receiver training, BER
// evaluation, sweeps, mismatch grid, reports and self-test.
//
// Exit codes: 0 success, 2 invalid config/arguments, 3 missing resource,
// 4 numeric failure, 1 anything else.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dlofdm/estimators.hpp"
#include "dlofdm/experiments.hpp"
#include "dlofdm/receiver.hpp"
#include "dlofdm/selftest.hpp"

namespace fs = std::filesystem;
using namespace dlofdm;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitResource = 3;
constexpr int kExitNumeric = 4;

struct Paths {
    fs::path out;
    fs::path stats() const { return out / "stats.json"; }
    fs::path receiver() const { return out / "receiver"; }
    fs::path results() const { return out / "results.csv"; }
    fs::path robustness() const { return out / "robustness.csv"; }
    fs::path report() const { return out / "report"; }
};

std::optional<CorrelationStats> maybe_stats(const Paths& p) {
    if (!fs::exists(p.stats())) return std::nullopt;
    return load_stats(p.stats());
}

std::optional<DnnReceiver> maybe_receiver(const Paths& p) {
    if (!fs::exists(p.receiver() / "manifest.json")) return std::nullopt;
    return load_bundle(p.receiver()).trained.receiver;
}

DetectorResources resources_for(const std::vector<Detector>& detectors, const std::optional<CorrelationStats>& stats,
                                const std::optional<DnnReceiver>& rx) {
    DetectorResources res;
    for (Detector d : detectors) {
        if (d == Detector::mmse) {
            if (!stats) throw ResourceError("mmse needs correlation statistics; run `stats` first");
            res.stats = &*stats;
        }
        if (d == Detector::dnn) {
            if (!rx) throw ResourceError("dnn needs a trained receiver; run `train` first");
            res.receiver = &*rx;
        }
    }
    return res;
}

int cmd_stats(const ExperimentConfig& cfg, const Paths& paths) {
    fs::create_directories(paths.out);
    Rng rng(stats_seed(cfg.seed));
    const auto stats = estimate_correlation_stats(cfg.scenario.channel, PilotPattern::from_frame(cfg.scenario.frame),
                                                  cfg.scenario.frame.n_subcarriers, cfg.stats_draws, rng);
    save_stats(stats, paths.stats());
    std::cout << "wrote " << paths.stats().string() << " (" << stats.n_draws << " draws, " << stats.pilot_indices.size()
              << " pilots)\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Paths& paths, std::size_t jobs) {
    std::mutex io;
    const auto start = std::chrono::steady_clock::now();
    auto progress = [&](const TrainProgress& p) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::lock_guard lock(io);
        std::fprintf(stderr, "[%7.1fs] model %zu step %zu loss %.5f\n", secs, p.group, p.step, p.recent_loss);
    };
    const auto trained = train_receiver(cfg.scenario, cfg.train, cfg.seed, jobs, progress);
    save_bundle(paths.receiver(), trained, cfg.scenario, cfg.train, cfg.seed);
    for (std::size_t g = 0; g < trained.reports.size(); ++g)
        std::printf("model %zu: loss %.5f -> %.5f\n", g, trained.reports[g].initial_loss, trained.reports[g].final_loss);
    std::cout << "wrote " << paths.receiver().string() << '\n';
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const Paths& paths, const std::vector<Detector>& detectors, double snr,
             std::size_t jobs) {
    const auto stats = maybe_stats(paths);
    const auto rx = maybe_receiver(paths);
    const auto res = resources_for(detectors, stats, rx);
    EvalOptions opts = cfg.eval;
    opts.jobs = jobs;
    std::cout << kCsvHeader << '\n';
    for (Detector d : detectors) std::cout << to_csv_row(evaluate_ber(d, cfg.scenario, snr, cfg.seed, res, opts)) << '\n';
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const Paths& paths, const std::vector<Detector>& detectors, std::size_t jobs) {
    const auto stats = maybe_stats(paths);
    const auto rx = maybe_receiver(paths);
    SweepSpec spec;
    spec.scenario = cfg.scenario;
    spec.snr_grid = cfg.snr_grid;
    spec.detectors = detectors;
    spec.eval = cfg.eval;
    spec.eval.jobs = jobs;
    spec.seed = cfg.seed;
    const auto points = run_sweep(spec, resources_for(detectors, stats, rx), paths.results(), [](const BerPoint& p) {
        std::cerr << to_csv_row(p) << '\n';
    });
    std::cout << render_summary(points);
    return 0;
}

int cmd_robustness(const ExperimentConfig& cfg, const Paths& paths, std::size_t jobs) {
    const auto bundle = load_bundle(paths.receiver());
    EvalOptions opts = cfg.eval;
    opts.jobs = jobs;
    const auto existing = read_results(paths.robustness());
    std::vector<BerPoint> points;
    for (const auto& var : cfg.variations) {
        if (var.max_delay > cfg.scenario.frame.cp_len)
            std::cerr << "note: variation max_delay " << var.max_delay << " exceeds cp_len " << cfg.scenario.frame.cp_len
                      << " (inter-symbol interference at test time)\n";
        for (double snr : cfg.snr_grid) {
            const std::string id = variation_id(cfg.scenario, var);
            auto hit = std::find_if(existing.begin(), existing.end(),
                                    [&](const BerPoint& p) { return same_point(p, id, "dnn", snr, cfg.seed); });
            if (hit != existing.end()) {
                points.push_back(*hit);
                continue;
            }
            const auto cells = run_robustness_grid(cfg.scenario, {var}, bundle.trained.receiver, {snr}, cfg.seed, opts);
            append_result(paths.robustness(), cells.front().point);
            std::cerr << to_csv_row(cells.front().point) << '\n';
            points.push_back(cells.front().point);
        }
    }
    std::cout << render_summary(points);
    return 0;
}

int cmd_report(const Paths& paths, const std::vector<std::string>& detectors) {
    std::vector<BerPoint> points = read_results(paths.results());
    const auto robust = read_results(paths.robustness());
    points.insert(points.end(), robust.begin(), robust.end());
    if (points.empty()) throw ResourceError("no results found in " + paths.out.string());
    for (const auto& f : emit_report(points, paths.report(), detectors)) std::cout << "wrote " << f.string() << '\n';
    return 0;
}

int cmd_selftest() {
    bool ok = true;
    for (const auto& r : run_selftest()) {
        std::printf("[%s] %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.passed ? "" : ": ",
                    r.passed ? "" : r.detail.c_str());
        ok = ok && r.passed;
    }
    return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OFDM link-level simulator with LS, LMMSE and neural receivers"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::string detectors_csv = "ls,mmse,dnn";
    std::size_t jobs = 1;
    double snr = 20.0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "scenario configuration (JSON)");
        if (needs_config) opt->required();
        sub->add_option("--out", out_dir, "output directory")->capture_default_str();
        sub->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    };

    auto* stats = app.add_subcommand("stats", "estimate channel correlation statistics for LMMSE");
    add_common(stats, true);
    auto* train = app.add_subcommand("train", "train a neural receiver bundle");
    add_common(train, true);
    auto* eval = app.add_subcommand("eval", "evaluate one BER point per detector");
    add_common(eval, true);
    eval->add_option("--detectors", detectors_csv, "comma-separated: ls,mmse,dnn,perfect_csi")->capture_default_str();
    eval->add_option("--snr", snr, "SNR in dB")->capture_default_str();
    auto* sweep = app.add_subcommand("sweep", "detectors x SNR grid, appended to results.csv");
    add_common(sweep, true);
    sweep->add_option("--detectors", detectors_csv, "comma-separated: ls,mmse,dnn,perfect_csi")->capture_default_str();
    auto* robust = app.add_subcommand("robustness", "evaluate the trained receiver on mismatched channels");
    add_common(robust, true);
    auto* report = app.add_subcommand("report", "render BER charts and a summary table");
    add_common(report, false);
    std::string report_detectors;
    report->add_option("--detectors", report_detectors, "restrict charts to these detectors");
    auto* selftest = app.add_subcommand("selftest", "run the invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        const Paths paths{out_dir};
        if (selftest->parsed()) return cmd_selftest();
        if (report->parsed()) {
            std::vector<std::string> names;
            if (!report_detectors.empty())
                for (Detector d : parse_detector_list(report_detectors)) names.push_back(to_string(d));
            return cmd_report(paths, names);
        }
        const ExperimentConfig cfg = load_experiment_config(config_path);
        if (stats->parsed()) return cmd_stats(cfg, paths);
        if (train->parsed()) return cmd_train(cfg, paths, jobs);
        if (eval->parsed()) return cmd_eval(cfg, paths, parse_detector_list(detectors_csv), snr, jobs);
        if (sweep->parsed()) return cmd_sweep(cfg, paths, parse_detector_list(detectors_csv), jobs);
        if (robust->parsed()) return cmd_robustness(cfg, paths, jobs);
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const ResourceError& e) {
        std::cerr << "missing resource: " << e.what() << '\n';
        return kExitResource;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
