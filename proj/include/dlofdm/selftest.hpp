// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fast invariant checks runnable from the command line (`selftest`).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dlofdm/channel.hpp"
#include "dlofdm/estimators.hpp"
#include "dlofdm/neuralnet.hpp"
#include "dlofdm/receiver.hpp"
#include "dlofdm/signal.hpp"

namespace dlofdm {

struct SelfTestResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline SelfTestResult run_check(const std::string& name, const std::function<std::string()>& body) {
    try {
        const std::string failure = body();
        return {name, failure.empty(), failure.empty() ? "ok" : failure};
    } catch (const std::exception& e) {
        return {name, false, std::string("exception: ") + e.what()};
    }
}

inline std::vector<Complex> random_signal(std::size_t n, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Complex> x(n);
    for (auto& v : x) v = {g(rng), g(rng)};
    return x;
}

}  // namespace detail

inline std::vector<SelfTestResult> run_selftest(std::uint64_t seed = 7) {
    std::vector<SelfTestResult> out;

    out.push_back(detail::run_check("qpsk roundtrip", [&]() -> std::string {
        for (unsigned v = 0; v < 16; ++v) {
            BitVector b = {Bit(v & 1), Bit((v >> 1) & 1), Bit((v >> 2) & 1), Bit((v >> 3) & 1)};
            if (qpsk_demodulate_hard(qpsk_modulate(b)) != b) return "mismatch for pattern " + std::to_string(v);
        }
        return {};
    }));

    out.push_back(detail::run_check("dft unitarity and parseval", [&]() -> std::string {
        Rng rng(seed);
        for (std::size_t n : {4u, 64u, 12u}) {
            const auto x = detail::random_signal(n, rng);
            const auto spec = dft(x, n);
            const auto back = idft(spec);
            double e_t = 0, e_f = 0, err = 0;
            for (std::size_t i = 0; i < n; ++i) {
                e_t += std::norm(x[i]);
                e_f += std::norm(spec[i]);
                err = std::max(err, std::abs(back[i] - x[i]));
            }
            if (err > 1e-10 || std::abs(e_t - e_f) > 1e-10 * e_t) return "violated for N=" + std::to_string(n);
        }
        return {};
    }));

    out.push_back(detail::run_check("cp turns linear into circular convolution", [&]() -> std::string {
        Rng rng(seed + 1);
        ChannelConfig cfg;
        for (int trial = 0; trial < 50; ++trial) {
            const auto x = detail::random_signal(64, rng);
            const auto h = sample_channel(cfg, rng);
            const auto y = linear_convolve(add_cp(x, 16), h);
            const auto circ = circular_convolve(x, h);
            for (std::size_t i = 0; i < 64; ++i)
                if (std::abs(y[16 + i] - circ[i]) > 1e-10) return "mismatch at trial " + std::to_string(trial);
        }
        return {};
    }));

    out.push_back(detail::run_check("channel energy normalization", [&]() -> std::string {
        Rng rng(seed + 2);
        ChannelConfig cfg;
        double sum = 0;
        const int draws = 20'000;
        for (int i = 0; i < draws; ++i) sum += sample_channel(cfg, rng).energy();
        const double mean = sum / draws;
        if (std::abs(mean - 1.0) > 0.03) return "mean tap energy " + std::to_string(mean);
        return {};
    }));

    out.push_back(detail::run_check("noiseless frame obeys Y = X H", [&]() -> std::string {
        Rng rng(seed + 3);
        ScenarioConfig sc;
        const auto bits = random_bits(128, rng);
        const auto frame = build_frame(bits, sc.frame, rng);
        const auto h = sample_channel(sc.channel, rng);
        const auto rx = transmit_frame(frame, h, kNoiselessSnr, sc.frame, rng);
        const auto hk = frequency_response(h, 64);
        for (std::size_t k = 0; k < 64; ++k)
            if (std::abs(rx.data[k] - frame.data_block[k] * hk[k]) > 1e-9) return "tone " + std::to_string(k);
        return {};
    }));

    out.push_back(detail::run_check("backprop matches finite differences", [&]() -> std::string {
        Rng rng(seed + 4);
        const std::size_t dims[] = {12, 9, 7, 4};
        const auto specs = nn::chain(dims);
        const auto net = nn::init_params<double>(specs, rng);
        nn::Matrix<double> x(12, 3), t(4, 3);
        std::uniform_real_distribution<double> u(-1, 1);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng) > 0 ? 1.0 : 0.0;
        const auto r = nn::gradient_check(net, x, t, 200, rng);
        if (!(r.max_relative_error < 1e-5)) return "max relative error " + std::to_string(r.max_relative_error);
        return {};
    }));

    out.push_back(detail::run_check("adam first step is -lr*sign(g)", [&]() -> std::string {
        Rng rng(seed + 5);
        const std::size_t dims[] = {3, 2};
        auto net = nn::init_params<double>(nn::chain(dims, nn::Activation::none), rng);
        const auto before = net;
        auto g = net.zeros_like();
        g.layers[0].weights.setConstant(0.3);
        g.layers[0].bias.setConstant(-2.0);
        nn::AdamState<double> st(net);
        nn::TrainConfig cfg;
        nn::adam_step(net, g, st, cfg);
        const double dw = net.layers[0].weights(0, 0) - before.layers[0].weights(0, 0);
        const double db = net.layers[0].bias(0) - before.layers[0].bias(0);
        if (std::abs(dw + cfg.learning_rate) > 1e-6 * cfg.learning_rate ||
            std::abs(db - cfg.learning_rate) > 1e-6 * cfg.learning_rate)
            return "unexpected first step";
        return {};
    }));

    out.push_back(detail::run_check("frame generation is deterministic", [&]() -> std::string {
        ScenarioConfig sc;
        sc.frame = FrameConfig::standard(64, 16, 8);
        TrainingStream a(sc, 99), b(sc, 99);
        for (int i = 0; i < 20; ++i) {
            const auto sa = a.next();
            const auto sb = b.next();
            if (sa.features != sb.features || sa.data_bits != sb.data_bits) return "streams diverged";
        }
        return {};
    }));

    return out;
}

}  // namespace dlofdm
