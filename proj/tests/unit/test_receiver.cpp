// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "dlofdm/experiments.hpp"
#include "dlofdm/receiver.hpp"

using namespace dlofdm;
namespace fs = std::filesystem;

namespace {

// Noiseless flat fading with full pilots: a pure inversion task.
ScenarioConfig degenerate(std::size_t n) {
    ScenarioConfig sc;
    sc.name = "degenerate";
    sc.frame = FrameConfig::standard(n, 0, n);
    sc.channel = ChannelConfig{1, 0, 4.0};
    sc.train_snr_db = kNoiselessSnr;
    return sc;
}

nn::TrainConfig short_training(std::size_t steps, std::size_t batch) {
    nn::TrainConfig cfg;
    cfg.n_steps = steps;
    cfg.batch_size = batch;
    return cfg;
}

}  // namespace

TEST(Features, LayoutIsPilotThenDataRealThenImag) {
    const std::vector<Complex> yp(64, Complex(1, 2)), yd(64, Complex(0, 0));
    const auto f = featurize(yp, yd);
    ASSERT_EQ(f.size(), 256u);
    for (std::size_t i = 0; i < 64; ++i) {
        EXPECT_EQ(f[i], 1.0);
        EXPECT_EQ(f[64 + i], 2.0);
        EXPECT_EQ(f[128 + i], 0.0);
        EXPECT_EQ(f[192 + i], 0.0);
    }
}

TEST(Features, Reconstructible) {
    Rng rng(1);
    std::normal_distribution<double> g;
    std::vector<Complex> yp(64), yd(64);
    for (auto& v : yp) v = {g(rng), g(rng)};
    for (auto& v : yd) v = {g(rng), g(rng)};
    const auto f = featurize(yp, yd);
    for (std::size_t k = 0; k < 64; ++k) {
        EXPECT_EQ(Complex(f[k], f[64 + k]), yp[k]);
        EXPECT_EQ(Complex(f[128 + k], f[192 + k]), yd[k]);
    }
    EXPECT_THROW(featurize(yp, std::vector<Complex>(3)), InvalidInput);
}

TEST(TrainingStream, SameSeedSameItems) {
    ScenarioConfig sc;
    sc.frame = FrameConfig::standard(64, 0, 8);
    sc.frame.clip = ClipConfig{1.0, 1.0};
    TrainingStream a(sc, 3), b(sc, 3), c(sc, 4);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto sa = a.next(), sb = b.next(), sc2 = c.next();
        ASSERT_EQ(sa.features, sb.features);
        ASSERT_EQ(sa.data_bits, sb.data_bits);
        differs = differs || sa.features != sc2.features;
    }
    EXPECT_TRUE(differs);
}

TEST(TrainingStream, LabelsAreBalanced) {
    ScenarioConfig sc;
    TrainingStream s(sc, 5);
    std::vector<double> ones(128, 0.0);
    const int items = 100'000;
    std::vector<float> f(sc.feature_dim());
    for (int i = 0; i < items; ++i) {
        const auto bits = s.next_into(f.data());
        for (std::size_t b = 0; b < 128; ++b) ones[b] += bits[b];
    }
    for (std::size_t b = 0; b < 128; ++b) EXPECT_NEAR(ones[b] / items, 0.5, 0.01) << "bit " << b;
}

TEST(TrainingStream, NoiselessFlatDataQuarterDecodesToLabels) {
    // A single path at delay 0 is one complex gain; divide it out using the
    // pilot quarter.
    ScenarioConfig sc = degenerate(64);
    sc.frame.cp_len = 16;
    TrainingStream s(sc, 6);
    const auto pilots = pilot_sequence(64);
    for (int i = 0; i < 200; ++i) {
        const auto item = s.next();
        const Complex gain = Complex(item.features[0], item.features[64]) / pilots[0];
        std::vector<Complex> data(64);
        for (std::size_t k = 0; k < 64; ++k) data[k] = Complex(item.features[128 + k], item.features[192 + k]) / gain;
        ASSERT_EQ(qpsk_demodulate_hard(data), item.data_bits);
    }
}

TEST(TrainingStream, GroupTargetsFollowTheirSubcarriers) {
    // Bits of group g live on data subcarriers [8g, 8g + 8): swapping data
    // symbols on other subcarriers leaves group g's slice untouched.
    ScenarioConfig sc = degenerate(64);
    sc.frame.cp_len = 16;
    TrainingStream s(sc, 7);
    const auto item = s.next();
    for (std::size_t g = 0; g < sc.n_groups(); ++g) {
        auto symbols = qpsk_modulate(item.data_bits);
        const std::size_t other = (g + 3) % sc.n_groups();
        std::rotate(symbols.begin() + 8 * other, symbols.begin() + 8 * other + 3, symbols.begin() + 8 * other + 8);
        const auto permuted = qpsk_demodulate_hard(symbols);
        const auto a = group_bits(item.data_bits, g), b = group_bits(permuted, g);
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
        const auto sa = qpsk_modulate(a);
        for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(sa[k], qpsk_modulate(item.data_bits)[8 * g + k]);
    }
}

TEST(Detection, ThresholdRule) {
    std::vector<float> outputs(16);
    for (std::size_t i = 0; i < 16; ++i) outputs[i] = i % 2 ? 0.51f : 0.49f;
    const auto bits = threshold_outputs<float>(outputs);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(bits[i], i % 2);
    const std::vector<double> tie = {0.5};
    EXPECT_EQ(threshold_outputs<double>(tie)[0], 1);
}

TEST(Detection, BatchMatchesSingleAndHasFullLength) {
    ScenarioConfig sc;
    Rng rng(8);
    DnnReceiver rx;
    const std::size_t dims[] = {256, 500, 250, 120, 16};
    for (int g = 0; g < 8; ++g) rx.models.push_back(nn::init_params<float>(nn::chain(dims), rng));
    TrainingStream s(sc, 9);
    nn::Matrix<float> batch(256, 5);
    std::vector<std::pair<FreqBlock, FreqBlock>> blocks;
    for (int c = 0; c < 5; ++c) {
        const auto item = s.next();
        FreqBlock yp(64), yd(64);
        for (std::size_t k = 0; k < 64; ++k) {
            yp[k] = {item.features[k], item.features[64 + k]};
            yd[k] = {item.features[128 + k], item.features[192 + k]};
        }
        featurize_into<float>(yp, yd, batch.col(c).data());
        blocks.emplace_back(yp, yd);
    }
    const auto all = detect_bits_batch(rx, batch);
    for (int c = 0; c < 5; ++c) {
        const auto one = detect_bits(rx, blocks[c].first, blocks[c].second);
        EXPECT_EQ(one.size(), 128u);
        EXPECT_EQ(one, all[c]);
        EXPECT_EQ(detect_bits(rx, blocks[c].first, blocks[c].second), one);
    }
    EXPECT_THROW(detect_bits(rx, std::vector<Complex>(8), std::vector<Complex>(8)), InvalidInput);
}

TEST(Training, LossDecreasesForEverySubModel) {
    ScenarioConfig sc;
    const auto trained = train_receiver(sc, short_training(150, 64), 11, 2);
    ASSERT_EQ(trained.reports.size(), 8u);
    for (const auto& r : trained.reports) EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(Training, IndependentOfJobCount) {
    const auto sc = degenerate(16);
    const auto a = train_receiver(sc, short_training(20, 16), 12, 1);
    const auto b = train_receiver(sc, short_training(20, 16), 12, 3);
    ASSERT_EQ(a.receiver.models.size(), 2u);
    for (std::size_t g = 0; g < 2; ++g) {
        EXPECT_TRUE(a.receiver.models[g] == b.receiver.models[g]);
        EXPECT_EQ(a.reports[g].final_loss, b.reports[g].final_loss);
    }
    EXPECT_FALSE(a.receiver.models[0] == a.receiver.models[1]);
}

TEST(Training, DivergenceIsReported) {
    ScenarioConfig sc = degenerate(16);
    sc.frame.clip = ClipConfig{1.0, 1.0};
    nn::TrainConfig cfg = short_training(5, 8);
    cfg.learning_rate = std::numeric_limits<double>::infinity();
    EXPECT_THROW(train_receiver(sc, cfg, 1), NumericError);
}

TEST(Training, DegenerateScenarioIsSolved) {
    const auto sc = degenerate(8);
    const auto trained = train_receiver(sc, short_training(2000, 64), 5);
    DetectorResources res;
    res.receiver = &trained.receiver;
    EvalOptions opts;
    opts.min_bits = 10'000 * sc.data_bits_per_frame();
    const auto p = evaluate_ber(Detector::dnn, sc, kNoiselessSnr, 99, res, opts);
    EXPECT_LT(p.ber(), 1e-3);

    // Held-out frames decode exactly for the overwhelming majority.
    std::size_t exact = 0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        BitVector sent;
        const auto obs = simulate_frame(sc, kNoiselessSnr, 123, i, sent);
        exact += detect_bits(trained.receiver, obs.rx.pilot, obs.rx.data) == sent;
    }
    EXPECT_GE(exact, 990u);
}

TEST(Bundle, RoundTrip) {
    const auto sc = degenerate(16);
    const auto cfg = short_training(3, 4);
    const auto trained = train_receiver(sc, cfg, 21);
    const fs::path dir = fs::temp_directory_path() / "dlofdm_bundle_test";
    fs::remove_all(dir);
    save_bundle(dir, trained, sc, cfg, 21);
    const auto back = load_bundle(dir);
    EXPECT_EQ(back.seed, 21u);
    EXPECT_EQ(back.train_config.n_steps, 3u);
    EXPECT_EQ(scenario_id(back.scenario), scenario_id(sc));
    ASSERT_EQ(back.trained.receiver.models.size(), trained.receiver.models.size());
    for (std::size_t g = 0; g < trained.receiver.models.size(); ++g) {
        EXPECT_TRUE(back.trained.receiver.models[g] == trained.receiver.models[g]);
        EXPECT_EQ(back.trained.reports[g].final_loss, trained.reports[g].final_loss);
        EXPECT_EQ(back.trained.reports[g].stream_seed, sub_model_stream_seed(21, g));
    }
    fs::remove(sub_model_path(dir, 1));
    EXPECT_THROW(load_bundle(dir), ResourceError);
    fs::remove_all(dir);
    EXPECT_THROW(load_bundle(dir), ResourceError);
}

TEST(Scenario, JsonRoundTripAndFingerprint) {
    ScenarioConfig sc;
    sc.name = "combined";
    sc.frame = FrameConfig::standard(64, 0, 8);
    sc.frame.clip = ClipConfig{1.0, 1.0};
    sc.train_snr_range = std::make_pair(5.0, 25.0);
    const auto back = scenario_from_json(scenario_to_json(sc));
    EXPECT_EQ(back.frame.pilot_indices, sc.frame.pilot_indices);
    EXPECT_EQ(back.frame.cp_len, 0u);
    ASSERT_TRUE(back.frame.clip.has_value());
    EXPECT_EQ(back.frame.clip->clip_ratio, 1.0);
    EXPECT_EQ(back.train_snr_range, sc.train_snr_range);
    EXPECT_EQ(scenario_id(back), scenario_id(sc));

    ScenarioConfig other = sc;
    other.channel.max_delay = 12;
    EXPECT_NE(scenario_fingerprint(other), scenario_fingerprint(sc));
    other = sc;
    other.name = "renamed";
    EXPECT_EQ(scenario_fingerprint(other), scenario_fingerprint(sc));
}

TEST(Scenario, Validation) {
    ScenarioConfig sc;
    sc.channel.max_delay = 64;
    EXPECT_THROW(sc.validate(), InvalidInput);
    sc = ScenarioConfig{};
    sc.frame = FrameConfig::standard(4, 0, 4);
    sc.channel.max_delay = 2;
    EXPECT_THROW(sc.validate(), InvalidInput);  // 8 data bits is not a whole group
    sc = ScenarioConfig{};
    sc.train_snr_range = std::make_pair(20.0, 10.0);
    EXPECT_THROW(sc.validate(), InvalidInput);
}
