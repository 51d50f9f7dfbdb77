// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dlofdm/neuralnet.hpp"

using namespace dlofdm;
using namespace dlofdm::nn;
namespace fs = std::filesystem;

namespace {

template <class S>
Matrix<S> uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(u(rng));
    return m;
}

template <class S>
Matrix<S> random_targets(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng() & 1);
    return m;
}

Mlp<double> single_unit(double w, double b, Activation act) {
    Mlp<double> net;
    Layer<double> l;
    l.weights = Matrix<double>::Constant(1, 1, w);
    l.bias = Vector<double>::Constant(1, b);
    l.activation = act;
    net.layers.push_back(l);
    return net;
}

double eval1(const Mlp<double>& net, double x) { return forward(net, Matrix<double>(Matrix<double>::Constant(1, 1, x))).prediction()(0, 0); }

}  // namespace

TEST(Init, DefaultShapesAndZeroBiases) {
    Rng rng(1);
    const auto net = init_params<double>(default_architecture(), rng);
    ASSERT_EQ(net.layers.size(), 4u);
    const std::pair<int, int> shapes[] = {{500, 256}, {250, 500}, {120, 250}, {16, 120}};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(net.layers[i].weights.rows(), shapes[i].first);
        EXPECT_EQ(net.layers[i].weights.cols(), shapes[i].second);
        EXPECT_TRUE(net.layers[i].bias.isZero(0.0));
        EXPECT_EQ(net.layers[i].activation, i < 3 ? Activation::relu : Activation::sigmoid);
    }
    EXPECT_EQ(net.dims(), (std::vector<std::size_t>{256, 500, 250, 120, 16}));
    EXPECT_EQ(net.parameter_count(), 256u * 500 + 500 + 500 * 250 + 250 + 250 * 120 + 120 + 120 * 16 + 16);
}

TEST(Init, GlorotVariance) {
    Rng rng(2);
    const auto net = init_params<double>(default_architecture(), rng);
    for (const auto& l : net.layers) {
        const double n = double(l.weights.size());
        const double mean = l.weights.sum() / n;
        const double var = (l.weights.array() - mean).square().sum() / n;
        const double expect = 2.0 / double(l.weights.rows() + l.weights.cols());
        EXPECT_NEAR(var, expect, 0.1 * expect);
    }
}

TEST(Init, RejectsBrokenChains) {
    Rng rng(3);
    std::vector<LayerSpec> specs = {{4, 3, Activation::relu}, {2, 1, Activation::sigmoid}};
    EXPECT_THROW(init_params<double>(specs, rng), InvalidInput);
    const std::size_t one[] = {4};
    EXPECT_THROW(chain(one), InvalidInput);
}

TEST(Forward, ZeroParametersGiveHalf) {
    Rng rng(4);
    auto net = init_params<double>(default_architecture(), rng);
    for (auto& l : net.layers) l.weights.setZero();
    const auto out = forward(net, uniform_matrix<double>(256, 3, rng)).prediction();
    EXPECT_TRUE(out.isApprox(Matrix<double>::Constant(16, 3, 0.5)));
}

TEST(Forward, ActivationDefinitions) {
    const auto relu = single_unit(1, 0, Activation::relu);
    EXPECT_EQ(eval1(relu, -3), 0.0);
    EXPECT_EQ(eval1(relu, 2), 2.0);
    const auto sig = single_unit(1, 0, Activation::sigmoid);
    EXPECT_DOUBLE_EQ(eval1(sig, 0), 0.5);
    EXPECT_NEAR(eval1(sig, 40), 1.0, 1e-12);
    EXPECT_NEAR(eval1(sig, -2), 1.0 / (1.0 + std::exp(2.0)), 1e-15);
    EXPECT_EQ(eval1(single_unit(-2, 1, Activation::none), 3), -5.0);
}

TEST(Forward, DefaultNetOutputsInUnitInterval) {
    Rng rng(5);
    const auto net = init_params<float>(default_architecture(), rng);
    const auto out = forward(net, uniform_matrix<float>(256, 64, rng, -3, 3)).prediction();
    EXPECT_GT(out.minCoeff(), 0.0f);
    EXPECT_LT(out.maxCoeff(), 1.0f);
    const Vector<float> one = predict(net, Vector<float>(Vector<float>::Constant(256, 0.25f)));
    EXPECT_EQ(one.size(), 16);
}

TEST(Loss, HandValues) {
    Eigen::Vector2d a(1, 0), z(0, 0);
    EXPECT_EQ(loss_l2(a, a), 0.0);
    EXPECT_DOUBLE_EQ(loss_l2(a, z), 0.5);
    Rng rng(6);
    const auto p = uniform_matrix<double>(7, 5, rng), t = uniform_matrix<double>(7, 5, rng);
    EXPECT_DOUBLE_EQ(loss_l2(p, t), loss_l2(t, p));
    EXPECT_THROW(loss_l2(p, Matrix<double>(5, 7)), InvalidInput);
}

TEST(Backward, ZeroAtTarget) {
    Rng rng(7);
    const std::size_t dims[] = {6, 5, 3};
    const auto net = init_params<double>(chain(dims), rng);
    const auto x = uniform_matrix<double>(6, 4, rng);
    const auto cache = forward(net, x);
    const auto g = backward(net, cache, cache.prediction());
    for (const auto& l : g.layers) {
        EXPECT_TRUE(l.weights.isZero(0.0));
        EXPECT_TRUE(l.bias.isZero(0.0));
    }
}

TEST(Backward, LinearUnitHandDerivative) {
    const auto net = single_unit(1, 0, Activation::none);
    const Matrix<double> x = Matrix<double>::Constant(1, 1, 2.0);
    const Matrix<double> t = Matrix<double>::Zero(1, 1);
    const auto g = backward(net, forward(net, x), t);
    EXPECT_DOUBLE_EQ(g.layers[0].weights(0, 0), 8.0);
    EXPECT_DOUBLE_EQ(g.layers[0].bias(0), 4.0);
}

TEST(GradientCheck, FullDefaultNetwork) {
    Rng rng(8);
    const auto net = init_params<double>(default_architecture(), rng);
    const auto x = uniform_matrix<double>(256, 4, rng);
    const auto t = random_targets<double>(16, 4, rng);
    const auto r = gradient_check(net, x, t, 200, rng);
    EXPECT_GE(r.coordinates_checked, 200u);
    EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(GradientCheck, HoldsAfterTraining) {
    Rng rng(9);
    auto net = init_params<float>(default_architecture(), rng);
    const auto xf = uniform_matrix<float>(256, 16, rng);
    const auto tf = random_targets<float>(16, 16, rng);
    AdamState<float> st(net);
    for (int i = 0; i < 30; ++i) adam_step(net, backward(net, forward(net, xf), tf), st, TrainConfig{});
    const auto r = gradient_check(net.cast<double>(), Matrix<double>(xf.cast<double>().leftCols(4)),
                                  Matrix<double>(tf.cast<double>().leftCols(4)), 400, rng);
    EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(GradientCheck, DetectsCorruptedGradient) {
    Rng rng(10);
    const std::size_t dims[] = {6, 5, 3};
    const auto net = init_params<double>(chain(dims), rng);
    const auto x = uniform_matrix<double>(6, 4, rng);
    const auto t = random_targets<double>(3, 4, rng);
    auto grads = backward(net, forward(net, x), t);
    EXPECT_LT(gradient_check(net, x, t, 100, rng, 1e-5, &grads).max_relative_error, 1e-5);
    Eigen::Index r, c;
    grads.layers[1].weights.cwiseAbs().maxCoeff(&r, &c);
    grads.layers[1].weights(r, c) *= 2.0;
    EXPECT_GT(gradient_check(net, x, t, 100, rng, 1e-5, &grads).max_relative_error, 1e-2);
}

TEST(GradientCheck, ZeroInputStaysFinite) {
    Rng rng(11);
    const auto net = init_params<double>(default_architecture(), rng);
    const Matrix<double> x = Matrix<double>::Zero(256, 2);
    const auto t = random_targets<double>(16, 2, rng);
    const auto r = gradient_check(net, x, t, 50, rng);
    EXPECT_TRUE(std::isfinite(r.max_relative_error));
    EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(Adam, FirstStepIsSignOfGradient) {
    Rng rng(12);
    const std::size_t dims[] = {3, 2};
    auto net = init_params<double>(chain(dims, Activation::none), rng);
    const auto before = net;
    auto g = net.zeros_like();
    g.layers[0].weights << 0.3, -0.02, 5.0, -1.0, 1e-3, 2.0;
    g.layers[0].bias << -2.0, 0.7;
    AdamState<double> st(net);
    TrainConfig cfg;
    adam_step(net, g, st, cfg);
    EXPECT_EQ(st.t, 1u);
    for (Eigen::Index i = 0; i < g.layers[0].weights.size(); ++i) {
        const double gi = g.layers[0].weights.data()[i];
        const double d = net.layers[0].weights.data()[i] - before.layers[0].weights.data()[i];
        EXPECT_NEAR(d, -cfg.learning_rate * gi / (std::abs(gi) + cfg.epsilon), 1e-6 * cfg.learning_rate);
    }
    for (Eigen::Index i = 0; i < 2; ++i) {
        const double gi = g.layers[0].bias(i);
        EXPECT_NEAR(net.layers[0].bias(i) - before.layers[0].bias(i), -cfg.learning_rate * (gi > 0 ? 1 : -1),
                    1e-6 * cfg.learning_rate);
    }
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Rng rng(13);
    const std::size_t dims[] = {4, 3, 2};
    auto net = init_params<double>(chain(dims), rng);
    const auto before = net;
    AdamState<double> st(net);
    for (int i = 0; i < 3; ++i) adam_step(net, net.zeros_like(), st, TrainConfig{});
    EXPECT_EQ(st.t, 3u);
    EXPECT_TRUE(net == before);
}

TEST(Adam, MinimizesScalarQuadratic) {
    // One linear unit with input 1 and no bias use: theta = w, loss (w - 3)^2.
    auto net = single_unit(0, 0, Activation::none);
    AdamState<double> st(net);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    for (int i = 0; i < 500; ++i) {
        auto g = net.zeros_like();
        g.layers[0].weights(0, 0) = 2.0 * (net.layers[0].weights(0, 0) - 3.0);
        adam_step(net, g, st, cfg);
    }
    EXPECT_NEAR(net.layers[0].weights(0, 0), 3.0, 0.05);
}

TEST(Training, MemorizesSmallDataset) {
    Rng rng(14);
    auto net = init_params<float>(default_architecture(), rng);
    const auto x = uniform_matrix<float>(256, 64, rng);
    const auto t = random_targets<float>(16, 64, rng);
    AdamState<float> st(net);
    TrainConfig cfg;
    double loss = 1.0;
    for (int step = 0; step < 5000 && loss >= 1e-3; ++step) {
        const auto cache = forward(net, x);
        loss = loss_l2(cache.prediction(), t);
        adam_step(net, backward(net, cache, t), st, cfg);
    }
    EXPECT_LT(loss, 1e-3);
}

TEST(Training, BitDeterministic) {
    auto run = [] {
        Rng rng(15);
        const std::size_t dims[] = {8, 16, 4};
        auto net = init_params<float>(chain(dims), rng);
        const auto x = uniform_matrix<float>(8, 32, rng);
        const auto t = random_targets<float>(4, 32, rng);
        AdamState<float> st(net);
        for (int i = 0; i < 50; ++i) adam_step(net, backward(net, forward(net, x), t), st, TrainConfig{});
        return net;
    };
    EXPECT_TRUE(run() == run());
}

TEST(WeightFile, RoundTripIsBitExact) {
    Rng rng(16);
    const auto net = init_params<float>(default_architecture(), rng);
    TrainConfig cfg;
    cfg.n_steps = 123;
    cfg.learning_rate = 3e-4;
    const fs::path dir = fs::temp_directory_path() / "dlofdm_weights_test";
    fs::create_directories(dir);
    save_weights(dir / "w.json", net, cfg, 42);
    const auto back = load_weights<float>(dir / "w.json");
    EXPECT_TRUE(back.net == net);
    EXPECT_EQ(back.seed, 42u);
    EXPECT_EQ(back.train_config.n_steps, 123u);
    EXPECT_EQ(back.train_config.learning_rate, 3e-4);

    const auto j = weights_to_json(net, cfg, 42);
    EXPECT_EQ(j.at("layer_dims").get<std::vector<std::size_t>>(), (std::vector<std::size_t>{256, 500, 250, 120, 16}));
    EXPECT_EQ(j.at("activations")[3].get<std::string>(), "sigmoid");

    EXPECT_THROW(load_weights<float>(dir / "missing.json"), ResourceError);
    std::ofstream(dir / "bad.json") << "[1, 2";
    EXPECT_THROW(load_weights<float>(dir / "bad.json"), ResourceError);
    fs::remove_all(dir);
}

TEST(WeightFile, RejectsWrongVersionAndShape) {
    Rng rng(17);
    const std::size_t dims[] = {3, 2};
    auto j = weights_to_json(init_params<double>(chain(dims), rng), TrainConfig{}, 1);
    auto bad_version = j;
    bad_version["format_version"] = 99;
    EXPECT_THROW(weights_from_json<double>(bad_version), InvalidInput);
    auto bad_shape = j;
    bad_shape["weights"][0].erase(0);
    EXPECT_ANY_THROW(weights_from_json<double>(bad_shape));
}
