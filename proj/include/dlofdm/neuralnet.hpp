// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fully connected network written out by hand: forward pass, L2 loss,
// backpropagation, Adam, and a central-difference gradient checker.
//
// Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dlofdm/common.hpp"

namespace dlofdm::nn {

enum class Activation { relu, sigmoid, none };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::none: return "none";
    }
    return "none";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "none") return Activation::none;
    throw InvalidInput("unknown activation: " + s);
}

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;
};

/// Chains dims with relu on hidden layers and `output` on the last one.
inline std::vector<LayerSpec> chain(std::span<const std::size_t> dims, Activation output = Activation::sigmoid) {
    if (dims.size() < 2) throw InvalidInput("network needs at least an input and an output size");
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (dims[i] == 0 || dims[i + 1] == 0) throw InvalidInput("layer dimensions must be >= 1");
        specs.push_back({dims[i], dims[i + 1], i + 2 == dims.size() ? output : Activation::relu});
    }
    return specs;
}

/// 256-500-250-120-16, relu hidden layers, sigmoid output.
inline std::vector<LayerSpec> default_architecture() {
    static constexpr std::size_t dims[] = {256, 500, 250, 120, 16};
    return chain(dims);
}

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct Layer {
    Matrix<S> weights;  // out_dim x in_dim
    Vector<S> bias;     // out_dim
    Activation activation = Activation::relu;
};

template <class S>
struct Mlp {
    std::vector<Layer<S>> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weights.cols()); }
    std::size_t output_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weights.rows()); }

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        if (layers.empty()) return d;
        d.push_back(input_dim());
        for (const auto& l : layers) d.push_back(static_cast<std::size_t>(l.weights.rows()));
        return d;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        return n;
    }

    /// Same shape, all zeros.
    Mlp zeros_like() const {
        Mlp z;
        for (const auto& l : layers)
            z.layers.push_back({Matrix<S>::Zero(l.weights.rows(), l.weights.cols()), Vector<S>::Zero(l.bias.size()),
                                l.activation});
        return z;
    }

    template <class T>
    Mlp<T> cast() const {
        Mlp<T> out;
        for (const auto& l : layers)
            out.layers.push_back({l.weights.template cast<T>(), l.bias.template cast<T>(), l.activation});
        return out;
    }

    bool operator==(const Mlp& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& a = layers[i];
            const auto& b = o.layers[i];
            if (a.activation != b.activation || a.weights.rows() != b.weights.rows() ||
                a.weights.cols() != b.weights.cols() || a.weights != b.weights || a.bias != b.bias)
                return false;
        }
        return true;
    }
};

/// Parameter-shaped container for gradients and optimizer moments.
template <class S>
using Gradients = Mlp<S>;

/// Glorot-uniform weights on +-sqrt(6 / (in + out)), zero biases.
template <class S>
Mlp<S> init_params(std::span<const LayerSpec> specs, Rng& rng) {
    Mlp<S> net;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& sp = specs[i];
        if (sp.in_dim == 0 || sp.out_dim == 0) throw InvalidInput("init_params: zero-sized layer");
        if (i > 0 && specs[i - 1].out_dim != sp.in_dim) throw InvalidInput("init_params: layer dims do not chain");
        const double limit = std::sqrt(6.0 / static_cast<double>(sp.in_dim + sp.out_dim));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Layer<S> layer;
        layer.weights.resize(static_cast<Eigen::Index>(sp.out_dim), static_cast<Eigen::Index>(sp.in_dim));
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
            for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) layer.weights(r, c) = static_cast<S>(dist(rng));
        layer.bias = Vector<S>::Zero(static_cast<Eigen::Index>(sp.out_dim));
        layer.activation = sp.activation;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

namespace detail {

template <class S>
void apply_activation(Matrix<S>& a, Activation act) {
    switch (act) {
        case Activation::relu: a = a.cwiseMax(S(0)); break;
        case Activation::sigmoid: a = (S(1) / (S(1) + (-a.array()).exp())).matrix(); break;
        case Activation::none: break;
    }
}

}  // namespace detail

/// Layer outputs of one forward pass; outputs[0] is the input batch.
template <class S>
struct ForwardCache {
    std::vector<Matrix<S>> outputs;
    const Matrix<S>& prediction() const { return outputs.back(); }
};

template <class S>
ForwardCache<S> forward(const Mlp<S>& net, const Matrix<S>& input) {
    if (net.layers.empty()) throw InvalidInput("forward: empty network");
    if (static_cast<std::size_t>(input.rows()) != net.input_dim())
        throw InvalidInput("forward: input dimension does not match first layer");
    ForwardCache<S> cache;
    cache.outputs.reserve(net.layers.size() + 1);
    cache.outputs.push_back(input);
    for (const auto& layer : net.layers) {
        Matrix<S> a(layer.weights.rows(), input.cols());
        a.noalias() = layer.weights * cache.outputs.back();
        a.colwise() += layer.bias;
        detail::apply_activation(a, layer.activation);
        cache.outputs.push_back(std::move(a));
    }
    return cache;
}

template <class S>
Vector<S> predict(const Mlp<S>& net, const Vector<S>& input) {
    return forward(net, Matrix<S>(input)).prediction().col(0);
}

/// Mean squared error over every entry: (1/N) sum_k (pred_k - target_k)^2,
/// averaged over the batch columns.
template <class Derived1, class Derived2>
double loss_l2(const Eigen::MatrixBase<Derived1>& pred, const Eigen::MatrixBase<Derived2>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw InvalidInput("loss_l2: shape mismatch");
    if (pred.size() == 0) return 0.0;
    return (pred.template cast<double>() - target.template cast<double>()).squaredNorm() /
           static_cast<double>(pred.size());
}

/// Gradient of loss_l2 over the whole batch. The relu derivative at 0 is 0.
template <class S>
Gradients<S> backward(const Mlp<S>& net, const ForwardCache<S>& cache, const Matrix<S>& target) {
    const Matrix<S>& pred = cache.prediction();
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw InvalidInput("backward: target shape mismatch");
    Gradients<S> grads;
    grads.layers.resize(net.layers.size());

    Matrix<S> delta = (S(2) / static_cast<S>(pred.size())) * (pred - target);
    for (std::size_t i = net.layers.size(); i-- > 0;) {
        const auto& layer = net.layers[i];
        const Matrix<S>& out = cache.outputs[i + 1];
        switch (layer.activation) {
            case Activation::relu: delta = delta.cwiseProduct((out.array() > S(0)).template cast<S>().matrix()); break;
            case Activation::sigmoid: delta = delta.cwiseProduct((out.array() * (S(1) - out.array())).matrix()); break;
            case Activation::none: break;
        }
        auto& g = grads.layers[i];
        g.activation = layer.activation;
        g.weights.noalias() = delta * cache.outputs[i].transpose();
        g.bias = delta.rowwise().sum();
        if (i > 0) {
            Matrix<S> prev(layer.weights.cols(), delta.cols());
            prev.noalias() = layer.weights.transpose() * delta;
            delta = std::move(prev);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Adam

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 256;
    std::size_t n_steps = 20'000;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw InvalidInput("TrainConfig: learning_rate and epsilon must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
            throw InvalidInput("TrainConfig: beta1 and beta2 must lie in (0,1)");
        if (batch_size == 0 || n_steps == 0) throw InvalidInput("TrainConfig: batch_size and n_steps must be positive");
    }
};

template <class S>
struct AdamState {
    Gradients<S> m;
    Gradients<S> v;
    std::uint64_t t = 0;

    explicit AdamState(const Mlp<S>& net) : m(net.zeros_like()), v(net.zeros_like()) {}
};

/// Bias-corrected Adam update of every parameter; increments t.
template <class S>
void adam_step(Mlp<S>& net, const Gradients<S>& grads, AdamState<S>& state, const TrainConfig& cfg) {
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const S b1 = static_cast<S>(cfg.beta1);
    const S b2 = static_cast<S>(cfg.beta2);
    const S step = static_cast<S>(cfg.learning_rate / (1.0 - std::pow(cfg.beta1, t)));
    const S v_corr = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
    const S eps = static_cast<S>(cfg.epsilon);

    auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        m.array() = b1 * m.array() + (S(1) - b1) * g.array();
        v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
        param.array() -= step * m.array() / ((v.array() * v_corr).sqrt() + eps);
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        update(net.layers[i].weights, grads.layers[i].weights, state.m.layers[i].weights, state.v.layers[i].weights);
        update(net.layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias, state.v.layers[i].bias);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates_checked = 0;
    std::size_t kinks_skipped = 0;  // perturbation crossed a relu boundary
};

namespace detail {

template <class MlpT>
decltype(auto) coordinate(MlpT& net, std::size_t layer, std::size_t index) {
    auto& l = net.layers[layer];
    const auto nw = static_cast<std::size_t>(l.weights.size());
    return index < nw ? l.weights.data()[index] : l.bias.data()[index - nw];
}

template <class S>
std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> relu_masks(const Mlp<S>& net, const ForwardCache<S>& c) {
    std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> masks;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].activation == Activation::relu) masks.push_back(c.outputs[i + 1].array() > S(0));
    return masks;
}

inline bool same_masks(const std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>& a,
                       const std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() || (a[i] != b[i]).any()) return false;
    return true;
}

}  // namespace detail

/// Compares an analytic gradient (backward's, unless `analytic` is given)
/// against central differences on sampled coordinates, stratified evenly
/// over layers. A layer with no more parameters than its share is checked
/// exhaustively. Coordinates whose perturbation flips any relu unit are
/// resampled: the finite difference is meaningless across a kink.
/// Relative error is |a - b| / max(|a|, |b|, 1e-12).
template <class S>
GradientCheckResult gradient_check(const Mlp<S>& net, const Matrix<S>& input, const Matrix<S>& target,
                                   std::size_t n_coordinates, Rng& rng, double step = 1e-5,
                                   const Gradients<S>* analytic = nullptr) {
    const auto base_cache = forward(net, input);
    const Gradients<S> computed = analytic ? Gradients<S>{} : backward(net, base_cache, target);
    const Gradients<S>& grads = analytic ? *analytic : computed;
    const auto base_masks = detail::relu_masks(net, base_cache);

    GradientCheckResult result;
    Mlp<S> probe = net;
    const std::size_t n_layers = net.layers.size();
    const std::size_t per_layer = std::max<std::size_t>(1, n_coordinates / n_layers);
    for (std::size_t li = 0; li < n_layers; ++li) {
        const auto layer_size = static_cast<std::size_t>(net.layers[li].weights.size() + net.layers[li].bias.size());
        std::vector<std::size_t> picks;
        if (layer_size <= per_layer) {
            for (std::size_t i = 0; i < layer_size; ++i) picks.push_back(i);
        }
        std::uniform_int_distribution<std::size_t> pick(0, layer_size - 1);
        std::size_t attempts = 0;
        std::size_t accepted = 0;
        const std::size_t want = picks.empty() ? per_layer : picks.size();
        while (accepted < want && attempts < 50 * want) {
            const std::size_t idx = picks.empty() ? pick(rng) : picks[attempts];
            ++attempts;
            S& p = detail::coordinate(probe, li, idx);
            const S original = p;
            p = original + static_cast<S>(step);
            const auto plus = forward(probe, input);
            p = original - static_cast<S>(step);
            const auto minus = forward(probe, input);
            p = original;
            if (!detail::same_masks(detail::relu_masks(probe, plus), base_masks) ||
                !detail::same_masks(detail::relu_masks(probe, minus), base_masks)) {
                ++result.kinks_skipped;
                if (!picks.empty()) ++accepted;  // exhaustive mode: nothing else to try
                continue;
            }
            const double numeric =
                (loss_l2(plus.prediction(), target) - loss_l2(minus.prediction(), target)) / (2.0 * step);
            const double exact = static_cast<double>(
                detail::coordinate(grads, li, idx));
            const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-12});
            result.max_relative_error = std::max(result.max_relative_error, std::abs(numeric - exact) / denom);
            ++result.coordinates_checked;
            ++accepted;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Weight file

inline constexpr int kWeightFormatVersion = 1;

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},         {"beta2", c.beta2},
            {"epsilon", c.epsilon},             {"batch_size", c.batch_size}, {"n_steps", c.n_steps},
            {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.n_steps = j.at("n_steps").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

/// Row-major weights, one array per layer. Numbers are written as the
/// shortest decimal that round-trips the stored value exactly.
template <class S>
nlohmann::json weights_to_json(const Mlp<S>& net, const TrainConfig& cfg, std::uint64_t seed) {
    nlohmann::json j;
    j["format_version"] = kWeightFormatVersion;
    j["layer_dims"] = net.dims();
    j["activations"] = nlohmann::json::array();
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (const auto& l : net.layers) {
        j["activations"].push_back(to_string(l.activation));
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.weights.size()));
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(static_cast<double>(l.weights(r, c)));
        j["weights"].push_back(std::move(w));
        std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
        j["biases"].push_back(std::move(b));
    }
    j["train_config"] = train_config_to_json(cfg);
    j["seed"] = seed;
    return j;
}

template <class S>
struct WeightFile {
    Mlp<S> net;
    TrainConfig train_config;
    std::uint64_t seed = 0;
};

template <class S>
WeightFile<S> weights_from_json(const nlohmann::json& j) {
    if (j.value("format_version", 0) != kWeightFormatVersion) throw InvalidInput("unsupported weight file version");
    const auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    const auto& acts = j.at("activations");
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (dims.size() < 2 || acts.size() + 1 != dims.size() || ws.size() != acts.size() || bs.size() != acts.size())
        throw InvalidInput("weight file: inconsistent layer counts");
    WeightFile<S> out;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const auto rows = static_cast<Eigen::Index>(dims[i + 1]);
        const auto cols = static_cast<Eigen::Index>(dims[i]);
        const auto w = ws[i].get<std::vector<double>>();
        const auto b = bs[i].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows)
            throw InvalidInput("weight file: array size does not match layer_dims");
        Layer<S> layer;
        layer.weights.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) layer.weights(r, c) = static_cast<S>(w[static_cast<std::size_t>(r * cols + c)]);
        layer.bias.resize(rows);
        for (Eigen::Index r = 0; r < rows; ++r) layer.bias(r) = static_cast<S>(b[static_cast<std::size_t>(r)]);
        layer.activation = activation_from_string(acts[i].get<std::string>());
        out.net.layers.push_back(std::move(layer));
    }
    out.train_config = train_config_from_json(j.at("train_config"));
    out.seed = j.at("seed").get<std::uint64_t>();
    return out;
}

template <class S>
void save_weights(const std::filesystem::path& path, const Mlp<S>& net, const TrainConfig& cfg, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << weights_to_json(net, cfg, seed).dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class S>
WeightFile<S> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ResourceError("weight file not found: " + path.string());
    try {
        return weights_from_json<S>(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ResourceError("corrupt weight file " + path.string() + ": " + e.what());
    }
}

}  // namespace dlofdm::nn
