#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vaf/error.hpp"
#include "vaf/io.hpp"
#include "vaf/parallel.hpp"
#include "vaf/rng.hpp"

namespace vaf::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { identity, relu, tanh };

inline const char* activation_name(Activation a) {
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ArgumentError("unknown activation '" + s + "'");
}

struct DenseLayer {
    Matrix weight; // out x in
    Vector bias;   // out
    Activation activation = Activation::identity;

    int in() const { return static_cast<int>(weight.cols()); }
    int out() const { return static_cast<int>(weight.rows()); }
};

/// Fully connected network; rows of an input batch are samples.
class DenseNet {
public:
    DenseNet() = default;

    /// dims = {in, h1, ..., out}; one activation per layer. Weights are
    /// Glorot-uniform from `seed`, biases zero.
    DenseNet(const std::vector<int>& dims, const std::vector<Activation>& activations, std::uint64_t seed) {
        if (dims.size() < 2 || activations.size() != dims.size() - 1)
            throw ArgumentError("DenseNet needs one activation per layer");
        Rng rng(derive_seed(seed, 0x4e4e));
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            if (dims[l] < 1 || dims[l + 1] < 1) throw ArgumentError("layer dimensions must be positive");
            DenseLayer layer;
            const double limit = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
            layer.weight.resize(dims[l + 1], dims[l]);
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
            layer.bias = Vector::Zero(dims[l + 1]);
            layer.activation = activations[l];
            layers_.push_back(std::move(layer));
        }
    }

    explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

    void validate() const {
        if (layers_.empty()) throw ArgumentError("DenseNet has no layers");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            if (layer.bias.size() != layer.weight.rows()) throw ArgumentError("bias size does not match layer output");
            if (l > 0 && layer.in() != layers_[l - 1].out()) throw ArgumentError("layer dimensions do not chain");
            if (!layer.weight.allFinite() || !layer.bias.allFinite()) throw NumericError("non-finite network parameters");
        }
    }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    /// Mutable access invalidates outstanding tapes.
    std::vector<DenseLayer>& mutable_layers() {
        ++version_;
        return layers_;
    }

    int input_dim() const { return layers_.empty() ? 0 : layers_.front().in(); }
    int output_dim() const { return layers_.empty() ? 0 : layers_.back().out(); }
    std::uint64_t version() const { return version_; }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Flat parameter vector: per layer, weights row-major then bias.
    Vector parameters() const {
        Vector p(parameter_count());
        Eigen::Index k = 0;
        for (const auto& l : layers_) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) p(k++) = l.weight(r, c);
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) p(k++) = l.bias(r);
        }
        return p;
    }

    void set_parameters(const Vector& p) {
        if (p.size() != parameter_count()) throw ArgumentError("parameter vector has the wrong size");
        ++version_;
        Eigen::Index k = 0;
        for (auto& l : layers_) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p(k++);
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = p(k++);
        }
    }

private:
    std::vector<DenseLayer> layers_;
    std::uint64_t version_ = 0;
};

inline Matrix activate(const Matrix& z, Activation a) {
    switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::tanh: return z.array().tanh().matrix();
    }
    return z;
}

/// Activations cached by forward() for backward().
struct Tape {
    const DenseNet* net = nullptr;
    std::uint64_t version = 0;
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> outputs; // activated output of each layer
};

struct Gradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;
    Matrix input;

    /// Same layout as DenseNet::parameters().
    Vector flat() const {
        Eigen::Index n = 0;
        for (std::size_t l = 0; l < weight.size(); ++l) n += weight[l].size() + bias[l].size();
        Vector g(n);
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < weight.size(); ++l) {
            for (Eigen::Index r = 0; r < weight[l].rows(); ++r)
                for (Eigen::Index c = 0; c < weight[l].cols(); ++c) g(k++) = weight[l](r, c);
            for (Eigen::Index r = 0; r < bias[l].size(); ++r) g(k++) = bias[l](r);
        }
        return g;
    }
};

inline Matrix forward_layer(const DenseLayer& layer, const Matrix& x) {
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    return activate(z, layer.activation);
}

inline std::pair<Matrix, Tape> forward(const DenseNet& net, const Matrix& x) {
    if (net.layers().empty()) throw ArgumentError("forward through an empty network");
    if (x.cols() != net.input_dim())
        throw ArgumentError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                            std::to_string(net.input_dim()));
    Tape tape;
    tape.net = &net;
    tape.version = net.version();
    Matrix a = x;
    for (const auto& layer : net.layers()) {
        tape.inputs.push_back(a);
        a = forward_layer(layer, a);
        tape.outputs.push_back(a);
    }
    return {a, std::move(tape)};
}

/// Forward pass without a tape.
inline Matrix predict(const DenseNet& net, const Matrix& x) {
    if (x.cols() != net.input_dim()) throw ArgumentError("input dimension does not match the network");
    Matrix a = x;
    for (const auto& layer : net.layers()) a = forward_layer(layer, a);
    return a;
}

/// Exact reverse-mode gradients of sum(output_gradient .* output).
inline Gradients backward(const DenseNet& net, const Tape& tape, const Matrix& output_gradient) {
    if (tape.net != &net || tape.version != net.version()) throw ContractError("tape does not belong to the current network state");
    const auto& layers = net.layers();
    if (output_gradient.rows() != tape.outputs.back().rows() || output_gradient.cols() != tape.outputs.back().cols())
        throw ArgumentError("output gradient shape does not match the forward output");
    Gradients g;
    g.weight.resize(layers.size());
    g.bias.resize(layers.size());
    Matrix delta = output_gradient;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& layer = layers[l];
        const Matrix& out = tape.outputs[l];
        switch (layer.activation) {
        case Activation::identity: break;
        case Activation::relu: delta = delta.cwiseProduct((out.array() > 0.0).cast<double>().matrix()); break;
        case Activation::tanh: delta = delta.cwiseProduct((1.0 - out.array().square()).matrix()); break;
        }
        g.weight[l] = delta.transpose() * tape.inputs[l];
        g.bias[l] = delta.colwise().sum().transpose();
        delta = delta * layer.weight;
    }
    g.input = delta;
    return g;
}

/// Data-parallel gradient accumulation over fixed row chunks. The chunking is
/// independent of `threads` and partial sums are added in chunk order, so the
/// result is identical for every thread count.
inline Gradients accumulate_gradients(const DenseNet& net, const Matrix& x, const Matrix& output_gradient,
                                      int chunk_rows = 16, int threads = 1) {
    if (x.rows() != output_gradient.rows()) throw ArgumentError("batch sizes differ");
    const Eigen::Index n = x.rows();
    const std::size_t chunks = static_cast<std::size_t>((n + chunk_rows - 1) / chunk_rows);
    std::vector<Gradients> partial(chunks);
    parallel_for(chunks, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const Eigen::Index r0 = static_cast<Eigen::Index>(c) * chunk_rows;
            const Eigen::Index rows = std::min<Eigen::Index>(chunk_rows, n - r0);
            const auto [out, tape] = forward(net, x.middleRows(r0, rows));
            partial[c] = backward(net, tape, output_gradient.middleRows(r0, rows));
        }
    });
    Gradients total = partial.front();
    total.input.resize(n, x.cols());
    total.input.topRows(partial.front().input.rows()) = partial.front().input;
    for (std::size_t c = 1; c < chunks; ++c) {
        for (std::size_t l = 0; l < total.weight.size(); ++l) {
            total.weight[l] += partial[c].weight[l];
            total.bias[l] += partial[c].bias[l];
        }
        total.input.middleRows(static_cast<Eigen::Index>(c) * chunk_rows, partial[c].input.rows()) = partial[c].input;
    }
    return total;
}

/// Mean squared error over all entries and its gradient w.r.t. the prediction.
inline std::pair<double, Matrix> mse_loss(const Matrix& prediction, const Matrix& target) {
    if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
        throw ArgumentError("prediction and target shapes differ");
    const Matrix diff = prediction - target;
    const double n = static_cast<double>(diff.size());
    return {diff.squaredNorm() / n, 2.0 * diff / n};
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// SGD or bias-corrected Adam (no weight decay) over a flat parameter vector.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

    const OptimizerConfig& config() const { return config_; }
    long steps() const { return t_; }
    const Vector& first_moment() const { return m_; }
    const Vector& second_moment() const { return v_; }

    void step(Vector& params, const Vector& grads) {
        if (params.size() != grads.size()) throw ArgumentError("parameter and gradient sizes differ");
        if (!grads.allFinite()) throw NumericError("non-finite gradient");
        if (t_ == 0) {
            m_ = Vector::Zero(params.size());
            v_ = Vector::Zero(params.size());
        } else if (m_.size() != params.size()) {
            throw ArgumentError("optimizer state does not match the parameter count");
        }
        ++t_;
        if (config_.kind == OptimizerKind::sgd) {
            params -= config_.learning_rate * grads;
            return;
        }
        m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grads;
        v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grads.cwiseAbs2();
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
    }

    void step(DenseNet& net, const Gradients& g) {
        Vector p = net.parameters();
        step(p, g.flat());
        net.set_parameters(p);
    }

private:
    OptimizerConfig config_;
    Vector m_;
    Vector v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "VAFN", u32 version, u32 net count, per net {u32 name length,
// name, u32 layer count, per layer {u32 in, u32 out, u32 activation, float64
// weights row-major, float64 bias}}, u64 metadata length, metadata JSON.

struct Checkpoint {
    std::vector<std::pair<std::string, DenseNet>> nets;
    nlohmann::json metadata = nlohmann::json::object();

    const DenseNet& net(const std::string& name) const {
        for (const auto& [n, net] : nets)
            if (n == name) return net;
        throw ArgumentError("checkpoint has no network named '" + name + "'");
    }
};

namespace detail {

inline void put_f64(io::Bytes& b, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    io::detail::put_u64(b, bits);
}

inline double get_f64(io::detail::Reader& r) {
    const std::uint64_t bits = r.u64("float64");
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

} // namespace detail

inline io::Bytes encode_checkpoint(const Checkpoint& ck) {
    io::Bytes b;
    b.insert(b.end(), {'V', 'A', 'F', 'N'});
    io::detail::put_u32(b, 1);
    io::detail::put_u32(b, static_cast<std::uint32_t>(ck.nets.size()));
    for (const auto& [name, net] : ck.nets) {
        io::detail::put_u32(b, static_cast<std::uint32_t>(name.size()));
        b.insert(b.end(), name.begin(), name.end());
        io::detail::put_u32(b, static_cast<std::uint32_t>(net.layers().size()));
        for (const auto& l : net.layers()) {
            io::detail::put_u32(b, static_cast<std::uint32_t>(l.in()));
            io::detail::put_u32(b, static_cast<std::uint32_t>(l.out()));
            io::detail::put_u32(b, static_cast<std::uint32_t>(l.activation));
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(b, l.weight(r, c));
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_f64(b, l.bias(r));
        }
    }
    const std::string meta = ck.metadata.dump();
    io::detail::put_u64(b, meta.size());
    b.insert(b.end(), meta.begin(), meta.end());
    return b;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    io::detail::Reader r(bytes);
    r.expect_tag("VAFN", "checkpoint magic");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != 1) throw ParseError("unsupported checkpoint version", version_at);
    Checkpoint ck;
    const std::uint32_t count = r.u32("network count");
    for (std::uint32_t n = 0; n < count; ++n) {
        const std::uint32_t len = r.u32("name length");
        r.need(len, "network name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.offset()), len);
        r.skip(len, "network name");
        const std::uint32_t layer_count = r.u32("layer count");
        std::vector<DenseLayer> layers;
        for (std::uint32_t l = 0; l < layer_count; ++l) {
            const std::size_t layer_at = r.offset();
            const std::uint32_t in = r.u32("layer input size");
            const std::uint32_t out = r.u32("layer output size");
            const std::uint32_t act = r.u32("activation");
            if (act > 2 || in == 0 || out == 0) throw ParseError("invalid layer header", layer_at);
            if ((static_cast<std::uint64_t>(in) + 1) * out > r.remaining() / 8)
                throw ParseError("checkpoint truncated inside layer weights", bytes.size());
            DenseLayer layer;
            layer.activation = static_cast<Activation>(act);
            layer.weight.resize(out, in);
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = detail::get_f64(r);
            layer.bias.resize(out);
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = detail::get_f64(r);
            layers.push_back(std::move(layer));
        }
        ck.nets.emplace_back(std::move(name), DenseNet(std::move(layers)));
    }
    const std::uint64_t meta_len = r.u64("metadata length");
    r.need(meta_len, "metadata");
    const std::size_t meta_at = r.offset();
    try {
        ck.metadata = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(meta_at),
                                            bytes.begin() + static_cast<std::ptrdiff_t>(meta_at + meta_len));
    } catch (const nlohmann::json::parse_error&) {
        throw ParseError("checkpoint metadata is not valid JSON", meta_at);
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    io::write_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_bytes(path)); }

} // namespace vaf::nn
