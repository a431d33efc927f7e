#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace sseat {

struct Layer {
    Tensor weight; // fan_in x fan_out
    Tensor bias;   // fan_out

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Feedforward relu classifier. The last layer emits raw logits.
class Classifier {
public:
    Classifier() = default;

    /// Glorot-uniform weights, zero biases.
    Classifier(std::vector<std::size_t> widths, std::uint64_t seed) : widths_(std::move(widths)) {
        validate_widths();
        Rng rng(seed);
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            const std::size_t in = widths_[l], out = widths_[l + 1];
            const double s = std::sqrt(6.0 / static_cast<double>(in + out));
            Tensor w(Shape{in, out});
            for (double& v : w.data()) v = rng.uniform(-s, s);
            layers_.push_back(Layer{std::move(w), Tensor(Shape{out}, 0.0)});
        }
    }

    static Classifier zeros(std::vector<std::size_t> widths) {
        Classifier m;
        m.widths_ = std::move(widths);
        m.validate_widths();
        for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l)
            m.layers_.push_back(
                Layer{Tensor(Shape{m.widths_[l], m.widths_[l + 1]}, 0.0), Tensor(Shape{m.widths_[l + 1]}, 0.0)});
        return m;
    }

    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t num_classes() const { return widths_.back(); }
    std::size_t num_layers() const noexcept { return layers_.size(); }
    const std::vector<Layer>& layers() const noexcept { return layers_; }

    /// Mutable parameter access; rejected on frozen snapshots.
    std::vector<Layer>& mutable_layers() {
        if (frozen()) throw ShapeError("classifier: snapshot " + std::to_string(*snapshot_tag_) + " is frozen");
        return layers_;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.weight.numel() + l.bias.numel();
        return n;
    }

    bool frozen() const noexcept { return snapshot_tag_.has_value(); }
    std::optional<int> snapshot_tag() const noexcept { return snapshot_tag_; }

    /// Frozen copy tagged with the stage that produced it.
    Classifier snapshot(int stage) const {
        Classifier c = *this;
        c.snapshot_tag_ = stage;
        return c;
    }

    /// Mutable copy with the tag removed, used to continue training from a snapshot.
    Classifier thawed() const {
        Classifier c = *this;
        c.snapshot_tag_.reset();
        return c;
    }

    Tensor logits(const Tensor& x) const {
        check_input(x);
        Tensor h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = kernel::add_bias(kernel::matmul(h, layers_[l].weight), layers_[l].bias);
            if (l + 1 < layers_.size()) h = kernel::relu(h);
        }
        return h;
    }

    /// softmax(logits / tau), row-wise.
    Tensor predict_scaled(const Tensor& x, double tau) const {
        if (!(tau > 0.0)) throw ShapeError("predict_scaled: temperature must be positive");
        return kernel::softmax(kernel::scale(logits(x), 1.0 / tau));
    }

    std::vector<std::size_t> predict(const Tensor& x) const {
        const Tensor z = logits(x);
        std::vector<std::size_t> out(z.dim(0));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernel::argmax(z.row(i));
        return out;
    }

    /// FNV-1a over the raw parameter bytes in layer order.
    std::uint64_t parameter_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto feed = [&](const Tensor& t) {
            for (double v : t.data()) {
                std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
                for (int b = 0; b < 8; ++b) {
                    h ^= (bits >> (8 * b)) & 0xffu;
                    h *= 0x100000001b3ULL;
                }
            }
        };
        for (const auto& l : layers_) {
            feed(l.weight);
            feed(l.bias);
        }
        return h;
    }

    void check_input(const Tensor& x) const {
        if (x.rank() != 2 || x.dim(1) != input_dim())
            throw ShapeError("classifier: input " + shape_str(x.shape()) + " does not match input width " +
                             std::to_string(input_dim()));
    }

    friend bool operator==(const Classifier& a, const Classifier& b) {
        if (a.widths_ != b.widths_ || a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t l = 0; l < a.layers_.size(); ++l)
            if (!(a.layers_[l].weight == b.layers_[l].weight) || !(a.layers_[l].bias == b.layers_[l].bias))
                return false;
        return true;
    }

private:
    void validate_widths() const {
        if (widths_.size() < 2) throw ConfigError("classifier: need at least input and output widths");
        for (std::size_t w : widths_)
            if (w == 0) throw ConfigError("classifier: layer widths must be positive");
    }

    std::vector<std::size_t> widths_;
    std::vector<Layer> layers_;
    std::optional<int> snapshot_tag_;
};

/// A classifier's parameters recorded on a tape, either as differentiable
/// leaves or as constants.
class BoundClassifier {
public:
    enum class Mode { Trainable, Constant };

    BoundClassifier(Tape& tape, const Classifier& model, Mode mode) : tape_(&tape), model_(&model) {
        for (const auto& l : model.layers()) {
            if (mode == Mode::Trainable) {
                params_.push_back(tape.leaf(l.weight));
                params_.push_back(tape.leaf(l.bias));
            } else {
                params_.push_back(tape.constant(l.weight));
                params_.push_back(tape.constant(l.bias));
            }
        }
    }

    const Classifier& model() const noexcept { return *model_; }
    Tape& tape() const noexcept { return *tape_; }
    /// Weight and bias of each layer, interleaved.
    const std::vector<Var>& params() const noexcept { return params_; }

    Var operator()(Var x) const {
        model_->check_input(x.value());
        Var h = x;
        const std::size_t layers = params_.size() / 2;
        for (std::size_t l = 0; l < layers; ++l) {
            h = add_bias(matmul(h, params_[2 * l]), params_[2 * l + 1]);
            if (l + 1 < layers) h = relu(h);
        }
        return h;
    }

    Var operator()(const Tensor& x) const { return (*this)(tape_->constant(x)); }

    /// Parameter gradients in the order of params().
    std::vector<Tensor> gradients(const Gradients& g) const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (Var p : params_) out.push_back(g.has(p) ? g[p] : Tensor(p.value().shape(), 0.0));
        return out;
    }

private:
    Tape* tape_;
    const Classifier* model_;
    std::vector<Var> params_;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity.
struct OptimizerState {
    std::vector<Tensor> velocity;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    OptimizerState() = default;
    OptimizerState(const Classifier& model, double lr, double mom, double wd)
        : learning_rate(lr), momentum(mom), weight_decay(wd) {
        if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
        if (mom < 0.0 || mom >= 1.0) throw ConfigError("optimizer: momentum must lie in [0, 1)");
        if (wd < 0.0) throw ConfigError("optimizer: weight decay must be non-negative");
        for (const auto& l : model.layers()) {
            velocity.emplace_back(l.weight.shape(), 0.0);
            velocity.emplace_back(l.bias.shape(), 0.0);
        }
    }
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
inline void sgd_step(Classifier& model, std::span<const Tensor> grads, OptimizerState& state) {
    auto& layers = model.mutable_layers();
    const std::size_t n = 2 * layers.size();
    if (grads.size() != n)
        throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(n) +
                         " parameters");
    if (state.velocity.size() != n) throw ShapeError("sgd_step: optimizer state does not match model");
    for (std::size_t i = 0; i < n; ++i) {
        Tensor& param = (i % 2 == 0) ? layers[i / 2].weight : layers[i / 2].bias;
        const Tensor& g = grads[i];
        Tensor& v = state.velocity[i];
        if (g.shape() != param.shape() || v.shape() != param.shape())
            throw ShapeError("sgd_step: gradient " + shape_str(g.shape()) + " for parameter " +
                             shape_str(param.shape()));
        for (std::size_t k = 0; k < param.numel(); ++k) {
            v[k] = state.momentum * v[k] + g[k] + state.weight_decay * param[k];
            param[k] -= state.learning_rate * v[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers shared by the file formats.

namespace binio {

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    os.write(reinterpret_cast<const char*>(b.data()), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
    std::array<unsigned char, sizeof(T)> b;
    const auto offset = static_cast<long long>(is.tellg());
    if (!is.read(reinterpret_cast<char*>(b.data()), sizeof(T)))
        throw IoError(what + ": truncated at byte offset " + std::to_string(offset));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

inline void put_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9], const std::string& what) {
    char buf[8] = {};
    if (!is.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) throw IoError(what + ": bad magic");
}

} // namespace binio

inline constexpr char kCheckpointMagic[9] = "SSEATCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Header (magic, version, layer widths, snapshot tag) then parameters as
/// little-endian doubles: each layer's weight (row-major) then bias.
inline void write_checkpoint(std::ostream& os, const Classifier& model) {
    binio::put_magic(os, kCheckpointMagic);
    binio::put<std::uint32_t>(os, kCheckpointVersion);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.widths().size()));
    for (std::size_t w : model.widths()) binio::put<std::uint64_t>(os, w);
    binio::put<std::int64_t>(os, model.snapshot_tag().value_or(-1));
    for (const auto& l : model.layers()) {
        for (double v : l.weight.data()) binio::put<double>(os, v);
        for (double v : l.bias.data()) binio::put<double>(os, v);
    }
}

inline Classifier read_checkpoint(std::istream& is) {
    const std::string what = "checkpoint";
    binio::expect_magic(is, kCheckpointMagic, what);
    const auto version = binio::get<std::uint32_t>(is, what);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    const auto count = binio::get<std::uint32_t>(is, what);
    if (count < 2 || count > 64) throw IoError("checkpoint: implausible layer count " + std::to_string(count));
    std::vector<std::size_t> widths;
    for (std::uint32_t i = 0; i < count; ++i) widths.push_back(binio::get<std::uint64_t>(is, what));
    const auto tag = binio::get<std::int64_t>(is, what);
    Classifier model = Classifier::zeros(widths);
    for (auto& l : model.mutable_layers()) {
        for (double& v : l.weight.data()) v = binio::get<double>(is, what);
        for (double& v : l.bias.data()) v = binio::get<double>(is, what);
    }
    return tag >= 0 ? model.snapshot(static_cast<int>(tag)) : model;
}

inline void save_checkpoint(const std::string& path, const Classifier& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_checkpoint(os, model);
    if (!os) throw IoError("write failed: " + path);
}

inline Classifier load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    return read_checkpoint(is);
}

} // namespace sseat
