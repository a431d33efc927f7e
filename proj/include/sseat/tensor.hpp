#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace sseat {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. A rank-0 tensor (empty shape) is a scalar.
class Tensor {
public:
    Tensor() : shape_{0} {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " elements");
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool is_scalar() const noexcept { return data_.size() == 1 && shape_.size() <= 1; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const {
        if (data_.size() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not scalar");
        return data_[0];
    }

    std::span<const double> row(std::size_t r) const {
        const std::size_t w = shape_.at(1);
        return std::span<const double>(data_).subspan(r * w, w);
    }
    std::span<double> row(std::size_t r) {
        const std::size_t w = shape_.at(1);
        return std::span<double>(data_).subspan(r * w, w);
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Forward kernels on plain tensors. The tape records these and adds the
/// matching backward rules.
namespace kernel {

inline void require(bool ok, const char* op, const Shape& a, const Shape& b) {
    if (!ok) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_matrix(const char* op, const Tensor& a) {
    if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

/// (m x k) * (k x n) -> (m x n); a rank-1 right operand is treated as a column.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    const bool vec = b.rank() == 1;
    require((vec || b.rank() == 2) && a.dim(1) == b.dim(0), "matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = vec ? 1 : b.dim(1);
    Tensor out(vec ? Shape{m} : Shape{m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_matrix("add_bias", x);
    require(bias.rank() == 1 && bias.dim(0) == x.dim(1), "add_bias", x.shape(), bias.shape());
    Tensor out = x;
    const std::size_t n = x.dim(1);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bias[i % n];
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

/// Row-wise log-softmax with max subtraction. Rank-1 input is a single row.
inline Tensor log_softmax(const Tensor& z) {
    if (z.rank() != 1 && z.rank() != 2)
        throw ShapeError("log_softmax: expected rank 1 or 2, got " + shape_str(z.shape()));
    Tensor out = z;
    const std::size_t n = z.shape().back();
    const std::size_t rows = z.numel() / std::max<std::size_t>(n, 1);
    auto d = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = d.subspan(r * n, n);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (double& v : row) v -= lse;
    }
    return out;
}

inline Tensor softmax(const Tensor& z) {
    Tensor out = log_softmax(z);
    for (double& v : out.data()) v = std::exp(v);
    return out;
}

/// Mean negative log-likelihood of `labels` under row log-probabilities.
inline Tensor nll(const Tensor& logp, std::span<const std::size_t> labels) {
    require_matrix("nll", logp);
    if (labels.size() != logp.dim(0))
        throw ShapeError("nll: " + std::to_string(labels.size()) + " labels for " + shape_str(logp.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= logp.dim(1)) throw ShapeError("nll: label " + std::to_string(labels[i]) + " out of range");
        s -= logp.at(i, labels[i]);
    }
    return Tensor::scalar(s / static_cast<double>(labels.size()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add", a.shape(), b.shape());
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::scalar(s);
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean: empty tensor");
    return Tensor::scalar(sum(a).item() / static_cast<double>(a.numel()));
}

/// Jensen-Shannon divergence between two rows given as log-probabilities,
/// in nats. Zero-probability entries contribute nothing.
inline double js_from_log(std::span<const double> logp, std::span<const double> logq) {
    double s = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) {
        const double p = std::exp(logp[i]);
        const double q = std::exp(logq[i]);
        const double m = 0.5 * (p + q);
        if (m <= 0.0) continue;
        const double logm = std::log(m);
        if (p > 0.0) s += 0.5 * p * (logp[i] - logm);
        if (q > 0.0) s += 0.5 * q * (logq[i] - logm);
    }
    return std::max(s, 0.0);
}

/// Mean row-wise JS divergence between two matrices of log-probabilities.
inline Tensor js_rows(const Tensor& logp, const Tensor& logq) {
    require_matrix("js_rows", logp);
    require(logp.shape() == logq.shape(), "js_rows", logp.shape(), logq.shape());
    double s = 0.0;
    for (std::size_t r = 0; r < logp.dim(0); ++r) s += js_from_log(logp.row(r), logq.row(r));
    return Tensor::scalar(s / static_cast<double>(logp.dim(0)));
}

/// Index of the largest element; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace kernel
} // namespace sseat
