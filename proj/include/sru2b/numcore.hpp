#pragma once

// Dense 64-bit vector/matrix kernels shared by every other module, plus the
// central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sru2b/error.hpp"

namespace sru2b {

class DenseVector {
public:
    DenseVector() = default;
    explicit DenseVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
    DenseVector(std::initializer_list<double> init) : values_(init) {}
    explicit DenseVector(std::vector<double> values) : values_(std::move(values)) {}

    static DenseVector zeros(std::size_t n) { return DenseVector(n); }

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    auto begin() noexcept { return values_.begin(); }
    auto end() noexcept { return values_.end(); }
    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool operator==(const DenseVector&) const = default;

private:
    std::vector<double> values_;
};

// Row-major.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows_ * cols_) {
            throw ShapeError("matrix payload has " + std::to_string(values_.size()) +
                             " values, expected " + std::to_string(rows_ * cols_));
        }
    }
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        values_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("ragged matrix literal");
            values_.insert(values_.end(), r.begin(), r.end());
        }
    }

    static DenseMatrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols, 0.0}; }
    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Span kernels. Callers guarantee sizes; the checked value-level wrappers
// further below validate shapes.

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// out = W x (+ out when accumulate)
inline void gemv(const DenseMatrix& w, std::span<const double> x, std::span<double> out,
                 bool accumulate = false) {
    const std::size_t n = w.cols();
    const double* p = w.values().data();
    for (std::size_t r = 0; r < w.rows(); ++r, p += n) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += p[c] * x[c];
        out[r] = accumulate ? out[r] + s : s;
    }
}

// out += Wᵀ y
inline void gemv_t_acc(const DenseMatrix& w, std::span<const double> y, std::span<double> out) {
    const std::size_t n = w.cols();
    const double* p = w.values().data();
    for (std::size_t r = 0; r < w.rows(); ++r, p += n) {
        const double yr = y[r];
        if (yr == 0.0) continue;
        for (std::size_t c = 0; c < n; ++c) out[c] += yr * p[c];
    }
}

// G += a bᵀ
inline void outer_acc(DenseMatrix& g, std::span<const double> a, std::span<const double> b) {
    const std::size_t n = g.cols();
    double* p = g.values().data();
    for (std::size_t r = 0; r < g.rows(); ++r, p += n) {
        const double ar = a[r];
        if (ar == 0.0) continue;
        for (std::size_t c = 0; c < n; ++c) p[c] += ar * b[c];
    }
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Value-level operations.

inline DenseVector affine(const DenseMatrix& w, const DenseVector& x, const DenseVector& b) {
    if (w.cols() != x.size() || w.rows() != b.size()) {
        throw ShapeError("affine: W is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         ", x has " + std::to_string(x.size()) + ", b has " + std::to_string(b.size()));
    }
    DenseVector out = b;
    gemv(w, x.values(), out.values(), /*accumulate=*/true);
    return out;
}

inline DenseVector tanh_map(DenseVector x) {
    for (double& v : x) v = std::tanh(v);
    return x;
}

inline DenseVector sigmoid_map(DenseVector x) {
    for (double& v : x) v = sigmoid(v);
    return x;
}

inline double l2sq(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("l2sq: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double l2sq(const DenseVector& a, const DenseVector& b) { return l2sq(a.values(), b.values()); }

inline double l2norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps per coordinate.
// A non-finite probe value is a verification failure and throws.
inline DenseVector finite_diff_grad(const std::function<double(const DenseVector&)>& f, DenseVector x,
                                    double eps) {
    if (!(eps > 0.0)) throw PreconditionError("finite_diff_grad: eps must be positive");
    DenseVector grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = f(x);
        x[i] = orig - eps;
        const double down = f(x);
        x[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite function value probing coordinate " +
                               std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

// ‖a − n‖ / max(‖a‖ + ‖n‖, floor): the norm-wise relative error used by the
// gradient checks. The floor keeps identically-zero gradients from dividing
// rounding noise by zero.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                             double floor = 1e-7) {
    if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff += d * d;
    }
    const double denom = std::max(l2norm(analytic) + l2norm(numeric), floor);
    return std::sqrt(diff) / denom;
}

}  // namespace sru2b
