#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecmc/error.hpp"
#include "ecmc/rng.hpp"

namespace ecmc {

// Dense 2-D matrix of doubles, row-major. This is the value type: plain
// storage plus shape, no graph bookkeeping (see autodiff.hpp for that).
class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (data_.size() != rows_ * cols_)
            throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(rows_, cols_));
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Tensor out(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c)
                throw DimensionError("Tensor::from_rows: ragged row lengths");
            std::size_t j = 0;
            for (double v : row) out(i, j++) = v;
            ++i;
        }
        return out;
    }

    static Tensor identity(std::size_t n) {
        Tensor out(n, n);
        for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
        return out;
    }

    static Tensor uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
        Tensor out(rows, cols);
        for (double& v : out.data_) v = rng.uniform(lo, hi);
        return out;
    }

    static Tensor gaussian(std::size_t rows, std::size_t cols, Rng& rng,
                           double mean = 0.0, double stddev = 1.0) {
        Tensor out(rows, cols);
        for (double& v : out.data_) v = rng.normal(mean, stddev);
        return out;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    bool same_shape(const Tensor& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    std::string shape_string() const { return shape_string(rows_, cols_); }

    static std::string shape_string(std::size_t r, std::size_t c) {
        return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("max_abs_diff: shapes " + a.shape_string() + " vs " + b.shape_string());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

} // namespace ecmc
