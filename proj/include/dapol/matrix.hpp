#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dapol/error.hpp"

namespace dapol {

/// Dense row-major matrix of doubles. Rows are samples throughout the library
/// (a batch of activations, a sample set for MMD), so row access is a span.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_) throw invalid_argument("Matrix::from_rows: ragged rows");
            std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    /// Rows [begin, end) as a new matrix.
    Matrix slice_rows(std::size_t begin, std::size_t end) const {
        Matrix out(end - begin, cols_);
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                  data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
        return out;
    }

    /// Stacks `below` under this matrix.
    static Matrix vstack(const Matrix& top, const Matrix& below) {
        if (top.empty()) return below;
        if (below.empty()) return top;
        if (top.cols_ != below.cols_) throw invalid_argument("Matrix::vstack: column mismatch");
        Matrix out(top.rows_ + below.rows_, top.cols_);
        std::copy(top.data_.begin(), top.data_.end(), out.data_.begin());
        std::copy(below.data_.begin(), below.data_.end(),
                  out.data_.begin() + static_cast<std::ptrdiff_t>(top.data_.size()));
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace dapol
