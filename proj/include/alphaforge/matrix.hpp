#pragma once

#include <cassert>
#include <stdexcept>
#include <vector>

#include "alphaforge/util.hpp"

namespace alphaforge {

// Dense row-major [rows x cols] matrix of doubles. Rows index dates, columns
// index symbols throughout the library.
class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix shape");
    }

    static Matrix constant(int rows, int cols, double v) { return Matrix(rows, cols, v); }

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(r) * cols_ + c];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(r) * cols_ + c];
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    // Rows [r0, r1] inclusive.
    Matrix slice_rows(int r0, int r1) const {
        if (r0 < 0 || r1 >= rows_ || r0 > r1) throw std::out_of_range("bad row slice");
        Matrix out(r1 - r0 + 1, cols_);
        for (int r = r0; r <= r1; ++r)
            for (int c = 0; c < cols_; ++c) out(r - r0, c) = (*this)(r, c);
        return out;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

}  // namespace alphaforge
