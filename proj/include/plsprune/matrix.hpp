#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace plsprune {

/// Dense row-major matrix of 64-bit reals. Values are immutable after
/// construction as far as the public API is concerned; constructors that
/// accept external data reject NaN/Inf.
class Matrix {
public:
    Matrix() = default;

    /// Zero-filled rows x cols matrix.
    Matrix(std::size_t rows, std::size_t cols);

    /// Takes ownership of row-major data; throws DataError on non-finite
    /// values, ShapeError if the length does not match rows*cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double operator()(std::size_t i, std::size_t j) const {
        return data_[i * cols_ + j];
    }
    double& operator()(std::size_t i, std::size_t j) {
        return data_[i * cols_ + j];
    }

    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * cols_, cols_};
    }
    std::vector<double> column(std::size_t j) const;

    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Result of column-wise standardization. Columns with sample standard
/// deviation below eps are centered only and their scale recorded as 1.
struct Standardized {
    Matrix values;
    std::vector<double> means;
    std::vector<double> scales;
};

/// Centers each column and divides by its sample standard deviation
/// (n-1 divisor). Requires at least 2 rows.
Standardized column_standardize(const Matrix& a, double eps = 1e-12);

/// Centers each column; returns the centered matrix and the column means.
struct Centered {
    Matrix values;
    std::vector<double> means;
};
Centered center_columns(const Matrix& a);

double l2_norm(std::span<const double> v);
double frobenius(const Matrix& a);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace plsprune
