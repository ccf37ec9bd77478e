#include "plsprune/matrix.hpp"

#include <cmath>
#include <string>

#include "plsprune/error.hpp"

namespace plsprune {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(rows_, cols_));
    }
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw DataError("matrix rejects non-finite value");
        }
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::vector<double> Matrix::column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " +
                         shape_str(a.rows(), a.cols()) + " times " +
                         shape_str(b.rows(), b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    // i-k-j order keeps the inner loop contiguous over both b and out.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Standardized column_standardize(const Matrix& a, double eps) {
    if (a.rows() < 2) {
        throw DataError("column_standardize needs at least 2 rows, got " +
                        std::to_string(a.rows()));
    }
    Standardized result;
    result.values = Matrix(a.rows(), a.cols());
    result.means.resize(a.cols());
    result.scales.resize(a.cols());
    const double n = static_cast<double>(a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) sum += a(i, j);
        const double mean = sum / n;
        double ss = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            const double d = a(i, j) - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / (n - 1.0));
        const double scale = sd < eps ? 1.0 : sd;
        result.means[j] = mean;
        result.scales[j] = scale;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            result.values(i, j) = (a(i, j) - mean) / scale;
        }
    }
    return result;
}

Centered center_columns(const Matrix& a) {
    Centered result;
    result.values = Matrix(a.rows(), a.cols());
    result.means.resize(a.cols());
    const double n = static_cast<double>(a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) sum += a(i, j);
        const double mean = n > 0.0 ? sum / n : 0.0;
        result.means[j] = mean;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            result.values(i, j) = a(i, j) - mean;
        }
    }
    return result;
}

double l2_norm(std::span<const double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
}

double frobenius(const Matrix& a) {
    return l2_norm(a.data());
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace plsprune
