#pragma once

// Shared oracles and fixtures for the unit and acceptance suites. Oracles
// here are deliberately naive and independent of the library's own
// computation paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "plsprune/matrix.hpp"
#include "plsprune/rng.hpp"

namespace testutil {

inline plsprune::Matrix random_matrix(std::size_t rows, std::size_t cols,
                                      std::uint64_t seed, double lo = -1.0,
                                      double hi = 1.0) {
    plsprune::Rng rng(seed);
    std::vector<double> data(rows * cols);
    for (double& v : data) v = rng.uniform(lo, hi);
    return plsprune::Matrix(rows, cols, std::move(data));
}

/// Naive triple-loop matrix product.
inline plsprune::Matrix matmul_reference(const plsprune::Matrix& a,
                                         const plsprune::Matrix& b) {
    plsprune::Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a(i, k) * b(k, j);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

/// Dominant left singular vector of M via power iteration on M*M^T.
/// Independent of the NIPALS implementation.
inline std::vector<double> power_iteration_left_singular(
    const plsprune::Matrix& m, std::size_t iterations = 1000,
    std::uint64_t seed = 12345) {
    const std::size_t d = m.rows();
    plsprune::Rng rng(seed);
    std::vector<double> v(d);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    for (std::size_t it = 0; it < iterations; ++it) {
        // w = M^T v (length = m.cols()), then v = M w, normalized.
        std::vector<double> w(m.cols(), 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                w[j] += m(i, j) * v[i];
            }
        }
        std::vector<double> next(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                next[i] += m(i, j) * w[j];
            }
        }
        const double n = plsprune::l2_norm(next);
        if (n == 0.0) return next;
        for (double& x : next) x /= n;
        v = std::move(next);
    }
    return v;
}

inline double cosine(const std::vector<double>& a,
                     const std::vector<double>& b) {
    return plsprune::dot(a, b) / (plsprune::l2_norm(a) * plsprune::l2_norm(b));
}

/// Ranks with average tie handling, then Pearson on the ranks.
inline double spearman(const std::vector<double>& a,
                       const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace testutil
