#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "plsprune/matrix.hpp"

namespace plsprune {

/// Fitted NIPALS state. Weight and y-loading columns are unit norm,
/// score columns are mutually orthogonal.
struct PlsModel {
    std::size_t components = 0;
    Matrix weights;     // W, d x c
    Matrix scores;      // T, m x c
    Matrix y_loadings;  // Q, k x c, unit-norm columns
    Matrix x_loadings;  // P, d x c, used for deflation
    std::vector<double> x_means;
    std::vector<double> x_scales;
    std::vector<double> y_means;
    /// Explained sum of squares per component: the squared scalar
    /// regression coefficient of u on t, times t't.
    std::vector<double> explained_ss;
    /// Per component: false when the inner loop hit max_iter before the
    /// weight vector settled. Informational, not a failure.
    std::vector<bool> converged;
};

/// Per-feature importance scores. Satisfies (1/d) * sum(f_j^2) = 1.
struct VipScores {
    std::vector<double> values;
};

/// Fits a PLS model with NIPALS. X columns are standardized and Y columns
/// centered internally; per component the inner loop alternates
/// weight/score/loading updates until the weight change drops below tol,
/// then the rank-1 component is deflated from both matrices.
///
/// Requires m >= 2 and 1 <= components <= min(m-1, d). Y is expected to
/// be a one-hot class matrix (see one_hot_labels).
PlsModel nipals_fit(const Matrix& x, const Matrix& y, std::size_t components,
                    double tol = 1e-6, std::size_t max_iter = 500);

/// Applies the stored standardization and projects onto the weight matrix.
Matrix transform(const PlsModel& model, const Matrix& x);

/// Variable Importance in Projection with the squared-weight reading:
/// f_j = sqrt(d * sum_i S_i * w_ij^2 / ||w_i||^2 / sum_i S_i).
VipScores vip(const PlsModel& model);

/// Encodes integer labels as an m x k matrix of 0/1 indicators.
Matrix one_hot_labels(const std::vector<int>& labels, int class_count);

void save_pls_model(const PlsModel& model, const std::filesystem::path& path);
PlsModel load_pls_model(const std::filesystem::path& path);

}  // namespace plsprune
