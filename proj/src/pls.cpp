#include "plsprune/pls.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "plsprune/error.hpp"
#include "plsprune/rng.hpp"

namespace plsprune {

namespace {

// Threshold below which a vector is treated as numerically zero during
// extraction (relative to unit-scale standardized data).
constexpr double kTiny = 1e-12;

// Fixed base seed for the random fallback when the deflated Y column used
// to initialize u is all zero. A constant keeps fits bit-reproducible.
constexpr std::uint64_t kUinitSeed = 0x7c3a9d2f51e8b604ULL;

std::vector<double> matvec(const Matrix& a, const std::vector<double>& v) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& v) {
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double vi = v[i];
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j) * vi;
    }
    return out;
}

void rank1_deflate(Matrix& a, const std::vector<double>& left,
                   const std::vector<double>& right, double scale) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double li = scale * left[i];
        for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) -= li * right[j];
    }
}

}  // namespace

PlsModel nipals_fit(const Matrix& x, const Matrix& y, std::size_t components,
                    double tol, std::size_t max_iter) {
    const std::size_t m = x.rows();
    const std::size_t d = x.cols();
    const std::size_t k = y.cols();
    if (y.rows() != m) {
        throw ShapeError("X has " + std::to_string(m) + " rows but Y has " +
                         std::to_string(y.rows()));
    }
    if (m < 2) {
        throw DataError("nipals_fit needs at least 2 samples, got " +
                        std::to_string(m));
    }
    for (double v : x.data()) {
        if (!std::isfinite(v)) throw DataError("X contains non-finite values");
    }
    const std::size_t max_components = std::min(m - 1, d);
    if (components < 1 || components > max_components) {
        throw ParamError("component count " + std::to_string(components) +
                         " outside [1, min(m-1, d)] = [1, " +
                         std::to_string(max_components) + "]");
    }

    Standardized xs = column_standardize(x);
    Centered yc = center_columns(y);
    Matrix xd = xs.values;  // deflated in place
    Matrix yd = yc.values;

    PlsModel model;
    model.x_means = std::move(xs.means);
    model.x_scales = std::move(xs.scales);
    model.y_means = std::move(yc.means);
    model.weights = Matrix(d, components);
    model.scores = Matrix(m, components);
    model.y_loadings = Matrix(k, components);
    model.x_loadings = Matrix(d, components);
    model.explained_ss.assign(components, 0.0);
    model.converged.assign(components, false);

    std::size_t extracted = 0;
    for (std::size_t comp = 0; comp < components; ++comp) {
        // u starts as the first deflated Y column; seeded random fallback
        // when that column has already been deflated to zero.
        std::vector<double> u = yd.column(0);
        if (l2_norm(u) < kTiny) {
            Rng rng(derive_seed(kUinitSeed, comp));
            for (double& v : u) v = rng.uniform(-1.0, 1.0);
        }

        std::vector<double> w(d, 0.0), w_prev, t(m, 0.0), q(k, 0.0);
        bool converged = false;
        bool x_exhausted = false;
        bool y_exhausted = false;
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            w = matvec_t(xd, u);
            const double wn = l2_norm(w);
            if (wn < kTiny) {
                x_exhausted = true;
                break;
            }
            for (double& v : w) v /= wn;

            t = matvec(xd, w);

            q = matvec_t(yd, t);
            const double qn = l2_norm(q);
            if (qn < kTiny) {
                y_exhausted = true;
                break;
            }
            for (double& v : q) v /= qn;

            u = matvec(yd, q);

            if (!w_prev.empty()) {
                double diff = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dw = w[j] - w_prev[j];
                    diff += dw * dw;
                }
                if (std::sqrt(diff) < tol) {
                    converged = true;
                    break;
                }
            }
            w_prev = w;
        }

        if (x_exhausted) break;  // X deflated to zero; no signal left

        double tt = dot(t, t);
        if (tt < kTiny) break;

        double b = 0.0;
        if (y_exhausted) {
            // Y residual is numerically zero: the component still spans X
            // variance but explains nothing of Y. Keep q a valid unit
            // vector so model invariants hold.
            q.assign(k, 0.0);
            q[0] = 1.0;
            converged = true;
        } else {
            b = dot(t, u) / tt;
        }

        std::vector<double> p = matvec_t(xd, t);
        for (double& v : p) v /= tt;

        rank1_deflate(xd, t, p, 1.0);
        if (b != 0.0) rank1_deflate(yd, t, q, b);

        for (std::size_t j = 0; j < d; ++j) {
            model.weights(j, comp) = w[j];
            model.x_loadings(j, comp) = p[j];
        }
        for (std::size_t i = 0; i < m; ++i) model.scores(i, comp) = t[i];
        for (std::size_t j = 0; j < k; ++j) model.y_loadings(j, comp) = q[j];
        model.explained_ss[comp] = b * b * tt;
        model.converged[comp] = converged;
        extracted = comp + 1;
    }

    if (extracted == 0) {
        throw DataError("NIPALS extracted no components: X has no variance");
    }
    if (extracted < components) {
        // Data ran out of rank; truncate to what was actually extracted.
        PlsModel truncated;
        truncated.components = extracted;
        truncated.weights = Matrix(d, extracted);
        truncated.scores = Matrix(m, extracted);
        truncated.y_loadings = Matrix(k, extracted);
        truncated.x_loadings = Matrix(d, extracted);
        for (std::size_t c = 0; c < extracted; ++c) {
            for (std::size_t j = 0; j < d; ++j) {
                truncated.weights(j, c) = model.weights(j, c);
                truncated.x_loadings(j, c) = model.x_loadings(j, c);
            }
            for (std::size_t i = 0; i < m; ++i)
                truncated.scores(i, c) = model.scores(i, c);
            for (std::size_t j = 0; j < k; ++j)
                truncated.y_loadings(j, c) = model.y_loadings(j, c);
        }
        truncated.x_means = std::move(model.x_means);
        truncated.x_scales = std::move(model.x_scales);
        truncated.y_means = std::move(model.y_means);
        truncated.explained_ss.assign(model.explained_ss.begin(),
                                      model.explained_ss.begin() + extracted);
        truncated.converged.assign(model.converged.begin(),
                                   model.converged.begin() + extracted);
        return truncated;
    }
    model.components = components;
    return model;
}

Matrix transform(const PlsModel& model, const Matrix& x) {
    const std::size_t d = model.weights.rows();
    if (x.cols() != d) {
        throw ShapeError("transform expects " + std::to_string(d) +
                         " columns, got " + std::to_string(x.cols()));
    }
    Matrix z(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            z(i, j) = (x(i, j) - model.x_means[j]) / model.x_scales[j];
        }
    }
    return matmul(z, model.weights);
}

VipScores vip(const PlsModel& model) {
    const std::size_t d = model.weights.rows();
    const std::size_t c = model.components;
    double total_ss = 0.0;
    for (double s : model.explained_ss) total_ss += s;
    if (total_ss <= 0.0) {
        throw DegenerateModelError(
            "VIP undefined: fit explains zero sum of squares");
    }
    std::vector<double> wnorm_sq(c, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            wnorm_sq[i] += model.weights(j, i) * model.weights(j, i);
        }
    }
    VipScores out;
    out.values.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            const double wij = model.weights(j, i);
            acc += model.explained_ss[i] * (wij * wij) / wnorm_sq[i];
        }
        out.values[j] = std::sqrt(static_cast<double>(d) * acc / total_ss);
    }
    return out;
}

Matrix one_hot_labels(const std::vector<int>& labels, int class_count) {
    if (class_count < 1) {
        throw ParamError("one_hot_labels needs class_count >= 1");
    }
    Matrix y(labels.size(), static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count) {
            throw DataError("label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(class_count) +
                            ") at row " + std::to_string(i));
        }
        y(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return y;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    return nlohmann::json{
        {"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    return Matrix(j.at("rows").get<std::size_t>(),
                  j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

}  // namespace

void save_pls_model(const PlsModel& model, const std::filesystem::path& path) {
    nlohmann::json j{
        {"format", "plsprune-pls"},
        {"version", 1},
        {"components", model.components},
        {"weights", matrix_to_json(model.weights)},
        {"scores", matrix_to_json(model.scores)},
        {"y_loadings", matrix_to_json(model.y_loadings)},
        {"x_loadings", matrix_to_json(model.x_loadings)},
        {"x_means", model.x_means},
        {"x_scales", model.x_scales},
        {"y_means", model.y_means},
        {"explained_ss", model.explained_ss},
        {"converged", std::vector<int>(model.converged.begin(),
                                       model.converged.end())},
    };
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path.string());
    out << j.dump(2) << "\n";
}

PlsModel load_pls_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("PLS model parse error: ") + e.what());
    }
    if (j.value("format", "") != "plsprune-pls") {
        throw ParseError("not a PLS model file: " + path.string());
    }
    if (j.value("version", -1) != 1) {
        throw IntegrityError("unsupported PLS model version " +
                             std::to_string(j.value("version", -1)));
    }
    PlsModel model;
    model.components = j.at("components").get<std::size_t>();
    model.weights = matrix_from_json(j.at("weights"));
    model.scores = matrix_from_json(j.at("scores"));
    model.y_loadings = matrix_from_json(j.at("y_loadings"));
    model.x_loadings = matrix_from_json(j.at("x_loadings"));
    model.x_means = j.at("x_means").get<std::vector<double>>();
    model.x_scales = j.at("x_scales").get<std::vector<double>>();
    model.y_means = j.at("y_means").get<std::vector<double>>();
    model.explained_ss = j.at("explained_ss").get<std::vector<double>>();
    for (int v : j.at("converged").get<std::vector<int>>()) {
        model.converged.push_back(v != 0);
    }
    return model;
}

}  // namespace plsprune
