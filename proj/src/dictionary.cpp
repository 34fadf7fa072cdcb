#include "koop/dictionary.hpp"

#include <cmath>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"

namespace koop {

using nlohmann::json;

void Dictionary::check_points(const Matrix& points) const {
    if (points.cols() != dim()) {
        throw ShapeMismatch("points have dimension " + std::to_string(points.cols()) +
                            ", dictionary expects " + std::to_string(dim()));
    }
    if (!all_finite(points)) throw InvalidInput("non-finite evaluation point");
}

Matrix Dictionary::generator_apply(const SdeSystem& system, const Matrix& points) const {
    check_points(points);
    if (system.dim != dim()) {
        throw ShapeMismatch("system dimension " + std::to_string(system.dim) +
                            " does not match dictionary dimension " + std::to_string(dim()));
    }
    if (!has_derivatives()) {
        throw UnsupportedDictionary("dictionary kind '" + kind() +
                                    "' has no usable second derivatives");
    }
    const auto m = points.rows();
    const int n = size();
    Matrix out(m, n);
    parallel_for_rows(m, [&](Eigen::Index begin, Eigen::Index end) {
        Matrix grad;
        std::vector<Matrix> hess;
        for (Eigen::Index i = begin; i < end; ++i) {
            const Vector x = points.row(i).transpose();
            const Vector b = system.drift(x);
            const Matrix sigma = system.diffusion(x);
            const Matrix a = sigma * sigma.transpose();  // d x d
            derivatives(x, grad, hess);
            for (int j = 0; j < n; ++j) {
                out(i, j) = grad.row(j).dot(b) + 0.5 * a.cwiseProduct(hess[j]).sum();
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// RBF
// ---------------------------------------------------------------------------

RbfDictionary::RbfDictionary(Matrix centers, double bandwidth)
    : centers_(std::move(centers)), bandwidth_(bandwidth) {
    if (centers_.rows() == 0) throw ConfigError("rbf dictionary needs at least one center");
    if (!(bandwidth_ > 0.0)) throw ConfigError("rbf bandwidth must be positive");
    if (!all_finite(centers_)) throw ConfigError("rbf centers must be finite");
}

Matrix RbfDictionary::evaluate(const Matrix& points) const {
    check_points(points);
    const auto m = points.rows();
    const auto nc = centers_.rows();
    const double inv2h2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
    Matrix out(m, nc + 1);
    out.col(0).setOnes();
    for (Eigen::Index j = 0; j < nc; ++j) {
        out.col(j + 1) = (-inv2h2 *
                          (points.rowwise() - centers_.row(j)).rowwise().squaredNorm())
                             .array()
                             .exp();
    }
    return out;
}

void RbfDictionary::derivatives(const Vector& point, Matrix& grad,
                                std::vector<Matrix>& hess) const {
    const int d = dim();
    const auto nc = centers_.rows();
    const double h2 = bandwidth_ * bandwidth_;
    grad = Matrix::Zero(nc + 1, d);
    hess.assign(static_cast<std::size_t>(nc) + 1, Matrix::Zero(d, d));
    for (Eigen::Index j = 0; j < nc; ++j) {
        const Vector diff = point - centers_.row(j).transpose();
        const double value = std::exp(-diff.squaredNorm() / (2.0 * h2));
        grad.row(j + 1) = (-value / h2) * diff.transpose();
        hess[static_cast<std::size_t>(j) + 1] =
            value * (diff * diff.transpose() / (h2 * h2) - Matrix::Identity(d, d) / h2);
    }
}

std::string RbfDictionary::to_json() const {
    json j;
    j["kind"] = "rbf";
    j["bandwidth"] = bandwidth_;
    json rows = json::array();
    for (Eigen::Index r = 0; r < centers_.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < centers_.cols(); ++c) row.push_back(centers_(r, c));
        rows.push_back(std::move(row));
    }
    j["centers"] = std::move(rows);
    return j.dump();
}

// ---------------------------------------------------------------------------
// Graded multi-indices shared by monomial and Hermite bases
// ---------------------------------------------------------------------------

namespace {

void indices_of_total(int dim, int total, std::vector<int>& current,
                      std::vector<std::vector<int>>& out) {
    if (static_cast<int>(current.size()) == dim - 1) {
        current.push_back(total);
        out.push_back(current);
        current.pop_back();
        return;
    }
    for (int k = total; k >= 0; --k) {
        current.push_back(k);
        indices_of_total(dim, total - k, current, out);
        current.pop_back();
    }
}

std::vector<std::vector<int>> graded_indices(int dim, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> current;
    for (int total = 0; total <= degree; ++total) indices_of_total(dim, total, current, out);
    return out;
}

// Probabilists' Hermite values He_0..He_n at x, via the recurrence
// He_k = x He_{k-1} - (k-1) He_{k-2}.
std::vector<double> hermite_values(int n, double x) {
    std::vector<double> he(static_cast<std::size_t>(n) + 1);
    he[0] = 1.0;
    if (n >= 1) he[1] = x;
    for (int k = 2; k <= n; ++k) he[k] = x * he[k - 1] - (k - 1) * he[k - 2];
    return he;
}

}  // namespace

// ---------------------------------------------------------------------------
// Monomials
// ---------------------------------------------------------------------------

MonomialDictionary::MonomialDictionary(int dim, int degree) : dim_(dim), degree_(degree) {
    if (dim < 1) throw ConfigError("monomial dictionary needs dim >= 1");
    if (degree < 0) throw ConfigError("monomial degree must be >= 0");
    exponents_ = graded_indices(dim, degree);
}

Matrix MonomialDictionary::evaluate(const Matrix& points) const {
    check_points(points);
    const auto m = points.rows();
    Matrix out(m, size());
    // Per-axis power tables up to the max degree keep this O(m * d * degree + m * N).
    parallel_for_rows(m, [&](Eigen::Index begin, Eigen::Index end) {
        std::vector<std::vector<double>> pow_table(static_cast<std::size_t>(dim_));
        for (auto& p : pow_table) p.resize(static_cast<std::size_t>(degree_) + 1, 1.0);
        for (Eigen::Index i = begin; i < end; ++i) {
            for (int a = 0; a < dim_; ++a) {
                auto& p = pow_table[static_cast<std::size_t>(a)];
                for (int k = 1; k <= degree_; ++k) p[k] = p[k - 1] * points(i, a);
            }
            for (int j = 0; j < size(); ++j) {
                double v = 1.0;
                for (int a = 0; a < dim_; ++a)
                    v *= pow_table[static_cast<std::size_t>(a)][exponents_[j][a]];
                out(i, j) = v;
            }
        }
    });
    return out;
}

void MonomialDictionary::derivatives(const Vector& point, Matrix& grad,
                                     std::vector<Matrix>& hess) const {
    if (point.size() != dim_) throw ShapeMismatch("point dimension mismatch");
    auto power = [](double x, int k) { return k <= 0 ? 1.0 : std::pow(x, k); };
    grad = Matrix::Zero(size(), dim_);
    hess.assign(static_cast<std::size_t>(size()), Matrix::Zero(dim_, dim_));
    for (int j = 0; j < size(); ++j) {
        const auto& e = exponents_[j];
        for (int p = 0; p < dim_; ++p) {
            if (e[p] >= 1) {
                double v = e[p] * power(point(p), e[p] - 1);
                for (int a = 0; a < dim_; ++a)
                    if (a != p) v *= power(point(a), e[a]);
                grad(j, p) = v;
            }
            for (int q = p; q < dim_; ++q) {
                double v;
                if (p == q) {
                    if (e[p] < 2) continue;
                    v = e[p] * (e[p] - 1) * power(point(p), e[p] - 2);
                    for (int a = 0; a < dim_; ++a)
                        if (a != p) v *= power(point(a), e[a]);
                } else {
                    if (e[p] < 1 || e[q] < 1) continue;
                    v = e[p] * e[q] * power(point(p), e[p] - 1) * power(point(q), e[q] - 1);
                    for (int a = 0; a < dim_; ++a)
                        if (a != p && a != q) v *= power(point(a), e[a]);
                }
                hess[j](p, q) = v;
                hess[j](q, p) = v;
            }
        }
    }
}

std::string MonomialDictionary::to_json() const {
    json j;
    j["kind"] = "monomial";
    j["dim"] = dim_;
    j["degree"] = degree_;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Hermite
// ---------------------------------------------------------------------------

HermiteDictionary::HermiteDictionary(int dim, int degree) : dim_(dim), degree_(degree) {
    if (dim < 1) throw ConfigError("hermite dictionary needs dim >= 1");
    if (degree < 0) throw ConfigError("hermite degree must be >= 0");
    orders_ = graded_indices(dim, degree);
}

Matrix HermiteDictionary::evaluate(const Matrix& points) const {
    check_points(points);
    const auto m = points.rows();
    Matrix out(m, size());
    parallel_for_rows(m, [&](Eigen::Index begin, Eigen::Index end) {
        std::vector<std::vector<double>> he(static_cast<std::size_t>(dim_));
        for (Eigen::Index i = begin; i < end; ++i) {
            for (int a = 0; a < dim_; ++a)
                he[static_cast<std::size_t>(a)] = hermite_values(degree_, points(i, a));
            for (int j = 0; j < size(); ++j) {
                double v = 1.0;
                for (int a = 0; a < dim_; ++a) v *= he[static_cast<std::size_t>(a)][orders_[j][a]];
                out(i, j) = v;
            }
        }
    });
    return out;
}

void HermiteDictionary::derivatives(const Vector& point, Matrix& grad,
                                    std::vector<Matrix>& hess) const {
    if (point.size() != dim_) throw ShapeMismatch("point dimension mismatch");
    std::vector<std::vector<double>> he(static_cast<std::size_t>(dim_));
    for (int a = 0; a < dim_; ++a) he[static_cast<std::size_t>(a)] = hermite_values(degree_, point(a));
    // He_n' = n He_{n-1} and He_n'' = n (n-1) He_{n-2}.
    auto d1 = [&](int a, int n) {
        return n >= 1 ? n * he[static_cast<std::size_t>(a)][n - 1] : 0.0;
    };
    auto d2 = [&](int a, int n) {
        return n >= 2 ? static_cast<double>(n) * (n - 1) * he[static_cast<std::size_t>(a)][n - 2]
                      : 0.0;
    };
    grad = Matrix::Zero(size(), dim_);
    hess.assign(static_cast<std::size_t>(size()), Matrix::Zero(dim_, dim_));
    for (int j = 0; j < size(); ++j) {
        const auto& o = orders_[j];
        for (int p = 0; p < dim_; ++p) {
            double gp = d1(p, o[p]);
            double hp = d2(p, o[p]);
            for (int a = 0; a < dim_; ++a) {
                if (a == p) continue;
                const double v = he[static_cast<std::size_t>(a)][o[a]];
                gp *= v;
                hp *= v;
            }
            grad(j, p) = gp;
            hess[j](p, p) = hp;
            for (int q = p + 1; q < dim_; ++q) {
                double v = d1(p, o[p]) * d1(q, o[q]);
                for (int a = 0; a < dim_; ++a)
                    if (a != p && a != q) v *= he[static_cast<std::size_t>(a)][o[a]];
                hess[j](p, q) = v;
                hess[j](q, p) = v;
            }
        }
    }
}

std::string HermiteDictionary::to_json() const {
    json j;
    j["kind"] = "hermite";
    j["dim"] = dim_;
    j["degree"] = degree_;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Trainable
// ---------------------------------------------------------------------------

TrainableDictionary::TrainableDictionary(int dim, std::vector<int> hidden, int outputs,
                                         std::uint64_t seed)
    : net_([&] {
          if (outputs < 1) throw ConfigError("trainable dictionary needs at least one output");
          std::vector<int> sizes;
          sizes.push_back(dim);
          for (int h : hidden) sizes.push_back(h);
          sizes.push_back(outputs);
          return Mlp(sizes, Activation::Tanh, seed);
      }()) {}

TrainableDictionary::TrainableDictionary(Mlp net) : net_(std::move(net)) {}

Matrix TrainableDictionary::evaluate(const Matrix& points) const {
    check_points(points);
    Matrix out(points.rows(), size());
    out.col(0).setOnes();
    out.rightCols(net_.output_dim()) = net_.forward_const(points);
    return out;
}

void TrainableDictionary::derivatives(const Vector& point, Matrix& grad,
                                      std::vector<Matrix>& hess) const {
    if (point.size() != dim()) throw ShapeMismatch("point dimension mismatch");
    if (!has_derivatives()) {
        throw UnsupportedDictionary("trainable dictionary with relu hidden units "
                                    "has no usable second derivatives");
    }
    Matrix net_grad;
    std::vector<Matrix> net_hess;
    net_.input_derivatives(point, net_grad, net_hess);
    const int d = dim();
    grad = Matrix::Zero(size(), d);
    grad.bottomRows(net_.output_dim()) = net_grad;
    hess.clear();
    hess.reserve(static_cast<std::size_t>(size()));
    hess.push_back(Matrix::Zero(d, d));
    for (auto& h : net_hess) hess.push_back(std::move(h));
}

std::string TrainableDictionary::to_json() const {
    json j;
    j["kind"] = "trainable";
    j["mlp"] = json::parse(net_.to_json());
    return j.dump();
}

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------

Matrix finite_diff_generator(const Matrix& psi_x, const Matrix& psi_y, double dt) {
    if (psi_x.rows() != psi_y.rows() || psi_x.cols() != psi_y.cols()) {
        throw ShapeMismatch("psi_x and psi_y must have identical shapes");
    }
    if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
    return (psi_y - psi_x) / dt;
}

DerivativeReport derivative_check(const Dictionary& dict, const Vector& point,
                                  double grad_step, double hess_step) {
    const int d = dict.dim();
    const int n = dict.size();
    if (point.size() != d) throw ShapeMismatch("point dimension mismatch");

    auto eval_at = [&](const Vector& x) -> Vector {
        Matrix row(1, d);
        row.row(0) = x.transpose();
        return dict.evaluate(row).row(0).transpose();
    };
    auto rel = [](double analytic, double fd) {
        return std::abs(analytic - fd) / (1.0 + std::abs(analytic));
    };

    Matrix grad;
    std::vector<Matrix> hess;
    dict.derivatives(point, grad, hess);

    DerivativeReport report;
    const Vector base = eval_at(point);
    for (int p = 0; p < d; ++p) {
        Vector xp = point, xm = point;
        xp(p) += grad_step;
        xm(p) -= grad_step;
        const Vector fd = (eval_at(xp) - eval_at(xm)) / (2.0 * grad_step);
        for (int j = 0; j < n; ++j)
            report.max_grad_rel_err = std::max(report.max_grad_rel_err, rel(grad(j, p), fd(j)));
    }
    for (int p = 0; p < d; ++p) {
        Vector xp = point, xm = point;
        xp(p) += hess_step;
        xm(p) -= hess_step;
        const Vector fd = (eval_at(xp) - 2.0 * base + eval_at(xm)) / (hess_step * hess_step);
        for (int j = 0; j < n; ++j)
            report.max_hess_rel_err = std::max(report.max_hess_rel_err, rel(hess[j](p, p), fd(j)));
        for (int q = p + 1; q < d; ++q) {
            Vector xpp = point, xpm = point, xmp = point, xmm = point;
            xpp(p) += hess_step;
            xpp(q) += hess_step;
            xpm(p) += hess_step;
            xpm(q) -= hess_step;
            xmp(p) -= hess_step;
            xmp(q) += hess_step;
            xmm(p) -= hess_step;
            xmm(q) -= hess_step;
            const Vector fd = (eval_at(xpp) - eval_at(xpm) - eval_at(xmp) + eval_at(xmm)) /
                              (4.0 * hess_step * hess_step);
            for (int j = 0; j < n; ++j)
                report.max_hess_rel_err =
                    std::max(report.max_hess_rel_err, rel(hess[j](p, q), fd(j)));
        }
    }
    return report;
}

std::unique_ptr<RbfDictionary> make_rbf_grid(const Box& domain, int centers_per_axis,
                                             double bandwidth) {
    if (centers_per_axis < 1) throw ConfigError("rbf grid needs centers_per_axis >= 1");
    const int d = domain.dim();
    long total = 1;
    for (int a = 0; a < d; ++a) total *= centers_per_axis;
    Matrix centers(total, d);
    const Vector widths = domain.widths();
    // Cell-center layout: axis a takes values lo + (k + 1/2) * width / n.
    for (long idx = 0; idx < total; ++idx) {
        long rem = idx;
        for (int a = d - 1; a >= 0; --a) {
            const long k = rem % centers_per_axis;
            rem /= centers_per_axis;
            centers(idx, a) = domain.lo(a) + (k + 0.5) * widths(a) / centers_per_axis;
        }
    }
    if (bandwidth <= 0.0) {
        bandwidth = (widths / centers_per_axis).mean();
    }
    return std::make_unique<RbfDictionary>(std::move(centers), bandwidth);
}

std::unique_ptr<Dictionary> dictionary_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid dictionary json: ") + e.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "rbf") {
        const auto& rows = j.at("centers");
        const auto nr = rows.size();
        if (nr == 0) throw ConfigError("rbf dictionary needs at least one center");
        const auto nc = rows[0].size();
        Matrix centers(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc));
        for (std::size_t r = 0; r < nr; ++r)
            for (std::size_t c = 0; c < nc; ++c)
                centers(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    rows[r][c].get<double>();
        return std::make_unique<RbfDictionary>(std::move(centers), j.at("bandwidth").get<double>());
    }
    if (kind == "monomial")
        return std::make_unique<MonomialDictionary>(j.at("dim").get<int>(),
                                                    j.at("degree").get<int>());
    if (kind == "hermite")
        return std::make_unique<HermiteDictionary>(j.at("dim").get<int>(),
                                                   j.at("degree").get<int>());
    if (kind == "trainable")
        return std::make_unique<TrainableDictionary>(Mlp::from_json(j.at("mlp").dump()));
    throw ConfigError("unknown dictionary kind '" + kind + "'");
}

}  // namespace koop
