#include "koop/sdmd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <iomanip>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/neural.hpp"
#include "koop/rng.hpp"

namespace koop {

using nlohmann::json;

void build_gram(const Matrix& psi_x, const Matrix& psi_prime_x, Matrix& g, Matrix& h) {
    if (psi_x.rows() != psi_prime_x.rows() || psi_x.cols() != psi_prime_x.cols()) {
        throw ShapeMismatch("psi_x and psi_prime_x must have identical shapes");
    }
    if (psi_x.rows() < 1) throw InvalidInput("need at least one snapshot row");
    const double inv_m = 1.0 / static_cast<double>(psi_x.rows());
    g = inv_m * (psi_x.transpose() * psi_x);
    h = inv_m * (psi_x.transpose() * psi_prime_x);
}

double default_ridge(const Matrix& g) {
    return 1e-8 * g.trace() / static_cast<double>(g.rows());
}

std::vector<int> KoopmanEstimate::retained(int n_r) const {
    const int n = size();
    int want = n_r <= 0 ? std::min(5, n) : std::min(n_r, n);
    std::vector<int> out;
    for (int i = 0; i < n && static_cast<int>(out.size()) < want; ++i) {
        if (!degenerate[static_cast<std::size_t>(i)] && supported[static_cast<std::size_t>(i)])
            out.push_back(i);
    }
    return out;
}

KoopmanEstimate estimate_koopman(const Matrix& g, const Matrix& h, double dt, double ridge,
                                 const KoopmanOptions& opts) {
    const auto n = g.rows();
    if (g.cols() != n) throw ShapeMismatch("gram matrix must be square");
    if (h.rows() != n || h.cols() != n) throw ShapeMismatch("g and h dimensions differ");
    if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
    if (!all_finite(g) || !all_finite(h)) throw InvalidInput("non-finite gram entries");
    if (ridge < 0.0) ridge = default_ridge(g);

    KoopmanEstimate est;
    est.g = g;
    est.h = h;
    est.dt = dt;
    est.ridge = ridge;

    const Matrix g_sym = 0.5 * (g + g.transpose());
    const Matrix shifted = g_sym + ridge * Matrix::Identity(n, n);
    Eigen::SelfAdjointEigenSolver<Matrix> spectrum(shifted);
    if (spectrum.info() != Eigen::Success) throw SingularGram("gram eigendecomposition failed");
    const Vector& evals = spectrum.eigenvalues();  // ascending
    const double ev_max = evals(n - 1);
    const double ev_min = evals(0);
    const bool singular = !(ev_max > 0.0) || !(ev_min > ev_max / opts.cond_limit);

    if (!singular) {
        est.k = Matrix::Identity(n, n) + dt * shifted.ldlt().solve(h);
    } else if (opts.allow_pinv && ev_max > 0.0) {
        // Spectral cutoff pseudo-inverse: directions with no data mass are
        // dropped, leaving the operator equal to the identity there. Those
        // spurious mu = 1 modes are excluded later via the support flags.
        const double cutoff = opts.pinv_cutoff * ev_max;
        Vector inv = Vector::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i)
            if (evals(i) > cutoff) inv(i) = 1.0 / evals(i);
        const Matrix pinv =
            spectrum.eigenvectors() * inv.asDiagonal() * spectrum.eigenvectors().transpose();
        est.k = Matrix::Identity(n, n) + dt * (pinv * h);
        est.used_pinv = true;
    } else {
        std::ostringstream msg;
        msg << "gram matrix numerically singular (eigenvalue range [" << ev_min << ", " << ev_max
            << "], condition limit " << opts.cond_limit << ")";
        throw SingularGram(msg.str());
    }

    Eigen::EigenSolver<Matrix> eig(est.k);
    if (eig.info() != Eigen::Success) throw SingularGram("operator eigendecomposition failed");
    const ComplexVector mu_raw = eig.eigenvalues();
    const ComplexMatrix xi_raw = eig.eigenvectors();

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double ma = std::abs(mu_raw(a)), mb = std::abs(mu_raw(b));
        if (ma != mb) return ma > mb;
        if (mu_raw(a).real() != mu_raw(b).real()) return mu_raw(a).real() > mu_raw(b).real();
        return mu_raw(a).imag() > mu_raw(b).imag();
    });

    est.mu.resize(n);
    est.lambda.resize(n);
    est.xi.resize(n, n);
    est.degenerate.assign(static_cast<std::size_t>(n), 0);
    est.branch_ambiguous.assign(static_cast<std::size_t>(n), 0);
    est.supported.assign(static_cast<std::size_t>(n), 0);
    est.support_norm.assign(static_cast<std::size_t>(n), 0.0);

    const double support_threshold =
        opts.support_rel_threshold * std::max(g_sym.trace() / static_cast<double>(n), 0.0);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index i = 0; i < n; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        const Complex mu = mu_raw(src);
        est.mu(i) = mu;
        est.xi.col(i) = xi_raw.col(src);
        const double mod = std::abs(mu);
        if (mod < opts.degenerate_mu) {
            est.degenerate[static_cast<std::size_t>(i)] = 1;
            est.lambda(i) = Complex(nan, nan);
        } else {
            est.lambda(i) = std::log(mu) / dt;  // principal branch
            if (mu.real() < 0.0 && std::abs(mu.imag()) <= 1e-12 * mod)
                est.branch_ambiguous[static_cast<std::size_t>(i)] = 1;
        }
        // Data-support norm Re(xi* G xi)/(xi* xi): the mean squared modulus
        // of the un-normalized eigenfunction over the fitting data.
        const ComplexVector v = est.xi.col(i);
        const double denom = v.squaredNorm();
        const double s =
            denom > 0.0 ? (v.adjoint() * g_sym.cast<Complex>() * v)(0).real() / denom : 0.0;
        est.support_norm[static_cast<std::size_t>(i)] = s;
        est.supported[static_cast<std::size_t>(i)] = s >= support_threshold ? 1 : 0;
    }
    return est;
}

std::string generator_mode_name(GeneratorMode mode) {
    return mode == GeneratorMode::Analytic ? "analytic" : "finite_diff";
}

GeneratorMode generator_mode_from_name(const std::string& name) {
    if (name == "analytic") return GeneratorMode::Analytic;
    if (name == "finite_diff") return GeneratorMode::FiniteDiff;
    throw ConfigError("unknown generator mode '" + name + "'");
}

KoopmanEstimate estimate_from_snapshots(const Dictionary& dict, const SdeSystem* system,
                                        const SnapshotData& data, GeneratorMode mode,
                                        double ridge, const KoopmanOptions& opts) {
    const Matrix psi_x = dict.evaluate(data.x);
    Matrix psi_prime;
    if (mode == GeneratorMode::Analytic) {
        if (system == nullptr)
            throw InvalidInput("analytic generator mode requires the SDE system");
        psi_prime = dict.generator_apply(*system, data.x);
    } else {
        psi_prime = finite_diff_generator(psi_x, dict.evaluate(data.y), data.dt);
    }
    Matrix g, h;
    build_gram(psi_x, psi_prime, g, h);
    return estimate_koopman(g, h, data.dt, ridge, opts);
}

namespace {

// Row index of the entry with the largest modulus; earliest wins ties so the
// anchor is stable and normalization is idempotent.
Eigen::Index anchor_row(const ComplexMatrix& phi, Eigen::Index col) {
    Eigen::Index best = 0;
    double best_mod = std::abs(phi(0, col));
    for (Eigen::Index r = 1; r < phi.rows(); ++r) {
        const double mod = std::abs(phi(r, col));
        if (mod > best_mod) {
            best_mod = mod;
            best = r;
        }
    }
    return best;
}

}  // namespace

ComplexMatrix eigenfunction_values(const KoopmanEstimate& est, const Matrix& psi_at_points) {
    if (psi_at_points.cols() != est.xi.rows())
        throw ShapeMismatch("psi width does not match the estimate's dictionary size");
    ComplexMatrix phi = psi_at_points.cast<Complex>() * est.xi;
    for (Eigen::Index c = 0; c < phi.cols(); ++c) {
        const Complex z = phi(anchor_row(phi, c), c);
        if (std::abs(z) > 1e-300) phi.col(c) /= z;
    }
    return phi;
}

SpectralConsistencyReport spectral_consistency(const KoopmanEstimate& est, const Matrix& psi_x,
                                               const Matrix& psi_y, int n_modes,
                                               const Vector* weights) {
    if (psi_x.rows() != psi_y.rows() || psi_x.cols() != psi_y.cols())
        throw ShapeMismatch("psi_x and psi_y must have identical shapes");
    if (psi_x.cols() != est.xi.rows())
        throw ShapeMismatch("psi width does not match the estimate's dictionary size");
    const auto m = psi_x.rows();
    if (m < 1) throw InvalidInput("need at least one evaluation row");

    Vector w;
    if (weights != nullptr) {
        if (weights->size() != m) throw ShapeMismatch("weights length must equal row count");
        if (weights->minCoeff() < 0.0) throw InvalidInput("weights must be nonnegative");
        const double sum = weights->sum();
        if (!(sum > 0.0)) throw InvalidInput("weights must not all vanish");
        w = *weights / sum;
    } else {
        w = Vector::Constant(m, 1.0 / static_cast<double>(m));
    }

    SpectralConsistencyReport report;
    report.mode_indices = est.retained(n_modes);
    report.modes_used = static_cast<int>(report.mode_indices.size());
    report.per_mode.reserve(report.mode_indices.size());
    const ComplexMatrix phi_x = psi_x.cast<Complex>() * est.xi;
    const ComplexMatrix phi_y = psi_y.cast<Complex>() * est.xi;
    for (int idx : report.mode_indices) {
        // One shared scale per mode, anchored on the x points, so the
        // residual compares like with like.
        const Complex z = phi_x(anchor_row(phi_x, idx), idx);
        const Complex scale = std::abs(z) > 1e-300 ? 1.0 / z : Complex(1.0, 0.0);
        const Complex mu = est.mu(idx);
        double acc = 0.0;
        for (Eigen::Index r = 0; r < m; ++r) {
            acc += w(r) * std::norm(scale * (phi_y(r, idx) - mu * phi_x(r, idx)));
        }
        report.per_mode.push_back(acc);
        report.total += acc;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Dictionary training (alternating ridge solve / network descent)
// ---------------------------------------------------------------------------

namespace {

// K minimizing |Psi_Y - Psi_X K|_F^2 + gamma |K|_F^2, via a spectral-cutoff
// solve of (Psi_X^T Psi_X + gamma I) K = Psi_X^T Psi_Y.
Matrix ridge_operator(const Matrix& psi_x, const Matrix& psi_y, double gamma) {
    const auto n = psi_x.cols();
    const Matrix s = psi_x.transpose() * psi_x + gamma * Matrix::Identity(n, n);
    const Matrix a = psi_x.transpose() * psi_y;
    Eigen::SelfAdjointEigenSolver<Matrix> spectrum(s);
    if (spectrum.info() != Eigen::Success) throw SingularGram("ridge solve failed");
    const Vector& evals = spectrum.eigenvalues();
    const double ev_max = evals(n - 1);
    if (!(ev_max > 0.0)) throw SingularGram("dictionary features are identically zero");
    Vector inv = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (evals(i) > 1e-12 * ev_max) inv(i) = 1.0 / evals(i);
    return spectrum.eigenvectors() * inv.asDiagonal() *
           (spectrum.eigenvectors().transpose() * a);
}

double training_loss(const Matrix& psi_x, const Matrix& psi_y, const Matrix& k, double gamma) {
    return (psi_y - psi_x * k).squaredNorm() + gamma * k.squaredNorm();
}

}  // namespace

KoopmanEstimate train_dictionary(const SnapshotData& data, Dictionary& dict, double gamma_reg,
                                 int epochs, int batch, double lr, std::uint64_t seed,
                                 DictionaryTrainReport* report) {
    auto* trainable = dynamic_cast<TrainableDictionary*>(&dict);
    if (trainable == nullptr)
        throw UnsupportedDictionary("train_dictionary requires a trainable dictionary");
    if (gamma_reg < 0.0) throw InvalidInput("gamma_reg must be nonnegative");
    if (epochs < 0) throw InvalidInput("epochs must be nonnegative");
    const auto m = data.rows();
    const int n_out = trainable->mlp().output_dim();
    if (batch <= 0 || batch > m) batch = static_cast<int>(m);

    Mlp& net = trainable->mlp();
    OptimizerState opt = OptimizerState::adam(net, lr);

    Matrix psi_x = dict.evaluate(data.x);
    Matrix psi_y = dict.evaluate(data.y);
    Matrix k_train = ridge_operator(psi_x, psi_y, gamma_reg);
    double loss = training_loss(psi_x, psi_y, k_train, gamma_reg);
    if (report != nullptr) {
        *report = DictionaryTrainReport{};
        report->initial_loss = loss;
    }

    std::vector<Eigen::Index> rows(static_cast<std::size_t>(m));
    std::iota(rows.begin(), rows.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto gen = rng::engine(seed, rng::Stream::Generic, static_cast<std::uint64_t>(epoch));
        std::shuffle(rows.begin(), rows.end(), gen);
        for (Eigen::Index start = 0; start < m; start += batch) {
            const Eigen::Index count = std::min<Eigen::Index>(batch, m - start);
            Matrix xb(count, data.x.cols()), yb(count, data.y.cols());
            for (Eigen::Index r = 0; r < count; ++r) {
                xb.row(r) = data.x.row(rows[static_cast<std::size_t>(start + r)]);
                yb.row(r) = data.y.row(rows[static_cast<std::size_t>(start + r)]);
            }
            const Matrix err = dict.evaluate(yb) - dict.evaluate(xb) * k_train;  // count x N
            const double inv_count = 1.0 / static_cast<double>(count);
            // dJ/dPsi_Y = 2 E and dJ/dPsi_X = -2 E K^T; the constant column
            // carries no network parameters and is dropped.
            const Matrix grad_y = (2.0 * inv_count) * err.rightCols(n_out);
            const Matrix grad_x = (-2.0 * inv_count) * (err * k_train.transpose()).rightCols(n_out);
            net.forward(xb);
            MlpGradients grads = net.backward(grad_x);
            net.forward(yb);
            grads += net.backward(grad_y);
            optimizer_step(net, grads, opt);
        }
        psi_x = dict.evaluate(data.x);
        psi_y = dict.evaluate(data.y);
        k_train = ridge_operator(psi_x, psi_y, gamma_reg);
        loss = training_loss(psi_x, psi_y, k_train, gamma_reg);
        if (report != nullptr) report->loss_per_epoch.push_back(loss);
    }

    if (report != nullptr) {
        report->final_loss = loss;
        report->k_frobenius = k_train.norm();
    }
    const double est_ridge = gamma_reg > 0.0 ? gamma_reg / static_cast<double>(m) : -1.0;
    return estimate_from_snapshots(dict, nullptr, data, GeneratorMode::FiniteDiff, est_ridge);
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

namespace {

json matrix_to_json(const Matrix& mat) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json complex_to_json(const Complex& z) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return nullptr;
    return json::array({z.real(), z.imag()});
}

}  // namespace

std::string koopman_to_json(const KoopmanEstimate& est) {
    json j;
    j["version"] = 1;
    j["dt"] = est.dt;
    j["ridge"] = est.ridge;
    j["used_pinv"] = est.used_pinv;
    j["g"] = matrix_to_json(est.g);
    j["h"] = matrix_to_json(est.h);
    j["k"] = matrix_to_json(est.k);
    json mu = json::array(), lambda = json::array(), xi = json::array();
    for (int i = 0; i < est.size(); ++i) {
        mu.push_back(complex_to_json(est.mu(i)));
        lambda.push_back(complex_to_json(est.lambda(i)));
    }
    for (Eigen::Index r = 0; r < est.xi.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < est.xi.cols(); ++c) row.push_back(complex_to_json(est.xi(r, c)));
        xi.push_back(std::move(row));
    }
    j["mu"] = std::move(mu);
    j["lambda"] = std::move(lambda);
    j["xi"] = std::move(xi);
    j["degenerate"] = est.degenerate;
    j["branch_ambiguous"] = est.branch_ambiguous;
    j["supported"] = est.supported;
    j["support_norm"] = est.support_norm;
    return j.dump();
}

std::string eigenvalue_csv_rows(const KoopmanEstimate& est, long step, int n_modes, bool header) {
    std::ostringstream out;
    out << std::setprecision(16);
    if (header) out << "step,index,re_mu,im_mu,re_lambda,im_lambda\n";
    int rank = 0;
    for (int idx : est.retained(n_modes)) {
        out << step << ',' << rank++ << ',' << est.mu(idx).real() << ',' << est.mu(idx).imag()
            << ',' << est.lambda(idx).real() << ',' << est.lambda(idx).imag() << '\n';
    }
    return out.str();
}

}  // namespace koop
