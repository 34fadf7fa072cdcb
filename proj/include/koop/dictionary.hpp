#pragma once

#include <memory>
#include <string>
#include <vector>

#include "koop/common.hpp"
#include "koop/neural.hpp"
#include "koop/sde.hpp"

namespace koop {

/// A finite set of observable functions {psi_1, ..., psi_N}. The first basis
/// function is identically 1 for every kind. Kinds with analytic first and
/// second derivatives support applying the SDE generator
///   A psi = sum_i b_i d(psi)/dx_i + 1/2 sum_ij (sigma sigma^T)_ij d2(psi)/dx_i dx_j.
class Dictionary {
public:
    virtual ~Dictionary() = default;

    virtual int size() const = 0;  // N, including the constant
    virtual int dim() const = 0;   // input dimension d
    virtual std::string kind() const = 0;

    /// (m x N) matrix of psi_j(x_i); column 0 is all ones.
    virtual Matrix evaluate(const Matrix& points) const = 0;

    virtual bool has_derivatives() const { return true; }

    /// Analytic gradient (N x d) and per-function Hessians (N entries, d x d)
    /// at a single point. Row/entry 0 (the constant) is exactly zero.
    virtual void derivatives(const Vector& point, Matrix& grad,
                             std::vector<Matrix>& hess) const = 0;

    /// (m x N) matrix of (A psi_j)(x_i) under the given system; column 0 is 0.
    Matrix generator_apply(const SdeSystem& system, const Matrix& points) const;

    virtual std::string to_json() const = 0;

protected:
    void check_points(const Matrix& points) const;
};

/// Gaussian bumps exp(-|x - c_j|^2 / (2 h^2)) plus the constant function.
class RbfDictionary : public Dictionary {
public:
    RbfDictionary(Matrix centers, double bandwidth);

    int size() const override { return static_cast<int>(centers_.rows()) + 1; }
    int dim() const override { return static_cast<int>(centers_.cols()); }
    std::string kind() const override { return "rbf"; }
    Matrix evaluate(const Matrix& points) const override;
    void derivatives(const Vector& point, Matrix& grad, std::vector<Matrix>& hess) const override;
    std::string to_json() const override;

    const Matrix& centers() const { return centers_; }
    double bandwidth() const { return bandwidth_; }

private:
    Matrix centers_;  // (N-1) x d
    double bandwidth_;
};

/// Products prod_i x_i^{a_i} over all multi-indices with |a| <= degree,
/// graded by total degree; the empty index gives the constant.
class MonomialDictionary : public Dictionary {
public:
    MonomialDictionary(int dim, int degree);

    int size() const override { return static_cast<int>(exponents_.size()); }
    int dim() const override { return dim_; }
    std::string kind() const override { return "monomial"; }
    Matrix evaluate(const Matrix& points) const override;
    void derivatives(const Vector& point, Matrix& grad, std::vector<Matrix>& hess) const override;
    std::string to_json() const override;

    int degree() const { return degree_; }

private:
    int dim_;
    int degree_;
    std::vector<std::vector<int>> exponents_;
};

/// Tensor products of probabilists' Hermite polynomials He_n with total
/// degree <= degree. In one dimension: {1, x, x^2 - 1, x^3 - 3x, ...}.
class HermiteDictionary : public Dictionary {
public:
    HermiteDictionary(int dim, int degree);

    int size() const override { return static_cast<int>(orders_.size()); }
    int dim() const override { return dim_; }
    std::string kind() const override { return "hermite"; }
    Matrix evaluate(const Matrix& points) const override;
    void derivatives(const Vector& point, Matrix& grad, std::vector<Matrix>& hess) const override;
    std::string to_json() const override;

    int degree() const { return degree_; }

private:
    int dim_;
    int degree_;
    std::vector<std::vector<int>> orders_;
};

/// A tanh MLP providing N-1 learned observables plus the fixed constant
/// channel in column 0. Derivatives come from the exact chain rule through
/// the layers, so the generator can be applied during training.
class TrainableDictionary : public Dictionary {
public:
    TrainableDictionary(int dim, std::vector<int> hidden, int outputs, std::uint64_t seed);
    explicit TrainableDictionary(Mlp net);

    int size() const override { return net_.output_dim() + 1; }
    int dim() const override { return net_.input_dim(); }
    std::string kind() const override { return "trainable"; }
    Matrix evaluate(const Matrix& points) const override;
    bool has_derivatives() const override { return net_.hidden_activation() == Activation::Tanh; }
    void derivatives(const Vector& point, Matrix& grad, std::vector<Matrix>& hess) const override;
    std::string to_json() const override;

    Mlp& mlp() { return net_; }
    const Mlp& mlp() const { return net_; }

private:
    Mlp net_;
};

/// (psi_y - psi_x) / dt, the data-pair surrogate for generator evaluations.
Matrix finite_diff_generator(const Matrix& psi_x, const Matrix& psi_y, double dt);

struct DerivativeReport {
    double max_grad_rel_err = 0.0;
    double max_hess_rel_err = 0.0;

    double max_rel_err() const { return std::max(max_grad_rel_err, max_hess_rel_err); }
};

/// Compares analytic derivatives against central finite differences at one
/// point. Relative error is  |analytic - fd| / (1 + |analytic|).
DerivativeReport derivative_check(const Dictionary& dict, const Vector& point,
                                  double grad_step = 1e-5, double hess_step = 1e-4);

/// RBF dictionary on a uniform grid of cell-center points inside the domain.
/// bandwidth <= 0 selects the mean axis spacing of the center grid.
std::unique_ptr<RbfDictionary> make_rbf_grid(const Box& domain, int centers_per_axis,
                                             double bandwidth = 0.0);

std::unique_ptr<Dictionary> dictionary_from_json(const std::string& text);

}  // namespace koop
