#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "koop/common.hpp"

namespace koop {

enum class Activation { Tanh, Relu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Parameter gradients mirroring an Mlp's weight/bias layout.
struct MlpGradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    void set_zero();
    MlpGradients& operator+=(const MlpGradients& other);
    MlpGradients& operator*=(double s);
    double max_abs() const;
};

/// Fully-connected network with the chosen hidden activation and an identity
/// output layer. forward() caches per-layer activations so backward() can
/// return exact parameter gradients of any scalar loss.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> layer_sizes, Activation hidden, std::uint64_t seed);

    /// Batch-major forward pass: input is (batch x in_dim), output (batch x out_dim).
    Matrix forward(const Matrix& input);

    /// Forward pass without touching the gradient cache (safe on const nets).
    Matrix forward_const(const Matrix& input) const;

    /// loss_grad is dLoss/dOutput, (batch x out_dim), for the cached forward.
    MlpGradients backward(const Matrix& loss_grad) const;

    /// Exact first and second derivatives of every output unit with respect
    /// to the input coordinates, at a single point. jac is (out_dim x d);
    /// hess[k] is the (d x d) Hessian of output k.
    void input_derivatives(const Vector& point, Matrix& jac, std::vector<Matrix>& hess) const;

    MlpGradients zero_gradients() const;

    int input_dim() const { return layer_sizes_.front(); }
    int output_dim() const { return layer_sizes_.back(); }
    const std::vector<int>& layer_sizes() const { return layer_sizes_; }
    Activation hidden_activation() const { return hidden_; }
    std::size_t layer_count() const { return weights_.size(); }

    std::vector<Matrix>& weights() { return weights_; }
    std::vector<Vector>& biases() { return biases_; }
    const std::vector<Matrix>& weights() const { return weights_; }
    const std::vector<Vector>& biases() const { return biases_; }

    bool same_architecture(const Mlp& other) const;
    bool parameters_finite() const;

    std::string to_json() const;
    static Mlp from_json(const std::string& text);

private:
    std::vector<int> layer_sizes_;
    Activation hidden_ = Activation::Tanh;
    std::vector<Matrix> weights_;  // [l]: (out x in)
    std::vector<Vector> biases_;

    // forward cache: activations_[0] is the input, activations_[l+1] the
    // output of layer l; preacts_[l] the affine output before the nonlinearity.
    mutable std::vector<Matrix> activations_;
    mutable std::vector<Matrix> preacts_;
    mutable bool cached_ = false;
};

/// Mean Huber loss and its gradient with respect to pred. Quadratic for
/// |error| <= delta, linear beyond.
std::pair<double, Vector> huber_loss(const Vector& pred, const Vector& target, double delta);

/// Elementwise clamp of every gradient entry to [-max_abs, max_abs].
void clip_gradients(MlpGradients& grads, double max_abs);

struct OptimizerState {
    enum class Kind { Sgd, Adam };

    Kind kind = Kind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    MlpGradients m;  // first moments (Adam)
    MlpGradients v;  // second moments (Adam)

    static OptimizerState adam(const Mlp& net, double lr);
    static OptimizerState sgd(double lr);
};

/// Applies one SGD or bias-corrected Adam update in place. Throws
/// NonFiniteUpdate if any parameter leaves the finite range.
void optimizer_step(Mlp& net, const MlpGradients& grads, OptimizerState& state);

/// Round-trip of the optimizer state (kind, step counter, Adam moments) so a
/// resumed run continues with identical updates.
std::string optimizer_to_json(const OptimizerState& state);
OptimizerState optimizer_from_json(const Mlp& net, const std::string& text);

/// target <- tau * source + (1 - tau) * target, elementwise; tau in (0, 1].
void soft_update(Mlp& target, const Mlp& source, double tau);

}  // namespace koop
