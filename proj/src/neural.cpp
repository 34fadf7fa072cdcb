#include "koop/neural.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/rng.hpp"

namespace koop {

using nlohmann::json;

std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    throw ConfigError("unknown activation '" + name + "'");
}

void MlpGradients::set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
    return *this;
}

MlpGradients& MlpGradients::operator*=(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
}

double MlpGradients::max_abs() const {
    double m = 0.0;
    for (const auto& w : weights) if (w.size() > 0) m = std::max(m, w.cwiseAbs().maxCoeff());
    for (const auto& b : biases) if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
}

Mlp::Mlp(std::vector<int> layer_sizes, Activation hidden, std::uint64_t seed)
    : layer_sizes_(std::move(layer_sizes)), hidden_(hidden) {
    if (layer_sizes_.size() < 2)
        throw ArchitectureMismatch("Mlp needs at least an input and an output layer");
    for (int s : layer_sizes_)
        if (s < 1) throw ArchitectureMismatch("Mlp layer sizes must be positive");

    auto engine = rng::engine(seed);
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
        const int in = layer_sizes_[l];
        const int out = layer_sizes_[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Matrix w(out, in);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(engine);
        weights_.push_back(std::move(w));
        biases_.push_back(Vector::Zero(out));
    }
}

namespace {

inline double act(double z, Activation a) {
    return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

inline double act_deriv(double z, Activation a) {
    if (a == Activation::Tanh) {
        const double t = std::tanh(z);
        return 1.0 - t * t;
    }
    return z > 0.0 ? 1.0 : 0.0;
}

}  // namespace

Matrix Mlp::forward(const Matrix& input) {
    if (input.cols() != input_dim())
        throw ShapeMismatch("Mlp::forward: input width " + std::to_string(input.cols()) +
                            " != " + std::to_string(input_dim()));
    activations_.assign(1, input);
    preacts_.clear();
    Matrix current = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Matrix pre = current * weights_[l].transpose();
        pre.rowwise() += biases_[l].transpose();
        preacts_.push_back(pre);
        if (l + 1 < weights_.size()) {
            const Activation a = hidden_;
            current = pre.unaryExpr([a](double z) { return act(z, a); });
        } else {
            current = pre;  // identity output
        }
        activations_.push_back(current);
    }
    cached_ = true;
    return current;
}

Matrix Mlp::forward_const(const Matrix& input) const {
    if (input.cols() != input_dim())
        throw ShapeMismatch("Mlp::forward_const: input width mismatch");
    Matrix current = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Matrix pre = current * weights_[l].transpose();
        pre.rowwise() += biases_[l].transpose();
        if (l + 1 < weights_.size()) {
            const Activation a = hidden_;
            current = pre.unaryExpr([a](double z) { return act(z, a); });
        } else {
            current = pre;
        }
    }
    return current;
}

MlpGradients Mlp::backward(const Matrix& loss_grad) const {
    if (!cached_) throw StaleCache("Mlp::backward called without a cached forward pass");
    if (loss_grad.rows() != activations_.back().rows() ||
        loss_grad.cols() != activations_.back().cols())
        throw ShapeMismatch("Mlp::backward: loss_grad shape mismatch");

    MlpGradients grads = zero_gradients();
    Matrix delta = loss_grad;  // output layer is identity
    for (std::size_t li = weights_.size(); li-- > 0;) {
        grads.weights[li] = delta.transpose() * activations_[li];
        grads.biases[li] = delta.colwise().sum();
        if (li > 0) {
            Matrix back = delta * weights_[li];
            const Activation a = hidden_;
            back.array() *= preacts_[li - 1].unaryExpr([a](double z) { return act_deriv(z, a); }).array();
            delta = std::move(back);
        }
    }
    return grads;
}

void Mlp::input_derivatives(const Vector& point, Matrix& jac, std::vector<Matrix>& hess) const {
    const int d = input_dim();
    if (point.size() != d) throw ShapeMismatch("Mlp::input_derivatives: point dimension mismatch");

    // Propagate value v, Jacobian J (units x d) and per-unit Hessians through
    // the layers. Affine: J' = W J, H'_k = sum_j W_kj H_j. tanh: chain rule
    // with f'' = -2 t (1 - t^2).
    Vector value = point;
    Matrix J = Matrix::Identity(d, d);
    std::vector<Matrix> H(d, Matrix::Zero(d, d));

    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Matrix& W = weights_[l];
        const int out = static_cast<int>(W.rows());

        Vector pre = W * value + biases_[l];
        Matrix Jnew = W * J;
        std::vector<Matrix> Hnew(out, Matrix::Zero(d, d));
        for (int k = 0; k < out; ++k)
            for (Eigen::Index j = 0; j < W.cols(); ++j)
                if (W(k, j) != 0.0) Hnew[k] += W(k, j) * H[j];

        if (l + 1 < weights_.size()) {
            for (int k = 0; k < out; ++k) {
                if (hidden_ == Activation::Tanh) {
                    const double t = std::tanh(pre[k]);
                    const double d1 = 1.0 - t * t;
                    const double d2 = -2.0 * t * d1;
                    const Vector row = Jnew.row(k).transpose();
                    Hnew[k] = d1 * Hnew[k] + d2 * (row * row.transpose());
                    Jnew.row(k) *= d1;
                    pre[k] = t;
                } else {
                    const double d1 = pre[k] > 0.0 ? 1.0 : 0.0;
                    Hnew[k] *= d1;
                    Jnew.row(k) *= d1;
                    pre[k] = pre[k] > 0.0 ? pre[k] : 0.0;
                }
            }
        }
        value = std::move(pre);
        J = std::move(Jnew);
        H = std::move(Hnew);
    }
    jac = J;
    hess = H;
}

MlpGradients Mlp::zero_gradients() const {
    MlpGradients g;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        g.weights.emplace_back(Matrix::Zero(weights_[l].rows(), weights_[l].cols()));
        g.biases.emplace_back(Vector::Zero(biases_[l].size()));
    }
    return g;
}

bool Mlp::same_architecture(const Mlp& other) const {
    return layer_sizes_ == other.layer_sizes_ && hidden_ == other.hidden_;
}

bool Mlp::parameters_finite() const {
    for (const auto& w : weights_) if (!w.allFinite()) return false;
    for (const auto& b : biases_) if (!b.allFinite()) return false;
    return true;
}

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.size();
    if (rows == 0) return Matrix(0, 0);
    Matrix m(rows, j[0].size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
    return m;
}

}  // namespace

std::string Mlp::to_json() const {
    json j;
    j["version"] = 1;
    j["layer_sizes"] = layer_sizes_;
    j["activation"] = activation_name(hidden_);
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        weights.push_back(matrix_to_json(weights_[l]));
        json b = json::array();
        for (Eigen::Index i = 0; i < biases_[l].size(); ++i) b.push_back(biases_[l][i]);
        biases.push_back(std::move(b));
    }
    j["weights"] = std::move(weights);
    j["biases"] = std::move(biases);
    return j.dump();
}

Mlp Mlp::from_json(const std::string& text) {
    json j = json::parse(text);
    if (!j.contains("version")) throw ConfigError("Mlp checkpoint missing version field");
    Mlp net(j.at("layer_sizes").get<std::vector<int>>(),
            activation_from_name(j.at("activation").get<std::string>()), 0);
    const json& weights = j.at("weights");
    const json& biases = j.at("biases");
    if (weights.size() != net.weights_.size())
        throw ArchitectureMismatch("Mlp checkpoint layer count mismatch");
    for (std::size_t l = 0; l < net.weights_.size(); ++l) {
        Matrix w = matrix_from_json(weights[l]);
        if (w.rows() != net.weights_[l].rows() || w.cols() != net.weights_[l].cols())
            throw ArchitectureMismatch("Mlp checkpoint weight shape mismatch");
        net.weights_[l] = std::move(w);
        for (Eigen::Index i = 0; i < net.biases_[l].size(); ++i)
            net.biases_[l][i] = biases[l][i].get<double>();
    }
    return net;
}

std::pair<double, Vector> huber_loss(const Vector& pred, const Vector& target, double delta) {
    if (pred.size() != target.size()) throw ShapeMismatch("huber_loss: size mismatch");
    if (delta <= 0.0) throw InvalidInput("huber_loss: delta must be positive");
    const double n = static_cast<double>(pred.size());
    double loss = 0.0;
    Vector grad(pred.size());
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        if (std::abs(e) <= delta) {
            loss += 0.5 * e * e;
            grad[i] = e / n;
        } else {
            loss += delta * (std::abs(e) - 0.5 * delta);
            grad[i] = delta * (e > 0.0 ? 1.0 : -1.0) / n;
        }
    }
    return {loss / n, grad};
}

void clip_gradients(MlpGradients& grads, double max_abs) {
    if (max_abs <= 0.0) throw InvalidInput("clip_gradients: max_abs must be positive");
    auto clamp = [max_abs](double g) { return std::clamp(g, -max_abs, max_abs); };
    for (auto& w : grads.weights) w = w.unaryExpr(clamp);
    for (auto& b : grads.biases) b = b.unaryExpr(clamp);
}

OptimizerState OptimizerState::adam(const Mlp& net, double lr) {
    OptimizerState s;
    s.kind = Kind::Adam;
    s.learning_rate = lr;
    s.m = net.zero_gradients();
    s.v = net.zero_gradients();
    return s;
}

OptimizerState OptimizerState::sgd(double lr) {
    OptimizerState s;
    s.kind = Kind::Sgd;
    s.learning_rate = lr;
    return s;
}

void optimizer_step(Mlp& net, const MlpGradients& grads, OptimizerState& state) {
    if (grads.weights.size() != net.layer_count())
        throw ShapeMismatch("optimizer_step: gradient layout mismatch");

    if (state.kind == OptimizerState::Kind::Sgd) {
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            net.weights()[l] -= state.learning_rate * grads.weights[l];
            net.biases()[l] -= state.learning_rate * grads.biases[l];
        }
        ++state.step;
    } else {
        if (state.m.weights.empty()) {
            state.m = net.zero_gradients();
            state.v = net.zero_gradients();
        }
        ++state.step;
        const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
        const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
                m = state.beta1 * m + (1.0 - state.beta1) * g;
                v = state.beta2 * v.array().matrix() +
                    (1.0 - state.beta2) * g.array().square().matrix();
                param.array() -=
                    state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
            };
            update(net.weights()[l], state.m.weights[l], state.v.weights[l], grads.weights[l]);
            update(net.biases()[l], state.m.biases[l], state.v.biases[l], grads.biases[l]);
        }
    }

    if (!net.parameters_finite())
        throw NonFiniteUpdate("optimizer_step produced a non-finite parameter");
}

void soft_update(Mlp& target, const Mlp& source, double tau) {
    if (!target.same_architecture(source))
        throw ArchitectureMismatch("soft_update: target and source architectures differ");
    if (tau <= 0.0 || tau > 1.0) throw InvalidInput("soft_update: tau must be in (0, 1]");
    for (std::size_t l = 0; l < target.layer_count(); ++l) {
        target.weights()[l] = tau * source.weights()[l] + (1.0 - tau) * target.weights()[l];
        target.biases()[l] = tau * source.biases()[l] + (1.0 - tau) * target.biases()[l];
    }
}

std::string optimizer_to_json(const OptimizerState& state) {
    json j;
    j["version"] = 1;
    j["kind"] = state.kind == OptimizerState::Kind::Adam ? "adam" : "sgd";
    j["learning_rate"] = state.learning_rate;
    j["beta1"] = state.beta1;
    j["beta2"] = state.beta2;
    j["epsilon"] = state.epsilon;
    j["step"] = state.step;
    auto moments = [](const MlpGradients& g) {
        json out;
        json weights = json::array(), biases = json::array();
        for (const auto& w : g.weights) weights.push_back(matrix_to_json(w));
        for (const auto& b : g.biases) {
            json arr = json::array();
            for (Eigen::Index i = 0; i < b.size(); ++i) arr.push_back(b[i]);
            biases.push_back(std::move(arr));
        }
        out["weights"] = std::move(weights);
        out["biases"] = std::move(biases);
        return out;
    };
    j["m"] = moments(state.m);
    j["v"] = moments(state.v);
    return j.dump();
}

OptimizerState optimizer_from_json(const Mlp& net, const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid optimizer json: ") + e.what());
    }
    if (j.value("version", 0) != 1) throw IoError("unsupported optimizer state version");
    OptimizerState s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "adam") s.kind = OptimizerState::Kind::Adam;
    else if (kind == "sgd") s.kind = OptimizerState::Kind::Sgd;
    else throw IoError("unknown optimizer kind '" + kind + "'");
    s.learning_rate = j.at("learning_rate").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.step = j.at("step").get<long>();
    auto moments = [&](const json& src) {
        MlpGradients g = net.zero_gradients();
        const json& weights = src.at("weights");
        const json& biases = src.at("biases");
        if (weights.size() != g.weights.size())
            throw ArchitectureMismatch("optimizer moments layer count mismatch");
        for (std::size_t l = 0; l < g.weights.size(); ++l) {
            Matrix w = matrix_from_json(weights[l]);
            if (w.rows() != g.weights[l].rows() || w.cols() != g.weights[l].cols())
                throw ArchitectureMismatch("optimizer moment shape mismatch");
            g.weights[l] = std::move(w);
            for (Eigen::Index i = 0; i < g.biases[l].size(); ++i)
                g.biases[l][i] = biases[l][i].get<double>();
        }
        return g;
    };
    if (s.kind == OptimizerState::Kind::Adam) {
        s.m = moments(j.at("m"));
        s.v = moments(j.at("v"));
    }
    return s;
}

}  // namespace koop
