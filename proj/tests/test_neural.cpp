#include <doctest.h>

#include <cmath>
#include <limits>

#include "koop/errors.hpp"
#include "koop/neural.hpp"

using namespace koop;

namespace {

// Scalar loss 0.5 * |out|_F^2 evaluated without touching the gradient cache.
double half_square_loss(const Mlp& net, const Matrix& input) {
    return 0.5 * net.forward_const(input).squaredNorm();
}

}  // namespace

TEST_CASE("forward: zero weights give zero output") {
    Mlp net({3, 8, 2}, Activation::Tanh, 1);
    for (auto& w : net.weights()) w.setZero();
    for (auto& b : net.biases()) b.setZero();
    Matrix input = Matrix::Random(5, 3);
    CHECK(net.forward(input).isZero(0.0));
}

TEST_CASE("forward: single linear layer is exact") {
    // One layer means no hidden activation: out = W x + b.
    Mlp net({1, 1}, Activation::Tanh, 0);
    net.weights()[0](0, 0) = 2.0;
    net.biases()[0][0] = 0.0;
    Matrix input(1, 1);
    input << 3.0;
    CHECK(net.forward(input)(0, 0) == 6.0);
    net.biases()[0][0] = -1.0;
    CHECK(net.forward(input)(0, 0) == 5.0);
}

TEST_CASE("forward: relu hidden activation clamps at zero") {
    Mlp net({1, 1, 1}, Activation::Relu, 0);
    net.weights()[0](0, 0) = 1.0;
    net.biases()[0][0] = -2.0;
    net.weights()[1](0, 0) = 1.0;
    net.biases()[1][0] = 0.0;
    Matrix input(2, 1);
    input << 1.0, 3.0;
    Matrix out = net.forward(input);
    CHECK(out(0, 0) == 0.0);  // relu(1 - 2) = 0
    CHECK(out(1, 0) == 1.0);  // relu(3 - 2) = 1
}

TEST_CASE("forward is deterministic and batch-shaped") {
    Mlp net({2, 16, 8, 4}, Activation::Tanh, 99);
    Matrix input = Matrix::Random(7, 2);
    Matrix a = net.forward(input);
    Matrix b = net.forward(input);
    CHECK(a.rows() == 7);
    CHECK(a.cols() == 4);
    CHECK(a == b);
    CHECK(net.forward_const(input) == a);
}

TEST_CASE("backward matches central finite differences on a tanh net") {
    Mlp net({2, 16, 8, 4}, Activation::Tanh, 7);
    Matrix input = Matrix::Random(5, 2);

    Matrix out = net.forward(input);
    MlpGradients grads = net.backward(out);  // dL/dout = out for L = 0.5 |out|^2

    const double h = 1e-6;
    double max_rel = 0.0;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        Matrix& w = net.weights()[l];
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                const double keep = w(i, j);
                w(i, j) = keep + h;
                const double lp = half_square_loss(net, input);
                w(i, j) = keep - h;
                const double lm = half_square_loss(net, input);
                w(i, j) = keep;
                const double fd = (lp - lm) / (2.0 * h);
                const double a = grads.weights[l](i, j);
                max_rel = std::max(max_rel, std::abs(a - fd) / (1.0 + std::abs(a)));
            }
        Vector& b = net.biases()[l];
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            const double keep = b[i];
            b[i] = keep + h;
            const double lp = half_square_loss(net, input);
            b[i] = keep - h;
            const double lm = half_square_loss(net, input);
            b[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            const double a = grads.biases[l][i];
            max_rel = std::max(max_rel, std::abs(a - fd) / (1.0 + std::abs(a)));
        }
    }
    CHECK(max_rel < 1e-5);
}

TEST_CASE("backward: zero loss gradient gives zero parameter gradients") {
    Mlp net({3, 8, 2}, Activation::Tanh, 5);
    Matrix input = Matrix::Random(4, 3);
    net.forward(input);
    MlpGradients grads = net.backward(Matrix::Zero(4, 2));
    CHECK(grads.max_abs() == 0.0);
}

TEST_CASE("backward without a cached forward raises StaleCache") {
    Mlp net({2, 4, 1}, Activation::Tanh, 3);
    CHECK_THROWS_AS(net.backward(Matrix::Zero(1, 1)), StaleCache);
    // forward_const must not populate the cache either.
    net.forward_const(Matrix::Random(1, 2));
    CHECK_THROWS_AS(net.backward(Matrix::Zero(1, 1)), StaleCache);
}

TEST_CASE("backward rejects loss-gradient shape mismatch") {
    Mlp net({2, 4, 3}, Activation::Tanh, 3);
    net.forward(Matrix::Random(5, 2));
    CHECK_THROWS_AS(net.backward(Matrix::Zero(5, 2)), ShapeMismatch);
    CHECK_THROWS_AS(net.backward(Matrix::Zero(4, 3)), ShapeMismatch);
}

TEST_CASE("input_derivatives match closed form for a 1-1-1 tanh net") {
    // out(x) = c tanh(a x):  d/dx = c a sech^2(a x),  d2/dx2 = -2 c a^2 tanh sech^2.
    Mlp net({1, 1, 1}, Activation::Tanh, 0);
    const double a = 0.7, c = 1.3;
    net.weights()[0](0, 0) = a;
    net.biases()[0][0] = 0.0;
    net.weights()[1](0, 0) = c;
    net.biases()[1][0] = 0.0;

    Vector p(1);
    p << 0.3;
    Matrix jac;
    std::vector<Matrix> hess;
    net.input_derivatives(p, jac, hess);
    const double t = std::tanh(a * 0.3);
    const double sech2 = 1.0 - t * t;
    CHECK(jac(0, 0) == doctest::Approx(c * a * sech2).epsilon(1e-12));
    CHECK(hess[0](0, 0) == doctest::Approx(-2.0 * c * a * a * t * sech2).epsilon(1e-12));
}

TEST_CASE("huber loss values and gradient") {
    Vector pred(1), target(1);
    target << 0.0;

    pred << 0.5;  // quadratic branch: 0.5 * 0.25
    auto [l1, g1] = huber_loss(pred, target, 1.0);
    CHECK(l1 == doctest::Approx(0.125).epsilon(1e-15));
    CHECK(g1[0] == doctest::Approx(0.5).epsilon(1e-15));

    pred << 2.0;  // linear branch: 1 * (2 - 0.5)
    auto [l2, g2] = huber_loss(pred, target, 1.0);
    CHECK(l2 == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(g2[0] == doctest::Approx(1.0).epsilon(1e-15));

    pred << -2.0;
    auto [l3, g3] = huber_loss(pred, target, 1.0);
    CHECK(l3 == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(g3[0] == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("huber loss is continuous with continuous gradient at the boundary") {
    Vector target(1);
    target << 0.0;
    Vector below(1), above(1);
    below << 1.0 - 1e-9;
    above << 1.0 + 1e-9;
    auto [lb, gb] = huber_loss(below, target, 1.0);
    auto [la, ga] = huber_loss(above, target, 1.0);
    CHECK(la - lb == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(ga[0] - gb[0] == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("huber loss averages over the batch") {
    Vector pred(2), target(2);
    pred << 0.5, 2.0;
    target << 0.0, 0.0;
    auto [loss, grad] = huber_loss(pred, target, 1.0);
    CHECK(loss == doctest::Approx((0.125 + 1.5) / 2.0).epsilon(1e-15));
    CHECK(grad[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(grad[1] == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(huber_loss(pred, Vector::Zero(3), 1.0), ShapeMismatch);
    CHECK_THROWS_AS(huber_loss(pred, target, 0.0), InvalidInput);
}

TEST_CASE("clip_gradients clamps elementwise") {
    Mlp net({1, 2, 1}, Activation::Tanh, 0);
    MlpGradients grads = net.zero_gradients();
    grads.weights[0](0, 0) = 150.0;
    grads.weights[0](1, 0) = -150.0;
    grads.weights[1](0, 0) = 5.0;
    grads.biases[0][0] = -0.5;
    clip_gradients(grads, 100.0);
    CHECK(grads.weights[0](0, 0) == 100.0);
    CHECK(grads.weights[0](1, 0) == -100.0);
    CHECK(grads.weights[1](0, 0) == 5.0);
    CHECK(grads.biases[0][0] == -0.5);
    CHECK(grads.max_abs() == 100.0);
    CHECK_THROWS_AS(clip_gradients(grads, 0.0), InvalidInput);
}

TEST_CASE("sgd step: theta - lr * grad") {
    Mlp net({1, 1}, Activation::Tanh, 0);
    net.weights()[0](0, 0) = 1.0;
    net.biases()[0][0] = 0.0;
    MlpGradients grads = net.zero_gradients();
    grads.weights[0](0, 0) = 1.0;
    OptimizerState opt = OptimizerState::sgd(0.1);
    optimizer_step(net, grads, opt);
    CHECK(net.weights()[0](0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(opt.step == 1);
}

TEST_CASE("adam first step moves by almost exactly -lr * sign(grad)") {
    Mlp net({1, 1}, Activation::Tanh, 0);
    net.weights()[0](0, 0) = 1.0;
    net.biases()[0][0] = 0.0;
    OptimizerState opt = OptimizerState::adam(net, 1e-3);
    MlpGradients grads = net.zero_gradients();
    grads.weights[0](0, 0) = 0.5;
    optimizer_step(net, grads, opt);
    // Bias-corrected m-hat = g, v-hat = g^2, so the update is lr * g / (|g| + eps).
    CHECK(net.weights()[0](0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
    CHECK(opt.step == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    Mlp net({2, 4, 1}, Activation::Tanh, 8);
    Mlp before = net;
    OptimizerState opt = OptimizerState::adam(net, 1e-2);
    MlpGradients zero = net.zero_gradients();
    for (int i = 0; i < 3; ++i) optimizer_step(net, zero, opt);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        CHECK(net.weights()[l] == before.weights()[l]);
        CHECK(net.biases()[l] == before.biases()[l]);
    }
    CHECK(opt.step == 3);
}

TEST_CASE("non-finite gradients raise NonFiniteUpdate") {
    Mlp net({1, 1}, Activation::Tanh, 0);
    OptimizerState opt = OptimizerState::adam(net, 1e-3);
    MlpGradients grads = net.zero_gradients();
    grads.weights[0](0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(optimizer_step(net, grads, opt), NonFiniteUpdate);
}

TEST_CASE("soft_update blends parameters") {
    Mlp target({2, 4, 1}, Activation::Tanh, 1);
    Mlp source({2, 4, 1}, Activation::Tanh, 2);

    SUBCASE("tau = 1 copies the source exactly") {
        soft_update(target, source, 1.0);
        for (std::size_t l = 0; l < target.layer_count(); ++l) {
            CHECK(target.weights()[l] == source.weights()[l]);
            CHECK(target.biases()[l] == source.biases()[l]);
        }
    }

    SUBCASE("tau = 0.05 on scalar parameters") {
        Mlp t({1, 1}, Activation::Tanh, 0), s({1, 1}, Activation::Tanh, 0);
        t.weights()[0](0, 0) = 0.0;
        s.weights()[0](0, 0) = 1.0;
        t.biases()[0][0] = 0.0;
        s.biases()[0][0] = 0.0;
        soft_update(t, s, 0.05);
        CHECK(t.weights()[0](0, 0) == doctest::Approx(0.05).epsilon(1e-15));
    }

    SUBCASE("tau outside (0, 1] is rejected") {
        CHECK_THROWS_AS(soft_update(target, source, 0.0), InvalidInput);
        CHECK_THROWS_AS(soft_update(target, source, -0.1), InvalidInput);
        CHECK_THROWS_AS(soft_update(target, source, 1.1), InvalidInput);
    }

    SUBCASE("architecture mismatch is rejected") {
        Mlp other({2, 8, 1}, Activation::Tanh, 3);
        CHECK_THROWS_AS(soft_update(target, other, 0.5), ArchitectureMismatch);
    }

    SUBCASE("repeated updates converge geometrically at rate 1 - tau") {
        const double tau = 0.1;
        double gap0 = (target.weights()[0] - source.weights()[0]).cwiseAbs().maxCoeff();
        for (int k = 1; k <= 20; ++k) {
            soft_update(target, source, tau);
            const double gap = (target.weights()[0] - source.weights()[0]).cwiseAbs().maxCoeff();
            CHECK(gap == doctest::Approx(gap0 * std::pow(1.0 - tau, k)).epsilon(1e-9));
        }
    }
}

TEST_CASE("mlp json round trip preserves forward output bitwise") {
    Mlp net({3, 16, 8, 2}, Activation::Relu, 17);
    Mlp back = Mlp::from_json(net.to_json());
    CHECK(back.same_architecture(net));
    CHECK(back.hidden_activation() == Activation::Relu);
    Matrix input = Matrix::Random(6, 3);
    CHECK(back.forward_const(input) == net.forward_const(input));
}

TEST_CASE("optimizer json round trip continues identically") {
    Mlp a({2, 8, 1}, Activation::Tanh, 4);
    OptimizerState opt_a = OptimizerState::adam(a, 1e-3);

    // Step once so the moments are non-trivial.
    Matrix input = Matrix::Random(4, 2);
    Matrix out = a.forward(input);
    optimizer_step(a, a.backward(out), opt_a);

    Mlp b = Mlp::from_json(a.to_json());
    OptimizerState opt_b = optimizer_from_json(b, optimizer_to_json(opt_a));
    CHECK(opt_b.step == opt_a.step);
    CHECK(opt_b.learning_rate == opt_a.learning_rate);

    // The same gradient applied to both copies must yield identical weights.
    out = a.forward(input);
    MlpGradients g_a = a.backward(out);
    out = b.forward(input);
    MlpGradients g_b = b.backward(out);
    optimizer_step(a, g_a, opt_a);
    optimizer_step(b, g_b, opt_b);
    for (std::size_t l = 0; l < a.layer_count(); ++l) CHECK(a.weights()[l] == b.weights()[l]);
}

TEST_CASE("glorot init is seed-deterministic and layer-scaled") {
    Mlp a({4, 16, 2}, Activation::Tanh, 55);
    Mlp b({4, 16, 2}, Activation::Tanh, 55);
    Mlp c({4, 16, 2}, Activation::Tanh, 56);
    CHECK(a.weights()[0] == b.weights()[0]);
    CHECK(a.weights()[0] != c.weights()[0]);
    CHECK(a.parameters_finite());
    // Glorot uniform bound for a 4 -> 16 layer.
    const double bound = std::sqrt(6.0 / (4.0 + 16.0));
    CHECK(a.weights()[0].cwiseAbs().maxCoeff() <= bound + 1e-12);
    CHECK(a.biases()[0].isZero(0.0));
}
