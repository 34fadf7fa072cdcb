#include <doctest.h>

#include <cmath>
#include <random>

#include "koop/dictionary.hpp"
#include "koop/errors.hpp"
#include "koop/sde.hpp"

using namespace koop;

namespace {

// Locates the dictionary column whose values at the probe points match
// `expected` exactly. Fails the test if the column is not unique.
int find_column(const Dictionary& dict, const Matrix& probes, const Vector& expected) {
    Matrix psi = dict.evaluate(probes);
    int found = -1;
    for (int j = 0; j < dict.size(); ++j) {
        if ((psi.col(j) - expected).cwiseAbs().maxCoeff() < 1e-12) {
            REQUIRE(found == -1);
            found = j;
        }
    }
    REQUIRE(found >= 0);
    return found;
}

}  // namespace

TEST_CASE("monomial dictionary: {1, x} in one dimension") {
    MonomialDictionary dict(1, 1);
    CHECK(dict.size() == 2);
    Matrix pts(3, 1);
    pts << 0.0, 1.0, 2.0;
    Matrix psi = dict.evaluate(pts);
    Matrix expected(3, 2);
    expected << 1, 0, 1, 1, 1, 2;
    CHECK(psi == expected);
}

TEST_CASE("monomial dictionary sizes follow the graded multi-index count") {
    CHECK(MonomialDictionary(2, 2).size() == 6);   // 1, x, y, x^2, xy, y^2
    CHECK(MonomialDictionary(3, 2).size() == 10);
    CHECK(MonomialDictionary(2, 3).size() == 10);
}

TEST_CASE("hermite dictionary: He_2(2) = 3") {
    HermiteDictionary dict(1, 2);
    CHECK(dict.size() == 3);
    Matrix pts(1, 1);
    pts << 2.0;
    Matrix psi = dict.evaluate(pts);
    CHECK(psi(0, 0) == 1.0);
    CHECK(psi(0, 1) == 2.0);
    CHECK(psi(0, 2) == 3.0);  // x^2 - 1
}

TEST_CASE("rbf dictionary peaks at its centers") {
    Matrix centers(2, 2);
    centers << 0.0, 0.0, 1.0, 1.0;
    RbfDictionary dict(centers, 0.5);
    CHECK(dict.size() == 3);
    Matrix pts(1, 2);
    pts << 0.0, 0.0;
    Matrix psi = dict.evaluate(pts);
    CHECK(psi(0, 0) == 1.0);
    CHECK(psi(0, 1) == 1.0);  // exp(0) at its own center
    CHECK(psi(0, 2) == doctest::Approx(std::exp(-2.0 / (2.0 * 0.25))).epsilon(1e-12));
}

TEST_CASE("every dictionary kind has the constant as column 0") {
    Matrix pts = Matrix::Random(10, 2);
    MonomialDictionary mono(2, 3);
    HermiteDictionary herm(2, 2);
    Matrix centers = Matrix::Random(4, 2);
    RbfDictionary rbf(centers, 0.7);
    TrainableDictionary train(2, {8, 8}, 5, 21);
    for (const Dictionary* d :
         {static_cast<const Dictionary*>(&mono), static_cast<const Dictionary*>(&herm),
          static_cast<const Dictionary*>(&rbf), static_cast<const Dictionary*>(&train)}) {
        Matrix psi = d->evaluate(pts);
        CHECK(psi.col(0) == Vector::Ones(10));
        Matrix grad;
        std::vector<Matrix> hess;
        d->derivatives(Vector::Zero(2), grad, hess);
        CHECK(grad.row(0).isZero(0.0));
        CHECK(hess[0].isZero(0.0));
    }
}

TEST_CASE("evaluate validates points") {
    MonomialDictionary dict(2, 2);
    CHECK_THROWS_AS(dict.evaluate(Matrix::Random(3, 3)), ShapeMismatch);
    Matrix bad(1, 2);
    bad << std::nan(""), 0.0;
    CHECK_THROWS_AS(dict.evaluate(bad), InvalidInput);
}

TEST_CASE("ou generator on monomials: A x = -x and A x^2 = -2x^2 + 2") {
    auto ou = builtin_system("ou");  // theta = 1, sigma^2 = 2
    MonomialDictionary dict(1, 2);
    Matrix pts(3, 1);
    pts << 2.0, 1.0, 0.0;
    Matrix gen = dict.generator_apply(ou, pts);

    CHECK(gen.col(0).isZero(0.0));             // constant: A 1 = 0
    CHECK(gen(0, 1) == doctest::Approx(-2.0)); // A x = -x at x = 2
    CHECK(gen(1, 1) == doctest::Approx(-1.0));
    CHECK(gen(1, 2) == doctest::Approx(0.0));  // A x^2 = -2x^2 + 2 at x = 1
    CHECK(gen(2, 2) == doctest::Approx(2.0));  // and at x = 0
}

TEST_CASE("generator includes the mixed second-derivative diffusion term") {
    // sigma = [[1,1],[0,1]] gives a = sigma sigma^T = [[2,1],[1,1]], so for
    // psi = x y:  A psi = b1 y + b2 x + (1/2)(a12 + a21) = y^2 - x^2 + 1
    // under the rotation drift b = (y, -x).
    SdeSystem sys;
    sys.name = "sheared";
    sys.dim = 2;
    sys.noise_dim = 2;
    sys.drift = [](const Vector& x) {
        Vector b(2);
        b << x[1], -x[0];
        return b;
    };
    Matrix sigma(2, 2);
    sigma << 1.0, 1.0, 0.0, 1.0;
    sys.diffusion = [sigma](const Vector&) { return sigma; };
    sys.domain = Box::make({-5.0, -5.0}, {5.0, 5.0});

    MonomialDictionary dict(2, 2);
    Matrix probes(3, 2);
    probes << 1.0, 2.0, 3.0, 5.0, -2.0, 7.0;
    Vector xy_values(3);
    xy_values << 2.0, 15.0, -14.0;
    const int col = find_column(dict, probes, xy_values);

    Matrix gen = dict.generator_apply(sys, probes);
    for (int r = 0; r < 3; ++r) {
        const double x = probes(r, 0), y = probes(r, 1);
        CHECK(gen(r, col) == doctest::Approx(y * y - x * x + 1.0).epsilon(1e-12));
    }
}

TEST_CASE("generator_apply validates shapes and support") {
    auto ou = builtin_system("ou");
    MonomialDictionary dict2(2, 1);
    CHECK_THROWS_AS(dict2.generator_apply(ou, Matrix::Random(3, 2)), ShapeMismatch);

    TrainableDictionary relu_dict(Mlp({1, 8, 3}, Activation::Relu, 0));
    CHECK(!relu_dict.has_derivatives());
    CHECK_THROWS_AS(relu_dict.generator_apply(ou, Matrix::Random(3, 1)), UnsupportedDictionary);
}

TEST_CASE("finite_diff_generator") {
    SUBCASE("equal snapshots give zero") {
        Matrix psi = Matrix::Random(5, 3);
        CHECK(finite_diff_generator(psi, psi, 0.01).isZero(0.0));
    }
    SUBCASE("worked single-pair example") {
        Matrix psi_x(1, 2), psi_y(1, 2);
        psi_x << 1.0, 0.0;
        psi_y << 1.0, 0.01;
        Matrix gen = finite_diff_generator(psi_x, psi_y, 0.01);
        CHECK(gen(0, 0) == 0.0);
        CHECK(gen(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("shape and dt validation") {
        CHECK_THROWS_AS(finite_diff_generator(Matrix::Zero(2, 3), Matrix::Zero(3, 3), 0.01),
                        ShapeMismatch);
        CHECK_THROWS_AS(finite_diff_generator(Matrix::Zero(2, 3), Matrix::Zero(2, 3), 0.0),
                        InvalidInput);
    }
}

TEST_CASE("analytic derivatives match finite differences at fixed points") {
    Vector p(2);
    p << 0.4, -0.7;

    MonomialDictionary mono(2, 3);
    CHECK(derivative_check(mono, p).max_rel_err() < 1e-6);

    HermiteDictionary herm(2, 3);
    CHECK(derivative_check(herm, p).max_rel_err() < 1e-6);

    Matrix centers = Matrix::Random(6, 2);
    RbfDictionary rbf(centers, 0.8);
    CHECK(derivative_check(rbf, p).max_rel_err() < 1e-5);

    TrainableDictionary train(2, {16, 8}, 6, 33);
    CHECK(derivative_check(train, p).max_rel_err() < 1e-4);
}

TEST_CASE("analytic derivatives hold across 100 random points") {
    std::mt19937_64 gen(404);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);

    MonomialDictionary mono(2, 3);
    HermiteDictionary herm(2, 2);
    Matrix centers(3, 2);
    centers << 0.0, 0.0, 1.0, -1.0, -0.5, 0.5;
    RbfDictionary rbf(centers, 0.9);

    double worst_mono = 0.0, worst_herm = 0.0, worst_rbf = 0.0;
    for (int i = 0; i < 100; ++i) {
        Vector p(2);
        p << unif(gen), unif(gen);
        worst_mono = std::max(worst_mono, derivative_check(mono, p).max_rel_err());
        worst_herm = std::max(worst_herm, derivative_check(herm, p).max_rel_err());
        worst_rbf = std::max(worst_rbf, derivative_check(rbf, p).max_rel_err());
    }
    CHECK(worst_mono < 1e-5);
    CHECK(worst_herm < 1e-5);
    CHECK(worst_rbf < 1e-5);
}

TEST_CASE("trainable dictionary wraps the network with a constant channel") {
    TrainableDictionary dict(2, {16, 8}, 7, 12);
    CHECK(dict.size() == 8);
    CHECK(dict.dim() == 2);
    CHECK(dict.has_derivatives());
    Matrix pts = Matrix::Random(5, 2);
    Matrix psi = dict.evaluate(pts);
    CHECK(psi.cols() == 8);
    CHECK(psi.col(0) == Vector::Ones(5));
    CHECK(psi.rightCols(7) == dict.mlp().forward_const(pts));
}

TEST_CASE("make_rbf_grid lays out cell centers") {
    Box box = Box::make({0.0, 0.0}, {1.0, 1.0});
    auto dict = make_rbf_grid(box, 3);
    CHECK(dict->size() == 10);  // 9 centers + constant
    CHECK(dict->bandwidth() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // All centers on the {1/6, 1/2, 5/6} lattice.
    const Matrix& c = dict->centers();
    REQUIRE(c.rows() == 9);
    for (Eigen::Index i = 0; i < c.rows(); ++i)
        for (Eigen::Index j = 0; j < 2; ++j) {
            const double v = c(i, j);
            const bool on_lattice = std::abs(v - 1.0 / 6.0) < 1e-12 ||
                                    std::abs(v - 0.5) < 1e-12 ||
                                    std::abs(v - 5.0 / 6.0) < 1e-12;
            CHECK(on_lattice);
        }
    CHECK_THROWS_AS(make_rbf_grid(box, 0), ConfigError);
}

TEST_CASE("dictionary json round trips preserve evaluation") {
    Matrix pts = Matrix::Random(6, 2);

    MonomialDictionary mono(2, 3);
    auto mono2 = dictionary_from_json(mono.to_json());
    CHECK(mono2->kind() == "monomial");
    CHECK(mono2->evaluate(pts) == mono.evaluate(pts));

    HermiteDictionary herm(2, 2);
    auto herm2 = dictionary_from_json(herm.to_json());
    CHECK(herm2->evaluate(pts) == herm.evaluate(pts));

    Matrix centers = Matrix::Random(5, 2);
    RbfDictionary rbf(centers, 0.6);
    auto rbf2 = dictionary_from_json(rbf.to_json());
    CHECK(rbf2->evaluate(pts) == rbf.evaluate(pts));

    TrainableDictionary train(2, {8, 8}, 4, 9);
    auto train2 = dictionary_from_json(train.to_json());
    CHECK(train2->kind() == "trainable");
    CHECK(train2->evaluate(pts) == train.evaluate(pts));

    CHECK_THROWS_AS(dictionary_from_json("{\"kind\":\"fourier\"}"), ConfigError);
}
