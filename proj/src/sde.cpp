#include "koop/sde.hpp"

#include <cmath>
#include <cstdlib>

#include "koop/errors.hpp"
#include "koop/rng.hpp"

namespace koop {

void parallel_for_rows(Eigen::Index n, const std::function<void(Eigen::Index, Eigen::Index)>& fn) {
    const int threads = thread_cap();
    if (threads <= 1 || n < 256) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    const Eigen::Index block = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const Eigen::Index begin = t * block;
        const Eigen::Index end = std::min(n, begin + block);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

int thread_cap() {
    static const int cap = [] {
        if (const char* env = std::getenv("KOOP_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        return 1;
    }();
    return cap;
}

Vector euler_maruyama_step(const SdeSystem& system, const Vector& state, double dt,
                           const Vector& noise) {
    if (state.size() != system.dim)
        throw ShapeMismatch("euler_maruyama_step: state has dimension " +
                            std::to_string(state.size()) + ", system expects " +
                            std::to_string(system.dim));
    if (noise.size() != system.noise_dim)
        throw ShapeMismatch("euler_maruyama_step: noise has dimension " +
                            std::to_string(noise.size()) + ", system expects " +
                            std::to_string(system.noise_dim));

    const Vector b = system.drift(state);
    const Matrix sigma = system.diffusion(state);
    if (b.size() != system.dim || sigma.rows() != system.dim || sigma.cols() != system.noise_dim)
        throw ShapeMismatch("euler_maruyama_step: drift/diffusion output shape mismatch for system '" +
                            system.name + "'");

    Vector next = state + b * dt + sigma * (std::sqrt(dt) * noise);
    if (!next.allFinite())
        throw IntegrationDiverged("euler_maruyama_step: non-finite state produced", state, 0);
    return next;
}

SnapshotData simulate_trajectory(const SdeSystem& system, const Vector& x0, long n_steps,
                                 double dt, std::uint64_t seed) {
    if (n_steps < 1) throw InvalidInput("simulate_trajectory: n_steps must be >= 1");
    if (dt <= 0.0) throw InvalidInput("simulate_trajectory: dt must be positive");
    if (x0.size() != system.dim)
        throw ShapeMismatch("simulate_trajectory: x0 has dimension " + std::to_string(x0.size()) +
                            ", system expects " + std::to_string(system.dim));
    if (!x0.allFinite()) throw InvalidInput("simulate_trajectory: x0 is not finite");

    SnapshotData data;
    data.dt = dt;
    data.seed = seed;
    data.x.resize(n_steps, system.dim);
    data.y.resize(n_steps, system.dim);

    auto engine = rng::engine(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector noise(system.noise_dim);

    Vector state = x0;
    for (long k = 0; k < n_steps; ++k) {
        for (int j = 0; j < system.noise_dim; ++j) noise[j] = normal(engine);
        data.x.row(k) = state;
        try {
            state = euler_maruyama_step(system, state, dt, noise);
        } catch (const IntegrationDiverged& e) {
            throw IntegrationDiverged("simulate_trajectory: diverged at step " + std::to_string(k),
                                      e.state(), k);
        }
        data.y.row(k) = state;
    }
    return data;
}

namespace {

std::map<std::string, double> merged_params(const std::string& name,
                                            const std::map<std::string, double>& defaults,
                                            const std::map<std::string, double>& overrides) {
    std::map<std::string, double> out = defaults;
    for (const auto& [key, value] : overrides) {
        auto it = out.find(key);
        if (it == out.end())
            throw ConfigError("builtin_system: unknown parameter '" + key + "' for system '" +
                              name + "'");
        it->second = value;
    }
    return out;
}

Matrix diagonal_diffusion(double s1, double s2) {
    Matrix sigma = Matrix::Zero(2, 2);
    sigma(0, 0) = s1;
    sigma(1, 1) = s2;
    return sigma;
}

}  // namespace

std::map<std::string, double> builtin_system_defaults(const std::string& name) {
    if (name == "double_well") return {{"sigma1", 1.09}, {"sigma2", 1.09}};
    if (name == "duffing") return {{"delta", 0.5}, {"alpha", -1.0}, {"beta", 1.0}, {"sigma", 0.15}};
    if (name == "fhn")
        return {{"eps", 0.01}, {"a1", 0.5}, {"a2", 0.1}, {"sigma1", 1e-3}, {"sigma2", 1e-5}};
    if (name == "ou") return {{"theta", 1.0}, {"sigma", std::sqrt(2.0)}};
    throw ConfigError("builtin_system: unknown system '" + name + "'");
}

SdeSystem builtin_system(const std::string& name, const std::map<std::string, double>& params) {
    const auto p = merged_params(name, builtin_system_defaults(name), params);

    SdeSystem sys;
    sys.name = name;

    if (name == "double_well") {
        // Gradient flow of V(x, y) = (x^2 - 1)^2 + y^2 with additive noise.
        const double s1 = p.at("sigma1"), s2 = p.at("sigma2");
        sys.dim = 2;
        sys.noise_dim = 2;
        sys.drift = [](const Vector& x) {
            Vector b(2);
            b[0] = -4.0 * x[0] * (x[0] * x[0] - 1.0);
            b[1] = -2.0 * x[1];
            return b;
        };
        const Matrix sigma = diagonal_diffusion(s1, s2);
        sys.diffusion = [sigma](const Vector&) { return sigma; };
        sys.domain = Box::make({-3.0, -4.0}, {3.0, 4.0});
    } else if (name == "duffing") {
        // Damped Duffing oscillator; noise acts on the velocity only.
        const double delta = p.at("delta"), alpha = p.at("alpha"), beta = p.at("beta");
        const double s = p.at("sigma");
        sys.dim = 2;
        sys.noise_dim = 1;
        sys.drift = [delta, alpha, beta](const Vector& x) {
            Vector b(2);
            b[0] = x[1];
            b[1] = -delta * x[1] - alpha * x[0] - beta * x[0] * x[0] * x[0];
            return b;
        };
        Matrix sigma = Matrix::Zero(2, 1);
        sigma(1, 0) = s;
        sys.diffusion = [sigma](const Vector&) { return sigma; };
        sys.domain = Box::make({-2.0, -2.0}, {2.0, 2.0});
    } else if (name == "fhn") {
        // FitzHugh-Nagumo with a fast membrane variable and a slow recovery
        // variable; eps sets the timescale separation.
        const double eps = p.at("eps"), a1 = p.at("a1"), a2 = p.at("a2");
        const double s1 = p.at("sigma1"), s2 = p.at("sigma2");
        sys.dim = 2;
        sys.noise_dim = 2;
        sys.drift = [eps, a1, a2](const Vector& x) {
            Vector b(2);
            b[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - x[1];
            b[1] = eps * (x[0] + a1 - a2 * x[1]);
            return b;
        };
        const Matrix sigma = diagonal_diffusion(s1, s2);
        sys.diffusion = [sigma](const Vector&) { return sigma; };
        sys.domain = Box::make({-2.5, -1.5}, {2.5, 1.5});
    } else if (name == "ou") {
        // 1-D Ornstein-Uhlenbeck; analytic generator spectrum {0, -theta, -2 theta, ...}
        // makes it the oracle system for spectral tests.
        const double theta = p.at("theta"), s = p.at("sigma");
        sys.dim = 1;
        sys.noise_dim = 1;
        sys.drift = [theta](const Vector& x) {
            Vector b(1);
            b[0] = -theta * x[0];
            return b;
        };
        Matrix sigma(1, 1);
        sigma(0, 0) = s;
        sys.diffusion = [sigma](const Vector&) { return sigma; };
        sys.domain = Box::make({-4.0}, {4.0});
    }
    return sys;
}

}  // namespace koop
