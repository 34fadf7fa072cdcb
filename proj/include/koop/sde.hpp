#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "koop/common.hpp"

namespace koop {

/// A stochastic differential equation  dX = b(X) dt + sigma(X) dW  with a
/// d-dimensional state and an m_w-dimensional Wiener process.
struct SdeSystem {
    std::string name;
    int dim = 0;
    int noise_dim = 0;
    std::function<Vector(const Vector&)> drift;        // b: R^d -> R^d
    std::function<Matrix(const Vector&)> diffusion;    // sigma: R^d -> R^{d x m_w}
    Box domain;
};

/// Paired snapshots (x_k, y_k) where y_k is the state one sampling interval
/// after x_k along a single trajectory: x[k+1] == y[k].
struct SnapshotData {
    Matrix x;          // m x d
    Matrix y;          // m x d
    double dt = 0.0;
    std::uint64_t seed = 0;

    long rows() const { return static_cast<long>(x.rows()); }
};

/// One Euler-Maruyama step. `noise` is a standard normal draw; the sqrt(dt)
/// scaling is applied here.
Vector euler_maruyama_step(const SdeSystem& system, const Vector& state, double dt,
                           const Vector& noise);

/// Integrates `n_steps` Euler-Maruyama steps from x0 and returns all
/// consecutive state pairs. Deterministic for a fixed seed; noise components
/// are drawn dimension-major within each step.
SnapshotData simulate_trajectory(const SdeSystem& system, const Vector& x0, long n_steps,
                                 double dt, std::uint64_t seed);

/// Benchmark systems: "double_well", "duffing", "fhn", "ou". `params`
/// overrides the per-system default constants; unknown names or keys raise
/// ConfigError.
SdeSystem builtin_system(const std::string& name,
                         const std::map<std::string, double>& params = {});

/// Default parameter map of a builtin system (used to emit resolved configs).
std::map<std::string, double> builtin_system_defaults(const std::string& name);

}  // namespace koop
