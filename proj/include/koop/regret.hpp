#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "koop/common.hpp"

namespace koop {

/// Epsilon-greedy bandit played against arms with known true means but
/// noisy per-pull estimates: each pull of arm a yields R_a plus uniform
/// noise in [-eps_sdmd, eps_sdmd], and exploitation trusts the *latest*
/// sample of every arm. Exploration probability follows eps_t = c / (N t).
struct RegretSpec {
    Vector true_means;
    double eps_sdmd = 0.0;
    double c = -1.0;      // <= 0 selects c = n_arms, so eps_1 = 1
    long horizon = 100000;  // must be >= 1000
};

struct GapReport {
    double delta_min = 0.0;  // smallest gap to the best arm over suboptimal arms
    double eps_sdmd = 0.0;
    bool holds = false;      // eps_sdmd < delta_min / 2
};

/// Checks the noise-vs-gap condition separating the sublinear and linear
/// regret regimes. Throws DegenerateArms when every mean is identical.
GapReport validate_assumption_gap(const Vector& true_means, double eps_sdmd);

struct RegretSummary {
    double final_regret = 0.0;
    double first_decade_rate = 0.0;  // mean per-step regret over steps [1, T/10]
    double last_decade_rate = 0.0;   // mean per-step regret over the final T/10
    double last_half_slope = 0.0;    // OLS R_t ~ t over the last T/2 steps
    double last_half_r2 = 0.0;
    double log_fit_coeff = 0.0;      // OLS R_t ~ log t over the last T/2 steps
    double log_fit_r2 = 0.0;
    double delta_min = 0.0;
    bool gap_holds = false;
};

struct RegretResult {
    std::vector<double> cumulative;  // cumulative[t] = R_{t+1}, length horizon
    RegretSummary summary;
};

RegretResult run_regret_experiment(const RegretSpec& spec, std::uint64_t seed);

/// "step,cum_regret" rows; stride thins the curve (the final step is always
/// included).
std::string regret_csv(const RegretResult& result, long stride = 1);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

/// Welch's unequal-variance t-test; both samples need >= 2 points.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace koop
