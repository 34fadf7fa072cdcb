#include "koop/regret.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "koop/errors.hpp"
#include "koop/rng.hpp"

namespace koop {

GapReport validate_assumption_gap(const Vector& true_means, double eps_sdmd) {
    if (true_means.size() < 2) throw InvalidInput("need at least two arms");
    if (!all_finite(true_means)) throw InvalidInput("arm means must be finite");
    if (eps_sdmd < 0.0) throw InvalidInput("estimator noise bound must be nonnegative");
    const double best = true_means.maxCoeff();
    double delta_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < true_means.size(); ++a)
        if (true_means(a) < best) delta_min = std::min(delta_min, best - true_means(a));
    if (!std::isfinite(delta_min))
        throw DegenerateArms("all arm means are equal; no suboptimality gap exists");
    GapReport report;
    report.delta_min = delta_min;
    report.eps_sdmd = eps_sdmd;
    report.holds = eps_sdmd < delta_min / 2.0;
    return report;
}

namespace {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    LineFit fit;
    fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    fit.intercept = my - fit.slope * mx;
    // Constant targets leave nothing to explain; call that r2 = 0 so the
    // "good linear fit" predicate stays false.
    fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 0.0;
    return fit;
}

}  // namespace

RegretResult run_regret_experiment(const RegretSpec& spec, std::uint64_t seed) {
    if (spec.horizon < 1000) throw InvalidInput("regret horizon must be >= 1000");
    const GapReport gap = validate_assumption_gap(spec.true_means, spec.eps_sdmd);
    const auto n_arms = static_cast<int>(spec.true_means.size());
    const double c = spec.c > 0.0 ? spec.c : static_cast<double>(n_arms);
    const double best = spec.true_means.maxCoeff();

    auto gen = rng::engine(seed, rng::Stream::Regret, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, n_arms - 1);

    // Every round the estimates are re-fit, so each arm's value carries
    // fresh bounded noise; exploitation trusts the current estimates.
    Vector estimates(n_arms);
    RegretResult out;
    out.cumulative.resize(static_cast<std::size_t>(spec.horizon));
    double cum = 0.0;
    for (long t = 1; t <= spec.horizon; ++t) {
        for (int a = 0; a < n_arms; ++a) {
            const double noise =
                spec.eps_sdmd > 0.0 ? (2.0 * unit(gen) - 1.0) * spec.eps_sdmd : 0.0;
            estimates(a) = spec.true_means(a) + noise;
        }
        const double eps_t = std::min(1.0, c / (n_arms * static_cast<double>(t)));
        int arm;
        if (unit(gen) < eps_t) {
            arm = pick(gen);
        } else {
            arm = 0;
            for (int a = 1; a < n_arms; ++a)
                if (estimates(a) > estimates(arm)) arm = a;
        }
        cum += best - spec.true_means(arm);
        out.cumulative[static_cast<std::size_t>(t - 1)] = cum;
    }

    RegretSummary& s = out.summary;
    s.final_regret = cum;
    s.delta_min = gap.delta_min;
    s.gap_holds = gap.holds;
    const long decade = spec.horizon / 10;
    s.first_decade_rate = out.cumulative[static_cast<std::size_t>(decade - 1)] /
                          static_cast<double>(decade);
    s.last_decade_rate = (cum - out.cumulative[static_cast<std::size_t>(spec.horizon -
                                                                        decade - 1)]) /
                         static_cast<double>(decade);

    const long half_start = spec.horizon / 2;
    std::vector<double> ts, logs, rs;
    ts.reserve(static_cast<std::size_t>(spec.horizon - half_start));
    for (long t = half_start + 1; t <= spec.horizon; ++t) {
        ts.push_back(static_cast<double>(t));
        logs.push_back(std::log(static_cast<double>(t)));
        rs.push_back(out.cumulative[static_cast<std::size_t>(t - 1)]);
    }
    const LineFit lin = least_squares(ts, rs);
    s.last_half_slope = lin.slope;
    s.last_half_r2 = lin.r2;
    const LineFit logfit = least_squares(logs, rs);
    s.log_fit_coeff = logfit.slope;
    s.log_fit_r2 = logfit.r2;
    return out;
}

std::string regret_csv(const RegretResult& result, long stride) {
    if (stride < 1) throw InvalidInput("csv stride must be >= 1");
    std::ostringstream outs;
    outs.precision(17);
    outs << "step,cum_regret\n";
    const auto T = static_cast<long>(result.cumulative.size());
    for (long t = 1; t <= T; ++t) {
        if (t % stride == 0 || t == T)
            outs << t << ',' << result.cumulative[static_cast<std::size_t>(t - 1)] << '\n';
    }
    return outs.str();
}

// ---------------------------------------------------------------------------
// Welch's t-test (p-value via the regularized incomplete beta function)
// ---------------------------------------------------------------------------

namespace {

double beta_continued_fraction(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-14, floor_v = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < floor_v) d = floor_v;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < floor_v) d = floor_v;
        c = 1.0 + aa / c;
        if (std::abs(c) < floor_v) c = floor_v;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < floor_v) d = floor_v;
        c = 1.0 + aa / c;
        if (std::abs(c) < floor_v) c = floor_v;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) break;
    }
    return h;
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

std::pair<double, double> mean_var(const std::vector<double>& v) {
    const auto n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= (n - 1.0);
    return {m, var};
}

}  // namespace

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw InsufficientData("welch test needs at least two points per sample");
    const auto [ma, va] = mean_var(a);
    const auto [mb, vb] = mean_var(b);
    const double sa = va / static_cast<double>(a.size());
    const double sb = vb / static_cast<double>(b.size());
    WelchResult out;
    if (sa + sb <= 0.0) {
        // Two exactly-constant samples: identical means are indistinguishable,
        // different means are trivially distinct.
        out.t = ma == mb ? 0.0 : std::numeric_limits<double>::infinity();
        out.df = static_cast<double>(a.size() + b.size() - 2);
        out.p = ma == mb ? 1.0 : 0.0;
        return out;
    }
    out.t = (ma - mb) / std::sqrt(sa + sb);
    out.df = (sa + sb) * (sa + sb) /
             (sa * sa / (static_cast<double>(a.size()) - 1.0) +
              sb * sb / (static_cast<double>(b.size()) - 1.0));
    out.p = regularized_incomplete_beta(out.df / 2.0, 0.5,
                                        out.df / (out.df + out.t * out.t));
    return out;
}

}  // namespace koop
