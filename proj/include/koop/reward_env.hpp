#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "koop/common.hpp"
#include "koop/dictionary.hpp"
#include "koop/sde.hpp"
#include "koop/sdmd.hpp"

namespace koop {

/// Uniform k-per-axis partition of the domain box. Actions are cell indices
/// in row-major axis order (axis 0 slowest), so a 2-D grid has k*k actions
/// and action 0 is the cell at the low corner.
class ActionGrid {
public:
    ActionGrid(Box domain, int k);

    int k() const { return k_; }
    int n_actions() const { return n_actions_; }
    const Box& domain() const { return domain_; }

    std::vector<int> cell_coords(int action) const;
    int action_of_coords(const std::vector<int>& coords) const;
    Box cell_box(int action) const;
    /// Cell containing the point; out-of-domain coordinates clamp to the edge.
    int action_containing(const Vector& point) const;
    Vector sample_point(int action, std::mt19937_64& rng) const;

private:
    void check_action(int action) const;

    Box domain_;
    int k_;
    int n_actions_;
};

Vector sample_initial_point(const ActionGrid& grid, int action, std::mt19937_64& rng);

/// FIFO of the last `capacity` trajectory starting points. The flattened
/// view (oldest first) is the agent-facing state of size dim * capacity;
/// unfilled slots read as zero before warm-up.
class StateWindow {
public:
    StateWindow(int dim, int capacity);

    int dim() const { return dim_; }
    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(points_.size()); }
    const std::deque<Vector>& points() const { return points_; }

    void push(const Vector& point);
    Vector flattened() const;

private:
    int dim_;
    int capacity_;
    std::deque<Vector> points_;
};

/// Gaussian kernel density estimate over `history`, a proper density in d
/// dimensions: mean of exp(-|q-p|^2/(2h^2)) / (2 pi h^2)^{d/2}. Empty
/// history gives 0.
double kde_density(const std::vector<Vector>& history, const Vector& query, double bandwidth);

struct RewardConfig {
    double r0 = 1.0;            // baseline
    double alpha_exp = 0.15;    // exploration coefficient
    double eps_kde = 1e-2;      // denominator guard inside the bonus
    double kde_bandwidth = -1;  // <= 0 selects domain diagonal / (2k)
    int n_modes = -1;           // retained modes in the consistency term
    double floor = -10.0;       // reward when integration diverges
};

struct RewardBreakdown {
    double r0 = 0.0;
    double consistency = 0.0;  // L, the spectral-consistency residual
    double density = 0.0;      // eta(x_new)
    double bonus = 0.0;        // alpha_exp / (density + eps_kde)
    double total = 0.0;        // r0 - consistency + bonus
    bool diverged = false;
};

RewardBreakdown compute_reward(double consistency, double density, const RewardConfig& cfg);

struct EnvConfig {
    SdeSystem system;
    std::shared_ptr<Dictionary> dictionary;
    GeneratorMode mode = GeneratorMode::Analytic;
    int grid_k = 8;
    int n_traj_steps = 1000;
    double dt = 0.01;
    int window_len = 5;  // ell; 0 gives the bandit's windowless mode
    RewardConfig reward;
    double ridge = -1.0;
    KoopmanOptions koopman;
    // Optional per-step dictionary refresh (trainable kind only).
    bool train_dict = false;
    int train_epochs = 2;
    int train_batch = 64;
    double train_lr = 1e-3;
    double train_gamma = 0.0;
    std::uint64_t seed = 0;
};

struct StepInfo {
    long step = 0;
    int action = -1;
    Vector x_new;
    RewardBreakdown reward;
    std::vector<Complex> mu;      // leading retained discrete eigenvalues
    std::vector<Complex> lambda;  // matching generator eigenvalues
    double wall_ms = 0.0;
};

/// The sampling environment: each step turns an action into a fresh
/// trajectory, pools it with the window's cached trajectories, runs the
/// operator estimate, and scores the result. Strictly sequential per
/// instance; all randomness derives from (seed, step) substreams.
class SamplingEnv {
public:
    explicit SamplingEnv(EnvConfig cfg);

    const ActionGrid& grid() const { return grid_; }
    const StateWindow& window() const { return window_; }
    const std::vector<Vector>& history() const { return history_; }
    long step_count() const { return t_; }
    double kde_bandwidth() const { return kde_bandwidth_; }
    const std::optional<KoopmanEstimate>& last_estimate() const { return last_est_; }
    Dictionary& dictionary() { return *cfg_.dictionary; }
    const Dictionary& dictionary() const { return *cfg_.dictionary; }
    const EnvConfig& config() const { return cfg_; }

    StepInfo step(int action);

    /// Re-runs the estimate on the trajectories pooled at the most recent
    /// step (used by exports; identical math to that step's estimate).
    KoopmanEstimate estimate_from_last_pool() const;

    /// Estimate over *all* trajectories simulated so far (running Gram
    /// sums; each trajectory counted once). With a per-step trained
    /// dictionary the running sums are stale, so this falls back to the
    /// latest pool.
    KoopmanEstimate cumulative_estimate() const;
    long cumulative_samples() const { return m_total_; }

    std::string state_to_json() const;
    void restore_state(const std::string& text);

private:
    SnapshotData simulate_id(long traj_id, const Vector& x0) const;  // empty on divergence
    SnapshotData pooled(const std::vector<long>& ids) const;
    void accumulate(const SnapshotData& traj);
    void prune_cache();

    EnvConfig cfg_;
    ActionGrid grid_;
    StateWindow window_;
    double kde_bandwidth_;
    long t_ = 0;
    long next_traj_id_ = 0;
    std::vector<Vector> history_;        // every starting point so far (KDE)
    std::deque<long> window_ids_;        // trajectory ids aligned with window_
    std::vector<long> last_pool_ids_;    // ids pooled at the latest step
    std::map<long, SnapshotData> cache_; // id -> simulated trajectory
    std::map<long, Vector> starts_;      // id -> starting point
    Matrix s_g_, s_h_;                   // unnormalized running Gram sums
    long m_total_ = 0;                   // snapshot pairs behind s_g_/s_h_
    std::optional<KoopmanEstimate> last_est_;
};

}  // namespace koop
