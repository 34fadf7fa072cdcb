#include "koop/reward_env.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/rng.hpp"

namespace koop {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ActionGrid
// ---------------------------------------------------------------------------

ActionGrid::ActionGrid(Box domain, int k) : domain_(std::move(domain)), k_(k) {
    if (k < 1) throw ConfigError("action grid needs k >= 1");
    const int d = domain_.dim();
    long n = 1;
    for (int a = 0; a < d; ++a) {
        n *= k;
        if (n > 10'000'000) throw ConfigError("action grid too large (k^d > 1e7)");
    }
    n_actions_ = static_cast<int>(n);
}

void ActionGrid::check_action(int action) const {
    if (action < 0 || action >= n_actions_) {
        throw ActionOutOfRange("action " + std::to_string(action) + " outside [0, " +
                               std::to_string(n_actions_) + ")");
    }
}

std::vector<int> ActionGrid::cell_coords(int action) const {
    check_action(action);
    const int d = domain_.dim();
    std::vector<int> coords(static_cast<std::size_t>(d));
    int rem = action;
    for (int a = d - 1; a >= 0; --a) {
        coords[static_cast<std::size_t>(a)] = rem % k_;
        rem /= k_;
    }
    return coords;
}

int ActionGrid::action_of_coords(const std::vector<int>& coords) const {
    if (static_cast<int>(coords.size()) != domain_.dim())
        throw ShapeMismatch("coordinate count must equal the domain dimension");
    int action = 0;
    for (int c : coords) {
        if (c < 0 || c >= k_) throw ActionOutOfRange("cell coordinate outside [0, k)");
        action = action * k_ + c;
    }
    return action;
}

Box ActionGrid::cell_box(int action) const {
    const auto coords = cell_coords(action);
    const int d = domain_.dim();
    Vector lo(d), hi(d);
    for (int a = 0; a < d; ++a) {
        const double w = (domain_.hi(a) - domain_.lo(a)) / k_;
        lo(a) = domain_.lo(a) + coords[static_cast<std::size_t>(a)] * w;
        hi(a) = lo(a) + w;
    }
    return Box{lo, hi};
}

int ActionGrid::action_containing(const Vector& point) const {
    if (point.size() != domain_.dim()) throw ShapeMismatch("point dimension mismatch");
    std::vector<int> coords(static_cast<std::size_t>(domain_.dim()));
    for (int a = 0; a < domain_.dim(); ++a) {
        const double w = domain_.hi(a) - domain_.lo(a);
        int idx = static_cast<int>(std::floor((point(a) - domain_.lo(a)) / w * k_));
        coords[static_cast<std::size_t>(a)] = std::clamp(idx, 0, k_ - 1);
    }
    return action_of_coords(coords);
}

Vector ActionGrid::sample_point(int action, std::mt19937_64& rng) const {
    const Box cell = cell_box(action);
    const int d = domain_.dim();
    Vector point(d);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int a = 0; a < d; ++a) point(a) = cell.lo(a) + unit(rng) * (cell.hi(a) - cell.lo(a));
    return point;
}

Vector sample_initial_point(const ActionGrid& grid, int action, std::mt19937_64& rng) {
    return grid.sample_point(action, rng);
}

// ---------------------------------------------------------------------------
// StateWindow
// ---------------------------------------------------------------------------

StateWindow::StateWindow(int dim, int capacity) : dim_(dim), capacity_(capacity) {
    if (dim < 1) throw ConfigError("state window needs dim >= 1");
    if (capacity < 0) throw ConfigError("state window capacity must be nonnegative");
}

void StateWindow::push(const Vector& point) {
    if (point.size() != dim_) throw ShapeMismatch("window point dimension mismatch");
    points_.push_back(point);
    while (static_cast<int>(points_.size()) > capacity_) points_.pop_front();
}

Vector StateWindow::flattened() const {
    // Oldest first, newest in the trailing slot; leading slots are zero
    // until the window fills.
    Vector out = Vector::Zero(static_cast<Eigen::Index>(dim_) * capacity_);
    const int pad = capacity_ - size();
    for (int i = 0; i < size(); ++i)
        out.segment(static_cast<Eigen::Index>(pad + i) * dim_, dim_) =
            points_[static_cast<std::size_t>(i)];
    return out;
}

// ---------------------------------------------------------------------------
// Reward pieces
// ---------------------------------------------------------------------------

double kde_density(const std::vector<Vector>& history, const Vector& query, double bandwidth) {
    if (!(bandwidth > 0.0)) throw InvalidInput("kde bandwidth must be positive");
    if (history.empty()) return 0.0;
    const double h2 = bandwidth * bandwidth;
    const int d = static_cast<int>(query.size());
    const double norm = std::pow(2.0 * M_PI * h2, 0.5 * d);
    double acc = 0.0;
    for (const Vector& p : history) {
        if (p.size() != query.size()) throw ShapeMismatch("history point dimension mismatch");
        acc += std::exp(-(query - p).squaredNorm() / (2.0 * h2));
    }
    return acc / (norm * static_cast<double>(history.size()));
}

RewardBreakdown compute_reward(double consistency, double density, const RewardConfig& cfg) {
    RewardBreakdown out;
    out.r0 = cfg.r0;
    out.consistency = consistency;
    out.density = density;
    out.bonus = cfg.alpha_exp / (density + cfg.eps_kde);
    out.total = cfg.r0 - consistency + out.bonus;
    return out;
}

// ---------------------------------------------------------------------------
// SamplingEnv
// ---------------------------------------------------------------------------

SamplingEnv::SamplingEnv(EnvConfig cfg)
    : cfg_(std::move(cfg)),
      grid_(cfg_.system.domain, cfg_.grid_k),
      window_(cfg_.system.dim, cfg_.window_len),
      kde_bandwidth_(cfg_.reward.kde_bandwidth) {
    if (!cfg_.dictionary) throw ConfigError("environment needs a dictionary");
    if (cfg_.dictionary->dim() != cfg_.system.dim)
        throw ConfigError("dictionary dimension does not match the system");
    if (cfg_.n_traj_steps < 1) throw ConfigError("n_traj_steps must be >= 1");
    if (!(cfg_.dt > 0.0)) throw ConfigError("dt must be positive");
    if (cfg_.window_len < 0) throw ConfigError("window_len must be nonnegative");
    if (!(cfg_.reward.eps_kde > 0.0)) throw ConfigError("eps_kde must be positive");
    if (kde_bandwidth_ <= 0.0)
        kde_bandwidth_ = grid_.domain().diagonal() / (2.0 * cfg_.grid_k);

    const auto n = static_cast<Eigen::Index>(cfg_.dictionary->size());
    s_g_ = Matrix::Zero(n, n);
    s_h_ = Matrix::Zero(n, n);

    // Warm-up: seed the window with uniform draws over the domain, each with
    // its own trajectory, so the agent state is well-defined from step 0.
    for (int i = 0; i < cfg_.window_len; ++i) {
        auto gen = rng::engine(cfg_.seed, rng::Stream::WindowInit, static_cast<std::uint64_t>(i));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Vector p(cfg_.system.dim);
        for (int a = 0; a < cfg_.system.dim; ++a) {
            const Box& dom = grid_.domain();
            p(a) = dom.lo(a) + unit(gen) * (dom.hi(a) - dom.lo(a));
        }
        const long id = next_traj_id_++;
        starts_[id] = p;
        cache_[id] = simulate_id(id, p);
        accumulate(cache_.at(id));
        window_.push(p);
        window_ids_.push_back(id);
        history_.push_back(p);
    }
}

void SamplingEnv::accumulate(const SnapshotData& traj) {
    // Running sums only make sense for a fixed dictionary; a trainable one
    // changes between steps, so cumulative_estimate() re-pools instead.
    if (cfg_.train_dict || traj.rows() == 0) return;
    const Matrix psi_x = cfg_.dictionary->evaluate(traj.x);
    const Matrix psi_prime =
        cfg_.mode == GeneratorMode::Analytic
            ? cfg_.dictionary->generator_apply(cfg_.system, traj.x)
            : finite_diff_generator(psi_x, cfg_.dictionary->evaluate(traj.y), cfg_.dt);
    s_g_ += psi_x.transpose() * psi_x;
    s_h_ += psi_x.transpose() * psi_prime;
    m_total_ += traj.rows();
}

KoopmanEstimate SamplingEnv::cumulative_estimate() const {
    if (cfg_.train_dict) return estimate_from_last_pool();
    if (m_total_ == 0) throw InsufficientData("no non-divergent trajectory simulated yet");
    const double scale = 1.0 / static_cast<double>(m_total_);
    const Matrix g = scale * s_g_;
    const Matrix h = scale * s_h_;
    const double ridge = cfg_.ridge >= 0.0 ? cfg_.ridge : default_ridge(g);
    return estimate_koopman(g, h, cfg_.dt, ridge, cfg_.koopman);
}

SnapshotData SamplingEnv::simulate_id(long traj_id, const Vector& x0) const {
    try {
        return simulate_trajectory(cfg_.system, x0, cfg_.n_traj_steps, cfg_.dt,
                                   rng::substream(cfg_.seed, rng::Stream::Trajectory,
                                                  static_cast<std::uint64_t>(traj_id)));
    } catch (const IntegrationDiverged&) {
        SnapshotData empty;
        empty.x = Matrix(0, cfg_.system.dim);
        empty.y = Matrix(0, cfg_.system.dim);
        empty.dt = cfg_.dt;
        empty.seed = cfg_.seed;
        return empty;
    }
}

SnapshotData SamplingEnv::pooled(const std::vector<long>& ids) const {
    Eigen::Index total = 0;
    for (long id : ids) {
        auto it = cache_.find(id);
        if (it == cache_.end()) throw StaleCache("trajectory cache missing id " + std::to_string(id));
        total += it->second.rows();
    }
    SnapshotData pool;
    pool.x = Matrix(total, cfg_.system.dim);
    pool.y = Matrix(total, cfg_.system.dim);
    pool.dt = cfg_.dt;
    pool.seed = cfg_.seed;
    Eigen::Index row = 0;
    for (long id : ids) {
        const SnapshotData& traj = cache_.at(id);
        if (traj.rows() == 0) continue;
        pool.x.middleRows(row, traj.rows()) = traj.x;
        pool.y.middleRows(row, traj.rows()) = traj.y;
        row += traj.rows();
    }
    return pool;
}

void SamplingEnv::prune_cache() {
    std::set<long> keep(window_ids_.begin(), window_ids_.end());
    keep.insert(last_pool_ids_.begin(), last_pool_ids_.end());
    for (auto it = cache_.begin(); it != cache_.end();) {
        it = keep.count(it->first) ? std::next(it) : cache_.erase(it);
    }
    for (auto it = starts_.begin(); it != starts_.end();) {
        it = keep.count(it->first) ? std::next(it) : starts_.erase(it);
    }
}

StepInfo SamplingEnv::step(int action) {
    const auto t_start = std::chrono::steady_clock::now();
    StepInfo info;
    info.step = t_;
    info.action = action;

    auto cell_rng =
        rng::engine(cfg_.seed, rng::Stream::CellSample, static_cast<std::uint64_t>(t_));
    info.x_new = grid_.sample_point(action, cell_rng);  // validates the action

    // Density over *past* starting points, before x_new joins the history.
    const double density = kde_density(history_, info.x_new, kde_bandwidth_);

    const long id = next_traj_id_++;
    starts_[id] = info.x_new;
    SnapshotData traj = simulate_id(id, info.x_new);
    cache_[id] = std::move(traj);
    accumulate(cache_.at(id));

    std::vector<long> ids(window_ids_.begin(), window_ids_.end());
    ids.push_back(id);

    if (cache_.at(id).rows() == 0) {
        // Divergence: floor the reward, keep the loop moving.
        info.reward = compute_reward(0.0, density, cfg_.reward);
        info.reward.consistency = 0.0;
        info.reward.total = cfg_.reward.floor;
        info.reward.diverged = true;
    } else {
        const SnapshotData pool = pooled(ids);
        if (cfg_.train_dict) {
            train_dictionary(pool, *cfg_.dictionary, cfg_.train_gamma, cfg_.train_epochs,
                             cfg_.train_batch, cfg_.train_lr,
                             rng::substream(cfg_.seed, rng::Stream::Generic,
                                            static_cast<std::uint64_t>(t_)));
        }
        const SdeSystem* sys = cfg_.mode == GeneratorMode::Analytic ? &cfg_.system : nullptr;
        try {
            KoopmanEstimate est =
                estimate_from_snapshots(*cfg_.dictionary, sys, pool, cfg_.mode, cfg_.ridge,
                                        cfg_.koopman);
            const Matrix psi_x = cfg_.dictionary->evaluate(pool.x);
            const Matrix psi_y = cfg_.dictionary->evaluate(pool.y);
            const SpectralConsistencyReport consistency =
                spectral_consistency(est, psi_x, psi_y, cfg_.reward.n_modes);
            info.reward = compute_reward(consistency.total, density, cfg_.reward);
            for (int idx : est.retained(cfg_.reward.n_modes)) {
                info.mu.push_back(est.mu(idx));
                info.lambda.push_back(est.lambda(idx));
            }
            last_est_ = std::move(est);
        } catch (const SingularGram&) {
            // Numerically unusable pool (and pseudo-inverse disallowed or the
            // eigensolver gave up): no spectral signal this step. Score it at
            // the floor and keep the loop moving, exactly like a divergence,
            // but leave the divergence flag honest.
            info.reward = compute_reward(0.0, density, cfg_.reward);
            info.reward.consistency = 0.0;
            info.reward.total = cfg_.reward.floor;
            info.mu.clear();
            info.lambda.clear();
        }
    }

    history_.push_back(info.x_new);
    window_.push(info.x_new);
    window_ids_.push_back(id);
    while (static_cast<int>(window_ids_.size()) > cfg_.window_len) window_ids_.pop_front();
    last_pool_ids_ = std::move(ids);
    prune_cache();
    ++t_;

    info.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             t_start)
                       .count();
    return info;
}

KoopmanEstimate SamplingEnv::estimate_from_last_pool() const {
    if (last_pool_ids_.empty()) throw InsufficientData("no environment step taken yet");
    const SnapshotData pool = pooled(last_pool_ids_);
    if (pool.rows() == 0) throw InsufficientData("all pooled trajectories diverged");
    const SdeSystem* sys = cfg_.mode == GeneratorMode::Analytic ? &cfg_.system : nullptr;
    return estimate_from_snapshots(*cfg_.dictionary, sys, pool, cfg_.mode, cfg_.ridge,
                                   cfg_.koopman);
}

// ---------------------------------------------------------------------------
// Checkpoint state
// ---------------------------------------------------------------------------

namespace {

json vector_to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Vector vector_from_json(const json& arr) {
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
    return rows;
}

Matrix matrix_from_json(const json& rows) {
    const auto r = static_cast<Eigen::Index>(rows.size());
    if (r == 0) return Matrix(0, 0);
    const auto c = static_cast<Eigen::Index>(rows[0].size());
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != c)
            throw IoError("ragged matrix in environment state json");
        m.row(i) = vector_from_json(rows[static_cast<std::size_t>(i)]).transpose();
    }
    return m;
}

}  // namespace

std::string SamplingEnv::state_to_json() const {
    json j;
    j["version"] = 1;
    j["t"] = t_;
    j["next_traj_id"] = next_traj_id_;
    json hist = json::array();
    for (const Vector& p : history_) hist.push_back(vector_to_json(p));
    j["history"] = std::move(hist);
    j["window_ids"] = window_ids_;
    j["last_pool_ids"] = last_pool_ids_;
    json starts = json::array();
    for (const auto& [id, p] : starts_) starts.push_back({id, vector_to_json(p)});
    j["starts"] = std::move(starts);
    j["m_total"] = m_total_;
    j["s_g"] = matrix_to_json(s_g_);
    j["s_h"] = matrix_to_json(s_h_);
    return j.dump();
}

void SamplingEnv::restore_state(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid environment state json: ") + e.what());
    }
    if (j.value("version", 0) != 1) throw IoError("unsupported environment state version");

    t_ = j.at("t").get<long>();
    next_traj_id_ = j.at("next_traj_id").get<long>();
    history_.clear();
    for (const auto& p : j.at("history")) history_.push_back(vector_from_json(p));
    window_ids_.clear();
    for (const auto& id : j.at("window_ids")) window_ids_.push_back(id.get<long>());
    last_pool_ids_.clear();
    for (const auto& id : j.at("last_pool_ids")) last_pool_ids_.push_back(id.get<long>());
    starts_.clear();
    for (const auto& entry : j.at("starts"))
        starts_[entry[0].get<long>()] = vector_from_json(entry[1]);
    m_total_ = j.at("m_total").get<long>();
    s_g_ = matrix_from_json(j.at("s_g"));
    s_h_ = matrix_from_json(j.at("s_h"));
    const auto n = static_cast<Eigen::Index>(cfg_.dictionary->size());
    if (s_g_.rows() != n || s_g_.cols() != n || s_h_.rows() != n || s_h_.cols() != n)
        throw ArchitectureMismatch("environment state Gram sums do not match the dictionary");

    // Rebuild the window view and re-simulate the cached trajectories; the
    // per-id seeds make this bit-identical to the pre-checkpoint state.
    window_ = StateWindow(cfg_.system.dim, cfg_.window_len);
    cache_.clear();
    for (long id : window_ids_) window_.push(starts_.at(id));
    std::set<long> need(window_ids_.begin(), window_ids_.end());
    need.insert(last_pool_ids_.begin(), last_pool_ids_.end());
    for (long id : need) cache_[id] = simulate_id(id, starts_.at(id));
    last_est_.reset();
}

}  // namespace koop
