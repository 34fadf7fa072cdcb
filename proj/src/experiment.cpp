#include "koop/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/rng.hpp"

namespace koop {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::filesystem::path resolve_output_dir(const std::string& output_dir) {
    fs::path p(output_dir);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("KOOP_OUTPUT_ROOT"); root && *root)
        return fs::path(root) / p;
    return p;
}

// ---------------------------------------------------------------------------
// CSV exports
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> axis_names(int d) {
    if (d == 1) return {"x"};
    if (d == 2) return {"x", "y"};
    if (d == 3) return {"x", "y", "z"};
    std::vector<std::string> names;
    for (int a = 0; a < d; ++a) names.push_back("x" + std::to_string(a));
    return names;
}

}  // namespace

std::string export_eigenfunction_grid(const KoopmanEstimate& est, const Dictionary& dict,
                                      const Box& domain, int resolution,
                                      const std::vector<int>& mode_indices) {
    if (resolution < 2) throw InvalidInput("eigenfunction grid needs resolution >= 2");
    const int d = domain.dim();
    if (dict.dim() != d) throw ShapeMismatch("dictionary dimension does not match the domain");
    for (int idx : mode_indices)
        if (idx < 0 || idx >= est.size())
            throw InvalidInput("eigenfunction mode index out of range");

    long total = 1;
    for (int a = 0; a < d; ++a) total *= resolution;
    Matrix points(total, d);
    for (long row = 0; row < total; ++row) {
        long rem = row;
        for (int a = d - 1; a >= 0; --a) {
            const long i = rem % resolution;
            rem /= resolution;
            points(row, a) =
                domain.lo(a) + i * (domain.hi(a) - domain.lo(a)) / (resolution - 1);
        }
    }

    const ComplexMatrix phi = eigenfunction_values(est, dict.evaluate(points));

    std::ostringstream out;
    out << std::setprecision(16);
    const auto names = axis_names(d);
    for (int a = 0; a < d; ++a) out << (a ? "," : "") << names[static_cast<std::size_t>(a)];
    for (std::size_t m = 0; m < mode_indices.size(); ++m)
        out << ",re_phi_" << m << ",im_phi_" << m;
    out << '\n';
    for (long row = 0; row < total; ++row) {
        for (int a = 0; a < d; ++a) out << (a ? "," : "") << points(row, a);
        for (int idx : mode_indices)
            out << ',' << phi(row, idx).real() << ',' << phi(row, idx).imag();
        out << '\n';
    }
    return out.str();
}

std::string reward_map_csv(const BanditAgent& agent, const ActionGrid& grid) {
    if (agent.n_actions() != grid.n_actions())
        throw ShapeMismatch("agent/grid action counts differ");
    const int d = grid.domain().dim();
    std::ostringstream out;
    out << std::setprecision(16);
    out << "action";
    for (int a = 0; a < d; ++a) out << ",i" << a;
    const auto names = axis_names(d);
    for (int a = 0; a < d; ++a) out << ",center_" << names[static_cast<std::size_t>(a)];
    out << ",q,n\n";
    for (int action = 0; action < grid.n_actions(); ++action) {
        out << action;
        for (int c : grid.cell_coords(action)) out << ',' << c;
        const Box cell = grid.cell_box(action);
        for (int a = 0; a < d; ++a) out << ',' << 0.5 * (cell.lo(a) + cell.hi(a));
        out << ',' << agent.q()(action) << ','
            << agent.counts()[static_cast<std::size_t>(action)] << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

json complex_pairs(const std::vector<Complex>& zs) {
    json arr = json::array();
    for (const Complex& z : zs) {
        json pair = json::array();
        if (std::isfinite(z.real())) pair.push_back(z.real());
        else pair.push_back(nullptr);
        if (std::isfinite(z.imag())) pair.push_back(z.imag());
        else pair.push_back(nullptr);
        arr.push_back(std::move(pair));
    }
    return arr;
}

std::string step_log_line(const StepInfo& info) {
    ordered_json line;
    line["step"] = info.step;
    line["action"] = info.action;
    json x = json::array();
    for (Eigen::Index i = 0; i < info.x_new.size(); ++i) x.push_back(info.x_new(i));
    line["x_new"] = std::move(x);
    ordered_json reward;
    reward["r0"] = info.reward.r0;
    reward["consistency"] = info.reward.consistency;
    reward["density"] = info.reward.density;
    reward["bonus"] = info.reward.bonus;
    reward["total"] = info.reward.total;
    reward["diverged"] = info.reward.diverged;
    line["reward"] = std::move(reward);
    line["mu"] = complex_pairs(info.mu);
    line["lambda"] = complex_pairs(info.lambda);
    line["wall_ms"] = info.wall_ms;  // timing last: comparisons strip this key
    return line.dump();
}

/// Drops log lines at or past `from_step` so a resumed run appends exactly
/// where the checkpoint left off.
void truncate_step_log(const fs::path& log_path, long from_step) {
    if (!fs::exists(log_path)) return;
    std::ifstream in(log_path);
    std::vector<std::string> keep;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        long step = -1;
        try {
            step = json::parse(line).value("step", -1L);
        } catch (const json::exception&) {
            break;  // damaged tail; drop the rest
        }
        if (step < 0 || step >= from_step) break;
        keep.push_back(line);
    }
    in.close();
    std::ofstream out(log_path, std::ios::trunc);
    for (const auto& kept : keep) out << kept << '\n';
}

struct AgentHolder {
    std::optional<BanditAgent> bandit;
    std::optional<DqnAgent> dqn;
    std::optional<PpoAgent> ppo;
};

void write_checkpoint(const fs::path& dir, const ExperimentConfig& cfg, const SamplingEnv& env,
                      const AgentHolder& agent, long step) {
    fs::create_directories(dir / "agent");
    fs::create_directories(dir / "dictionary");
    json meta;
    meta["version"] = 1;
    meta["step"] = step;
    meta["agent_kind"] = cfg.agent.kind;
    meta["config"] = json::parse(config_to_json(cfg));
    write_file(dir / "meta.json", meta.dump(2) + "\n");
    write_file(dir / "env_state.json", env.state_to_json());
    write_file(dir / "dictionary" / "dict.json", env.dictionary().to_json());
    if (agent.bandit) write_file(dir / "agent" / "bandit.csv", agent.bandit->to_csv());
    if (agent.dqn) write_file(dir / "agent" / "dqn.json", agent.dqn->to_json());
    if (agent.ppo) write_file(dir / "agent" / "ppo.json", agent.ppo->to_json());
}

void export_artifacts(const fs::path& run_dir, const ExperimentConfig& cfg,
                      const SamplingEnv& env, const AgentHolder& agent, long step,
                      const std::string& suffix) {
    if (agent.bandit)
        write_file(run_dir / ("rewardmap_step" + suffix + ".csv"),
                   reward_map_csv(*agent.bandit, env.grid()));
    KoopmanEstimate est;
    try {
        est = env.cumulative_estimate();
    } catch (const Error&) {
        return;  // nothing estimable yet (all trajectories diverged or t = 0)
    }
    const fs::path eig_path = run_dir / "eigenvalues.csv";
    const bool fresh = !fs::exists(eig_path);
    std::ofstream eig(eig_path, std::ios::app);
    eig << eigenvalue_csv_rows(est, step, cfg.reward.n_modes, fresh);
    eig.close();
    write_file(run_dir / ("eigfuns_step" + suffix + ".csv"),
               export_eigenfunction_grid(est, env.dictionary(), *cfg.grid.domain,
                                         cfg.run.eigfun_resolution,
                                         est.retained(cfg.reward.n_modes)));
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg_in, const std::string& resume_checkpoint) {
    ExperimentConfig cfg = cfg_in;
    resolve_config(cfg);  // idempotent; also validates hand-built configs

    const fs::path run_dir = resolve_output_dir(cfg.run.output_dir);
    fs::create_directories(run_dir);
    const fs::path log_path = run_dir / "step_log.jsonl";

    EnvConfig env_cfg = make_env_config(cfg);
    const fs::path ckpt(resume_checkpoint);
    if (!resume_checkpoint.empty()) {
        // The checkpointed dictionary wins: a trainable one has drifted from
        // its seed initialization.
        env_cfg.dictionary =
            std::shared_ptr<Dictionary>(dictionary_from_json(read_file(ckpt / "dictionary" / "dict.json")));
        if (env_cfg.dictionary->dim() != env_cfg.system.dim)
            throw ArchitectureMismatch("checkpoint dictionary dimension mismatch");
    }
    SamplingEnv env(std::move(env_cfg));

    AgentHolder agent;
    const int n_actions = env.grid().n_actions();
    const int state_dim = env.window().dim() * std::max(1, cfg.agent.window_len);
    if (cfg.agent.kind == "bandit")
        agent.bandit.emplace(n_actions, cfg.agent.epsilon, cfg.agent.q_init);
    else if (cfg.agent.kind == "dqn")
        agent.dqn.emplace(state_dim, n_actions, cfg.agent.dqn, cfg.run.seed);
    else
        agent.ppo.emplace(state_dim, n_actions, cfg.agent.ppo, cfg.run.seed);

    long start_step = 0;
    if (!resume_checkpoint.empty()) {
        json meta;
        try {
            meta = json::parse(read_file(ckpt / "meta.json"));
        } catch (const json::exception& e) {
            throw IoError(std::string("invalid checkpoint meta: ") + e.what());
        }
        if (meta.value("version", 0) != 1) throw IoError("unsupported checkpoint version");
        if (meta.value("agent_kind", "") != cfg.agent.kind)
            throw ConfigError("checkpoint agent kind does not match the config");
        start_step = meta.at("step").get<long>();
        env.restore_state(read_file(ckpt / "env_state.json"));
        if (env.step_count() != start_step)
            throw IoError("checkpoint env state does not match its meta step");
        if (agent.bandit)
            agent.bandit = BanditAgent::from_csv(read_file(ckpt / "agent" / "bandit.csv"),
                                                 cfg.agent.epsilon, cfg.agent.q_init);
        if (agent.dqn) agent.dqn = DqnAgent::from_json(read_file(ckpt / "agent" / "dqn.json"));
        if (agent.ppo) agent.ppo = PpoAgent::from_json(read_file(ckpt / "agent" / "ppo.json"));
        truncate_step_log(log_path, start_step);
    } else {
        write_file(run_dir / "resolved_config.json", config_to_json(cfg));
        std::ofstream(log_path, std::ios::trunc);          // fresh log
        std::error_code ec;
        fs::remove(run_dir / "eigenvalues.csv", ec);       // appended-to below
    }

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw IoError("cannot open step log for writing");

    RunResult result;
    result.run_dir = run_dir;
    result.steps = start_step;

    for (long t = start_step; t < cfg.run.t_max; ++t) {
        int action = 0;
        PpoStepData pdata;
        Vector state;
        {
            auto sel = rng::engine(cfg.run.seed, rng::Stream::AgentSelect,
                                   static_cast<std::uint64_t>(t));
            if (agent.bandit) {
                action = agent.bandit->select(sel);
            } else if (agent.dqn) {
                state = env.window().flattened();
                action = agent.dqn->select(state, t, sel);
            } else {
                state = env.window().flattened();
                pdata = agent.ppo->act(state, sel);
                action = pdata.action;
            }
        }

        const StepInfo info = env.step(action);

        if (agent.bandit) {
            agent.bandit->update(action, info.reward.total);
        } else if (agent.dqn) {
            agent.dqn->observe(Transition{state, action, info.reward.total,
                                          env.window().flattened()});
            if (agent.dqn->ready()) {
                auto sample = rng::engine(cfg.run.seed, rng::Stream::ReplaySample,
                                          static_cast<std::uint64_t>(t));
                agent.dqn->update(sample);
            }
        } else {
            agent.ppo->observe(PpoTransition{state, action, pdata.logprob, pdata.value,
                                             info.reward.total, env.window().flattened()});
            if (agent.ppo->batch_ready()) {
                auto shuffle = rng::engine(cfg.run.seed, rng::Stream::PpoShuffle,
                                           static_cast<std::uint64_t>(t));
                agent.ppo->update(shuffle);
            }
        }

        log << step_log_line(info) << '\n';
        log.flush();
        if (info.reward.diverged) ++result.diverged_steps;
        result.final_reward = info.reward.total;
        result.steps = t + 1;

        const long done = t + 1;
        if (std::binary_search(cfg.run.export_steps.begin(), cfg.run.export_steps.end(), done))
            export_artifacts(run_dir, cfg, env, agent, done, std::to_string(done));
        if (cfg.run.checkpoint_every > 0 && done % cfg.run.checkpoint_every == 0)
            write_checkpoint(run_dir / "checkpoints" / ("step_" + std::to_string(done)), cfg,
                             env, agent, done);
    }

    // Final artifacts regardless of cadence.
    write_checkpoint(run_dir / "checkpoints" / ("step_" + std::to_string(cfg.run.t_max)), cfg,
                     env, agent, cfg.run.t_max);
    if (cfg.run.t_max > 0 &&
        !std::binary_search(cfg.run.export_steps.begin(), cfg.run.export_steps.end(),
                            cfg.run.t_max))
        export_artifacts(run_dir, cfg, env, agent, cfg.run.t_max, "_final");
    return result;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

/// Central finite-difference check of dLoss/dW for a quadratic loss on a
/// small batch; probes a handful of entries per layer.
double weight_gradcheck(Mlp& net, std::uint64_t seed) {
    auto gen = rng::engine(seed, rng::Stream::Generic, 7);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int batch = 4;
    Matrix input(batch, net.input_dim());
    Matrix target(batch, net.output_dim());
    for (Eigen::Index r = 0; r < input.rows(); ++r) {
        for (Eigen::Index c = 0; c < input.cols(); ++c) input(r, c) = normal(gen);
        for (Eigen::Index c = 0; c < target.cols(); ++c) target(r, c) = normal(gen);
    }
    const auto loss_of = [&]() {
        const Matrix out = net.forward_const(input);
        return (out - target).squaredNorm() / static_cast<double>(batch);
    };
    const Matrix out = net.forward(input);
    const Matrix loss_grad = 2.0 * (out - target) / static_cast<double>(batch);
    const MlpGradients grads = net.backward(loss_grad);

    double max_rel = 0.0;
    const double h = 1e-6;
    std::uniform_int_distribution<Eigen::Index> any;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        Matrix& w = net.weights()[l];
        for (int probe = 0; probe < 3; ++probe) {
            const Eigen::Index r = any(gen) % w.rows();
            const Eigen::Index c = any(gen) % w.cols();
            const double saved = w(r, c);
            w(r, c) = saved + h;
            const double up = loss_of();
            w(r, c) = saved - h;
            const double down = loss_of();
            w(r, c) = saved;
            const double fd = (up - down) / (2.0 * h);
            const double an = grads.weights[l](r, c);
            max_rel = std::max(max_rel, std::abs(an - fd) / (1.0 + std::abs(an)));
        }
        Vector& bvec = net.biases()[l];
        const Eigen::Index i = any(gen) % bvec.size();
        const double saved = bvec(i);
        bvec(i) = saved + h;
        const double up = loss_of();
        bvec(i) = saved - h;
        const double down = loss_of();
        bvec(i) = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = grads.biases[l](i);
        max_rel = std::max(max_rel, std::abs(an - fd) / (1.0 + std::abs(an)));
    }
    return max_rel;
}

}  // namespace

GradcheckReport run_gradcheck() {
    GradcheckReport report;
    std::ostringstream text;
    text << std::setprecision(3);
    const std::vector<std::vector<int>> archs = {{8}, {16, 16}, {8, 8, 8}};
    for (std::size_t ai = 0; ai < archs.size(); ++ai) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const std::uint64_t net_seed = rng::substream(seed, rng::Stream::NetInit, ai);
            std::vector<int> sizes;
            sizes.push_back(2);
            for (int width : archs[ai]) sizes.push_back(width);
            sizes.push_back(3);
            Mlp net(sizes, Activation::Tanh, net_seed);
            const double weight_err = weight_gradcheck(net, seed);

            TrainableDictionary dict(2, archs[ai], 4, net_seed);
            auto gen = rng::engine(seed, rng::Stream::Generic, 11 + ai);
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            double input_err = 0.0;
            for (int rep = 0; rep < 3; ++rep) {
                Vector point(2);
                point << unit(gen), unit(gen);
                input_err = std::max(input_err, derivative_check(dict, point).max_rel_err());
            }
            const double case_err = std::max(weight_err, input_err);
            report.max_rel_err = std::max(report.max_rel_err, case_err);
            text << "arch=";
            for (std::size_t i = 0; i < archs[ai].size(); ++i)
                text << (i ? "x" : "") << archs[ai][i];
            text << " seed=" << seed << " weight_grad_err=" << weight_err
                 << " input_deriv_err=" << input_err << '\n';
        }
    }
    // Analytic dictionaries against the same finite-difference oracle.
    for (const char* kind : {"rbf", "monomial", "hermite"}) {
        std::unique_ptr<Dictionary> dict;
        Box box = Box::make({-1.0, -1.0}, {1.0, 1.0});
        if (std::string(kind) == "rbf") dict = make_rbf_grid(box, 3, 0.5);
        else if (std::string(kind) == "monomial") dict = std::make_unique<MonomialDictionary>(2, 3);
        else dict = std::make_unique<HermiteDictionary>(2, 3);
        Vector point(2);
        point << 0.37, -0.61;
        const double err = derivative_check(*dict, point).max_rel_err();
        report.max_rel_err = std::max(report.max_rel_err, err);
        text << "dict=" << kind << " deriv_err=" << err << '\n';
    }
    report.pass = report.max_rel_err < 1e-4;
    text << "max_rel_err=" << report.max_rel_err << " => "
         << (report.pass ? "PASS" : "FAIL") << '\n';
    report.text = text.str();
    return report;
}

}  // namespace koop
