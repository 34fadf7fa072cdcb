#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "koop/config.hpp"
#include "koop/errors.hpp"
#include "koop/experiment.hpp"
#include "koop/regret.hpp"
#include "koop/sde.hpp"

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw koop::IoError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<double> parse_csv_doubles(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string field;
    while (std::getline(in, field, ',')) {
        try {
            out.push_back(std::stod(field));
        } catch (const std::exception&) {
            throw koop::ConfigError("cannot parse '" + field + "' as a number");
        }
    }
    if (out.empty()) throw koop::ConfigError("expected a comma-separated number list");
    return out;
}

int do_run(const std::string& config_path, long seed_override, bool seed_given,
           const std::string& resume) {
    koop::ExperimentConfig cfg = koop::load_config_file(config_path);
    if (seed_given) cfg.run.seed = static_cast<std::uint64_t>(seed_override);
    const koop::RunResult result = koop::run_experiment(cfg, resume);
    json out;
    out["run_dir"] = result.run_dir.string();
    out["steps"] = result.steps;
    out["diverged_steps"] = result.diverged_steps;
    out["final_reward"] = result.final_reward;
    std::cout << out.dump() << '\n';
    return 0;
}

int do_regret(const std::string& arms_csv, double eps, long horizon, double c, long seed,
              const std::string& out_path) {
    const auto arms = parse_csv_doubles(arms_csv);
    koop::RegretSpec spec;
    spec.true_means = Eigen::Map<const koop::Vector>(arms.data(),
                                                     static_cast<Eigen::Index>(arms.size()));
    spec.eps_sdmd = eps;
    spec.horizon = horizon;
    spec.c = c;
    const koop::RegretResult result =
        koop::run_regret_experiment(spec, static_cast<std::uint64_t>(seed));
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw koop::IoError("cannot write '" + out_path + "'");
        out << koop::regret_csv(result);
    }
    const koop::RegretSummary& s = result.summary;
    json summary;
    summary["final_regret"] = s.final_regret;
    summary["first_decade_rate"] = s.first_decade_rate;
    summary["last_decade_rate"] = s.last_decade_rate;
    summary["last_half_slope"] = s.last_half_slope;
    summary["last_half_r2"] = s.last_half_r2;
    summary["log_fit_coeff"] = s.log_fit_coeff;
    summary["log_fit_r2"] = s.log_fit_r2;
    summary["delta_min"] = s.delta_min;
    summary["gap_holds"] = s.gap_holds;
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int do_export(const std::string& checkpoint, const std::string& what) {
    const json meta = [&] {
        try {
            return json::parse(read_file(checkpoint + "/meta.json"));
        } catch (const json::exception& e) {
            throw koop::IoError(std::string("invalid checkpoint meta: ") + e.what());
        }
    }();
    if (meta.value("version", 0) != 1) throw koop::IoError("unsupported checkpoint version");
    const long step = meta.at("step").get<long>();
    koop::ExperimentConfig cfg = koop::parse_config(meta.at("config").dump());
    koop::resolve_config(cfg);

    if (what == "rewardmap") {
        if (cfg.agent.kind != "bandit")
            throw koop::ConfigError("rewardmap export needs a bandit checkpoint");
        const koop::BanditAgent agent = koop::BanditAgent::from_csv(
            read_file(checkpoint + "/agent/bandit.csv"), cfg.agent.epsilon, cfg.agent.q_init);
        const koop::ActionGrid grid(*cfg.grid.domain, cfg.grid.k);
        std::cout << koop::reward_map_csv(agent, grid);
        return 0;
    }

    koop::EnvConfig env_cfg = koop::make_env_config(cfg);
    env_cfg.dictionary = std::shared_ptr<koop::Dictionary>(
        koop::dictionary_from_json(read_file(checkpoint + "/dictionary/dict.json")));
    koop::SamplingEnv env(std::move(env_cfg));
    env.restore_state(read_file(checkpoint + "/env_state.json"));
    const koop::KoopmanEstimate est = env.cumulative_estimate();
    if (what == "eigvals") {
        std::cout << koop::eigenvalue_csv_rows(est, step, cfg.reward.n_modes, true);
        return 0;
    }
    if (what == "eigfuns") {
        std::cout << koop::export_eigenfunction_grid(est, env.dictionary(), *cfg.grid.domain,
                                                     cfg.run.eigfun_resolution,
                                                     est.retained(cfg.reward.n_modes));
        return 0;
    }
    throw koop::ConfigError("--what must be eigvals, eigfuns, or rewardmap");
}

int do_simulate(const std::string& system, const std::string& x0_csv, long steps, double dt,
                long seed) {
    const koop::SdeSystem sys = koop::builtin_system(system);
    const auto coords = parse_csv_doubles(x0_csv);
    if (static_cast<int>(coords.size()) != sys.dim)
        throw koop::ConfigError("--x0 needs " + std::to_string(sys.dim) + " coordinates for " +
                                system);
    koop::Vector x0 =
        Eigen::Map<const koop::Vector>(coords.data(), static_cast<Eigen::Index>(coords.size()));
    const koop::SnapshotData data =
        koop::simulate_trajectory(sys, x0, steps, dt, static_cast<std::uint64_t>(seed));
    std::cout << std::setprecision(16);
    for (int a = 0; a < sys.dim; ++a) std::cout << (a ? "," : "") << "x" << a;
    for (int a = 0; a < sys.dim; ++a) std::cout << ",y" << a;
    std::cout << '\n';
    for (long r = 0; r < data.rows(); ++r) {
        for (int a = 0; a < sys.dim; ++a) std::cout << (a ? "," : "") << data.x(r, a);
        for (int a = 0; a < sys.dim; ++a) std::cout << ',' << data.y(r, a);
        std::cout << '\n';
    }
    return 0;
}

int do_gradcheck() {
    const koop::GradcheckReport report = koop::run_gradcheck();
    std::cout << report.text;
    return report.pass ? 0 : 2;
}

int do_validate(const std::string& config_path) {
    const koop::ExperimentConfig cfg = koop::load_config_file(config_path);
    std::cout << koop::config_to_json(cfg);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reinforcement-learning-guided spectral estimation of stochastic dynamics"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a config file");
    std::string run_config, run_resume;
    long run_seed = 0;
    run->add_option("--config", run_config, "Experiment config (json)")->required();
    auto* seed_opt = run->add_option("--seed", run_seed, "Override run.seed");
    run->add_option("--resume", run_resume, "Checkpoint directory to resume from");

    auto* regret = app.add_subcommand("regret", "Noisy-estimator bandit regret experiment");
    std::string regret_arms = "1.0,0.5", regret_out;
    double regret_eps = 0.1, regret_c = -1.0;
    long regret_T = 100000, regret_seed = 0;
    regret->add_option("--arms", regret_arms, "True arm means, comma separated")->required();
    regret->add_option("--eps", regret_eps, "Uniform estimator noise bound")->required();
    regret->add_option("--horizon", regret_T, "Steps (>= 1000)")->required();
    regret->add_option("--c", regret_c, "Schedule constant (default: arm count)");
    regret->add_option("--seed", regret_seed, "Base seed");
    regret->add_option("--out", regret_out, "Write the full regret curve CSV here");

    auto* exp = app.add_subcommand("export", "Re-export artifacts from a checkpoint");
    std::string exp_ckpt, exp_what;
    exp->add_option("--checkpoint", exp_ckpt, "Checkpoint directory")->required();
    exp->add_option("--what", exp_what, "eigvals | eigfuns | rewardmap")->required();

    auto* sim = app.add_subcommand("simulate", "Dump one trajectory as CSV");
    std::string sim_system, sim_x0;
    long sim_steps = 1000, sim_seed = 0;
    double sim_dt = 0.01;
    sim->add_option("--system", sim_system, "double_well | duffing | fhn | ou")->required();
    sim->add_option("--x0", sim_x0, "Initial state, comma separated")->required();
    sim->add_option("--steps", sim_steps, "Number of steps")->required();
    sim->add_option("--dt", sim_dt, "Step size");
    sim->add_option("--seed", sim_seed, "Noise seed");

    app.add_subcommand("gradcheck", "Verify analytic derivatives against finite differences");

    auto* validate = app.add_subcommand("validate-config", "Schema-check a config file");
    std::string validate_path;
    validate->add_option("config", validate_path, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // bad usage is a config error
    }

    try {
        if (app.got_subcommand("run"))
            return do_run(run_config, run_seed, seed_opt->count() > 0, run_resume);
        if (app.got_subcommand("regret"))
            return do_regret(regret_arms, regret_eps, regret_T, regret_c, regret_seed,
                             regret_out);
        if (app.got_subcommand("export")) return do_export(exp_ckpt, exp_what);
        if (app.got_subcommand("simulate"))
            return do_simulate(sim_system, sim_x0, sim_steps, sim_dt, sim_seed);
        if (app.got_subcommand("gradcheck")) return do_gradcheck();
        if (app.got_subcommand("validate-config")) return do_validate(validate_path);
    } catch (const koop::ConfigError& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
        return 1;
    } catch (const koop::Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: Unhandled: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
