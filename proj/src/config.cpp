#include "koop/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/rng.hpp"
#include "koop/sdmd.hpp"

namespace koop {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("'" + path + "' must be a json object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return key == k; }) == allowed.end())
            throw ConfigError("unknown config key '" + path + "." + key + "'");
    }
}

template <typename T>
void read_to(const json& obj, const char* key, const std::string& path, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + path + "." + key + "' has the wrong type");
    }
}

Box box_from_json(const json& obj, const std::string& path) {
    check_keys(obj, path, {"lo", "hi"});
    std::vector<double> lo, hi;
    read_to(obj, "lo", path, lo);
    read_to(obj, "hi", path, hi);
    if (lo.empty() || lo.size() != hi.size())
        throw ConfigError("'" + path + "' needs matching non-empty lo/hi arrays");
    Vector vlo(static_cast<Eigen::Index>(lo.size())), vhi(static_cast<Eigen::Index>(hi.size()));
    for (std::size_t i = 0; i < lo.size(); ++i) {
        vlo(static_cast<Eigen::Index>(i)) = lo[i];
        vhi(static_cast<Eigen::Index>(i)) = hi[i];
        if (!(lo[i] < hi[i])) throw ConfigError("'" + path + "' needs lo < hi per axis");
    }
    return Box{vlo, vhi};
}

json box_to_json(const Box& box) {
    json j;
    json lo = json::array(), hi = json::array();
    for (int a = 0; a < box.dim(); ++a) {
        lo.push_back(box.lo(a));
        hi.push_back(box.hi(a));
    }
    j["lo"] = std::move(lo);
    j["hi"] = std::move(hi);
    return j;
}

void parse_system(const json& obj, SystemConfig& out) {
    check_keys(obj, "system", {"name", "params", "dt", "n_steps"});
    read_to(obj, "name", "system", out.name);
    if (obj.contains("params")) {
        if (!obj.at("params").is_object())
            throw ConfigError("'system.params' must be an object of numbers");
        for (const auto& [key, value] : obj.at("params").items()) {
            if (!value.is_number())
                throw ConfigError("config key 'system.params." + key + "' must be a number");
            out.params[key] = value.get<double>();
        }
    }
    read_to(obj, "dt", "system", out.dt);
    read_to(obj, "n_steps", "system", out.n_steps);
}

void parse_grid(const json& obj, GridConfig& out) {
    check_keys(obj, "grid", {"k", "domain"});
    read_to(obj, "k", "grid", out.k);
    if (obj.contains("domain")) out.domain = box_from_json(obj.at("domain"), "grid.domain");
}

void parse_dictionary(const json& obj, DictionaryConfig& out) {
    check_keys(obj, "dictionary",
               {"kind", "centers_per_axis", "bandwidth", "degree", "hidden", "outputs",
                "generator_mode", "ridge"});
    read_to(obj, "kind", "dictionary", out.kind);
    read_to(obj, "centers_per_axis", "dictionary", out.centers_per_axis);
    read_to(obj, "bandwidth", "dictionary", out.bandwidth);
    read_to(obj, "degree", "dictionary", out.degree);
    read_to(obj, "hidden", "dictionary", out.hidden);
    read_to(obj, "outputs", "dictionary", out.outputs);
    read_to(obj, "generator_mode", "dictionary", out.generator_mode);
    read_to(obj, "ridge", "dictionary", out.ridge);
}

void parse_dqn(const json& obj, DqnConfig& out) {
    check_keys(obj, "agent.dqn",
               {"hidden", "activation", "lr", "gamma", "tau", "eps_start", "eps_end",
                "eps_decay", "replay_capacity", "batch", "learn_start", "grad_clip",
                "huber_delta"});
    read_to(obj, "hidden", "agent.dqn", out.hidden);
    if (obj.contains("activation")) {
        std::string name;
        read_to(obj, "activation", "agent.dqn", name);
        out.activation = activation_from_name(name);
    }
    read_to(obj, "lr", "agent.dqn", out.lr);
    read_to(obj, "gamma", "agent.dqn", out.gamma);
    read_to(obj, "tau", "agent.dqn", out.tau);
    read_to(obj, "eps_start", "agent.dqn", out.eps_start);
    read_to(obj, "eps_end", "agent.dqn", out.eps_end);
    read_to(obj, "eps_decay", "agent.dqn", out.eps_decay);
    read_to(obj, "replay_capacity", "agent.dqn", out.replay_capacity);
    read_to(obj, "batch", "agent.dqn", out.batch);
    read_to(obj, "learn_start", "agent.dqn", out.learn_start);
    read_to(obj, "grad_clip", "agent.dqn", out.grad_clip);
    read_to(obj, "huber_delta", "agent.dqn", out.huber_delta);
}

void parse_ppo(const json& obj, PpoConfig& out) {
    check_keys(obj, "agent.ppo",
               {"hidden", "actor_lr", "critic_lr", "gamma", "gae_lambda", "clip_eps",
                "epochs_k", "batch_n", "minibatch", "normalize_advantages"});
    read_to(obj, "hidden", "agent.ppo", out.hidden);
    read_to(obj, "actor_lr", "agent.ppo", out.actor_lr);
    read_to(obj, "critic_lr", "agent.ppo", out.critic_lr);
    read_to(obj, "gamma", "agent.ppo", out.gamma);
    read_to(obj, "gae_lambda", "agent.ppo", out.gae_lambda);
    read_to(obj, "clip_eps", "agent.ppo", out.clip_eps);
    read_to(obj, "epochs_k", "agent.ppo", out.epochs_k);
    read_to(obj, "batch_n", "agent.ppo", out.batch_n);
    read_to(obj, "minibatch", "agent.ppo", out.minibatch);
    read_to(obj, "normalize_advantages", "agent.ppo", out.normalize_advantages);
}

void parse_agent(const json& obj, AgentBlock& out) {
    check_keys(obj, "agent", {"kind", "epsilon", "q_init", "window_len", "dqn", "ppo"});
    read_to(obj, "kind", "agent", out.kind);
    read_to(obj, "epsilon", "agent", out.epsilon);
    read_to(obj, "q_init", "agent", out.q_init);
    read_to(obj, "window_len", "agent", out.window_len);
    if (obj.contains("dqn")) parse_dqn(obj.at("dqn"), out.dqn);
    if (obj.contains("ppo")) parse_ppo(obj.at("ppo"), out.ppo);
}

void parse_reward(const json& obj, RewardConfig& out) {
    check_keys(obj, "reward",
               {"r0", "alpha_exp", "eps_kde", "kde_bandwidth", "n_modes", "floor"});
    read_to(obj, "r0", "reward", out.r0);
    read_to(obj, "alpha_exp", "reward", out.alpha_exp);
    read_to(obj, "eps_kde", "reward", out.eps_kde);
    read_to(obj, "kde_bandwidth", "reward", out.kde_bandwidth);
    read_to(obj, "n_modes", "reward", out.n_modes);
    read_to(obj, "floor", "reward", out.floor);
}

void parse_train(const json& obj, TrainBlock& out) {
    check_keys(obj, "train", {"enabled", "epochs", "gamma", "batch", "lr"});
    read_to(obj, "enabled", "train", out.enabled);
    read_to(obj, "epochs", "train", out.epochs);
    read_to(obj, "gamma", "train", out.gamma);
    read_to(obj, "batch", "train", out.batch);
    read_to(obj, "lr", "train", out.lr);
}

void parse_run(const json& obj, RunBlock& out) {
    check_keys(obj, "run",
               {"t_max", "seed", "output_dir", "checkpoint_every", "export_steps",
                "eigfun_resolution"});
    read_to(obj, "t_max", "run", out.t_max);
    read_to(obj, "seed", "run", out.seed);
    read_to(obj, "output_dir", "run", out.output_dir);
    read_to(obj, "checkpoint_every", "run", out.checkpoint_every);
    read_to(obj, "export_steps", "run", out.export_steps);
    read_to(obj, "eigfun_resolution", "run", out.eigfun_resolution);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid json: ") + e.what());
    }
    check_keys(j, "$",
               {"version", "system", "grid", "dictionary", "agent", "reward", "train", "run"});
    int version = 1;
    read_to(j, "version", "$", version);
    if (version != 1) throw ConfigError("unsupported config version");
    if (!j.contains("system")) throw ConfigError("missing required 'system' block");

    ExperimentConfig cfg;
    parse_system(j.at("system"), cfg.system);
    if (j.contains("grid")) parse_grid(j.at("grid"), cfg.grid);
    if (j.contains("dictionary")) parse_dictionary(j.at("dictionary"), cfg.dictionary);
    if (j.contains("agent")) parse_agent(j.at("agent"), cfg.agent);
    if (j.contains("reward")) parse_reward(j.at("reward"), cfg.reward);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("run")) parse_run(j.at("run"), cfg.run);
    return cfg;
}

void resolve_config(ExperimentConfig& cfg) {
    // System: instantiating validates the name and parameter keys; the full
    // merged parameter map is written back for the resolved emission.
    SdeSystem system = builtin_system(cfg.system.name, cfg.system.params);
    auto full = builtin_system_defaults(cfg.system.name);
    for (const auto& [key, value] : cfg.system.params) full[key] = value;
    cfg.system.params = std::move(full);
    if (!(cfg.system.dt > 0.0)) throw ConfigError("system.dt must be positive");
    if (cfg.system.n_steps < 1) throw ConfigError("system.n_steps must be >= 1");

    if (cfg.grid.k < 1) throw ConfigError("grid.k must be >= 1");
    if (!cfg.grid.domain) cfg.grid.domain = system.domain;
    if (cfg.grid.domain->dim() != system.dim)
        throw ConfigError("grid.domain dimension does not match the system");

    const std::string& kind = cfg.dictionary.kind;
    if (kind != "rbf" && kind != "monomial" && kind != "hermite" && kind != "trainable")
        throw ConfigError("dictionary.kind must be rbf, monomial, hermite, or trainable");
    if (kind == "rbf") {
        if (cfg.dictionary.centers_per_axis < 1)
            throw ConfigError("dictionary.centers_per_axis must be >= 1");
        if (cfg.dictionary.bandwidth <= 0.0)
            cfg.dictionary.bandwidth =
                (cfg.grid.domain->widths() / cfg.dictionary.centers_per_axis).mean();
    }
    if ((kind == "monomial" || kind == "hermite") && cfg.dictionary.degree < 0)
        throw ConfigError("dictionary.degree must be nonnegative");
    if (kind == "trainable" && cfg.dictionary.outputs < 1)
        throw ConfigError("dictionary.outputs must be >= 1");
    if (cfg.dictionary.generator_mode != "analytic" &&
        cfg.dictionary.generator_mode != "finite_diff")
        throw ConfigError("dictionary.generator_mode must be analytic or finite_diff");

    const std::string& agent = cfg.agent.kind;
    if (agent != "bandit" && agent != "dqn" && agent != "ppo")
        throw ConfigError("agent.kind must be bandit, dqn, or ppo");
    if (cfg.agent.epsilon < 0.0 || cfg.agent.epsilon > 1.0)
        throw ConfigError("agent.epsilon must lie in [0, 1]");
    if (cfg.agent.window_len < 0) cfg.agent.window_len = agent == "bandit" ? 0 : 5;
    if (agent != "bandit" && cfg.agent.window_len < 1)
        throw ConfigError("dqn/ppo agents need agent.window_len >= 1");

    if (!(cfg.reward.eps_kde > 0.0)) throw ConfigError("reward.eps_kde must be positive");
    if (cfg.reward.kde_bandwidth <= 0.0)
        cfg.reward.kde_bandwidth = cfg.grid.domain->diagonal() / (2.0 * cfg.grid.k);

    if (cfg.train.enabled && kind != "trainable")
        throw ConfigError("train.enabled requires dictionary.kind = trainable");
    if (cfg.train.enabled && cfg.train.epochs < 1)
        throw ConfigError("train.epochs must be >= 1 when training is enabled");

    if (cfg.run.t_max < 0) throw ConfigError("run.t_max must be nonnegative");
    if (cfg.run.checkpoint_every < 0) throw ConfigError("run.checkpoint_every must be >= 0");
    if (cfg.run.eigfun_resolution < 2)
        throw ConfigError("run.eigfun_resolution must be >= 2");
    if (cfg.run.output_dir.empty()) throw ConfigError("run.output_dir must be non-empty");
    for (long s : cfg.run.export_steps)
        if (s < 1) throw ConfigError("run.export_steps entries must be >= 1");
    std::sort(cfg.run.export_steps.begin(), cfg.run.export_steps.end());
    cfg.run.export_steps.erase(
        std::unique(cfg.run.export_steps.begin(), cfg.run.export_steps.end()),
        cfg.run.export_steps.end());

    cfg.resolved = true;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    ExperimentConfig cfg = parse_config(buf.str());
    resolve_config(cfg);
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["version"] = 1;

    json system;
    system["name"] = cfg.system.name;
    system["params"] = cfg.system.params;
    system["dt"] = cfg.system.dt;
    system["n_steps"] = cfg.system.n_steps;
    j["system"] = std::move(system);

    json grid;
    grid["k"] = cfg.grid.k;
    if (cfg.grid.domain) grid["domain"] = box_to_json(*cfg.grid.domain);
    j["grid"] = std::move(grid);

    json dict;
    dict["kind"] = cfg.dictionary.kind;
    dict["centers_per_axis"] = cfg.dictionary.centers_per_axis;
    dict["bandwidth"] = cfg.dictionary.bandwidth;
    dict["degree"] = cfg.dictionary.degree;
    dict["hidden"] = cfg.dictionary.hidden;
    dict["outputs"] = cfg.dictionary.outputs;
    dict["generator_mode"] = cfg.dictionary.generator_mode;
    dict["ridge"] = cfg.dictionary.ridge;
    j["dictionary"] = std::move(dict);

    json agent;
    agent["kind"] = cfg.agent.kind;
    agent["epsilon"] = cfg.agent.epsilon;
    agent["q_init"] = cfg.agent.q_init;
    agent["window_len"] = cfg.agent.window_len;
    json dqn;
    dqn["hidden"] = cfg.agent.dqn.hidden;
    dqn["activation"] = activation_name(cfg.agent.dqn.activation);
    dqn["lr"] = cfg.agent.dqn.lr;
    dqn["gamma"] = cfg.agent.dqn.gamma;
    dqn["tau"] = cfg.agent.dqn.tau;
    dqn["eps_start"] = cfg.agent.dqn.eps_start;
    dqn["eps_end"] = cfg.agent.dqn.eps_end;
    dqn["eps_decay"] = cfg.agent.dqn.eps_decay;
    dqn["replay_capacity"] = cfg.agent.dqn.replay_capacity;
    dqn["batch"] = cfg.agent.dqn.batch;
    dqn["learn_start"] = cfg.agent.dqn.learn_start;
    dqn["grad_clip"] = cfg.agent.dqn.grad_clip;
    dqn["huber_delta"] = cfg.agent.dqn.huber_delta;
    agent["dqn"] = std::move(dqn);
    json ppo;
    ppo["hidden"] = cfg.agent.ppo.hidden;
    ppo["actor_lr"] = cfg.agent.ppo.actor_lr;
    ppo["critic_lr"] = cfg.agent.ppo.critic_lr;
    ppo["gamma"] = cfg.agent.ppo.gamma;
    ppo["gae_lambda"] = cfg.agent.ppo.gae_lambda;
    ppo["clip_eps"] = cfg.agent.ppo.clip_eps;
    ppo["epochs_k"] = cfg.agent.ppo.epochs_k;
    ppo["batch_n"] = cfg.agent.ppo.batch_n;
    ppo["minibatch"] = cfg.agent.ppo.minibatch;
    ppo["normalize_advantages"] = cfg.agent.ppo.normalize_advantages;
    agent["ppo"] = std::move(ppo);
    j["agent"] = std::move(agent);

    json reward;
    reward["r0"] = cfg.reward.r0;
    reward["alpha_exp"] = cfg.reward.alpha_exp;
    reward["eps_kde"] = cfg.reward.eps_kde;
    reward["kde_bandwidth"] = cfg.reward.kde_bandwidth;
    reward["n_modes"] = cfg.reward.n_modes;
    reward["floor"] = cfg.reward.floor;
    j["reward"] = std::move(reward);

    json train;
    train["enabled"] = cfg.train.enabled;
    train["epochs"] = cfg.train.epochs;
    train["gamma"] = cfg.train.gamma;
    train["batch"] = cfg.train.batch;
    train["lr"] = cfg.train.lr;
    j["train"] = std::move(train);

    json run;
    run["t_max"] = cfg.run.t_max;
    run["seed"] = cfg.run.seed;
    run["output_dir"] = cfg.run.output_dir;
    run["checkpoint_every"] = cfg.run.checkpoint_every;
    run["export_steps"] = cfg.run.export_steps;
    run["eigfun_resolution"] = cfg.run.eigfun_resolution;
    j["run"] = std::move(run);

    return j.dump(2) + "\n";
}

SdeSystem make_system(const ExperimentConfig& cfg) {
    if (!cfg.resolved) throw ConfigError("config must be resolved first");
    return builtin_system(cfg.system.name, cfg.system.params);
}

std::shared_ptr<Dictionary> make_dictionary(const ExperimentConfig& cfg) {
    if (!cfg.resolved) throw ConfigError("config must be resolved first");
    const Box& domain = *cfg.grid.domain;
    const DictionaryConfig& d = cfg.dictionary;
    if (d.kind == "rbf")
        return std::shared_ptr<Dictionary>(
            make_rbf_grid(domain, d.centers_per_axis, d.bandwidth));
    if (d.kind == "monomial")
        return std::make_shared<MonomialDictionary>(domain.dim(), d.degree);
    if (d.kind == "hermite")
        return std::make_shared<HermiteDictionary>(domain.dim(), d.degree);
    return std::make_shared<TrainableDictionary>(
        domain.dim(), d.hidden, d.outputs,
        rng::substream(cfg.run.seed, rng::Stream::NetInit, 100));
}

EnvConfig make_env_config(const ExperimentConfig& cfg) {
    if (!cfg.resolved) throw ConfigError("config must be resolved first");
    EnvConfig env;
    env.system = make_system(cfg);
    env.system.domain = *cfg.grid.domain;
    env.dictionary = make_dictionary(cfg);
    env.mode = generator_mode_from_name(cfg.dictionary.generator_mode);
    env.grid_k = cfg.grid.k;
    env.n_traj_steps = cfg.system.n_steps;
    env.dt = cfg.system.dt;
    env.window_len = cfg.agent.window_len;
    env.reward = cfg.reward;
    env.ridge = cfg.dictionary.ridge;
    env.train_dict = cfg.train.enabled;
    env.train_epochs = cfg.train.epochs;
    env.train_batch = cfg.train.batch;
    env.train_lr = cfg.train.lr;
    env.train_gamma = cfg.train.gamma;
    env.seed = cfg.run.seed;
    return env;
}

}  // namespace koop
