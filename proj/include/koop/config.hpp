#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "koop/agents.hpp"
#include "koop/common.hpp"
#include "koop/reward_env.hpp"
#include "koop/sde.hpp"

namespace koop {

struct SystemConfig {
    std::string name = "double_well";
    std::map<std::string, double> params;  // overrides; resolved to the full map
    double dt = 0.01;
    int n_steps = 1000;  // trajectory length per action
};

struct GridConfig {
    int k = 8;
    std::optional<Box> domain;  // defaults to the system domain
};

struct DictionaryConfig {
    std::string kind = "rbf";  // rbf | monomial | hermite | trainable
    int centers_per_axis = 10;     // rbf
    double bandwidth = 0.0;        // rbf; <= 0 resolves to the mean axis spacing
    int degree = 3;                // monomial / hermite
    std::vector<int> hidden = {32, 32};  // trainable
    int outputs = 15;              // trainable (constant channel adds one more)
    std::string generator_mode = "analytic";  // analytic | finite_diff
    double ridge = -1.0;           // < 0 selects the trace-scaled default
};

struct AgentBlock {
    std::string kind = "bandit";  // bandit | dqn | ppo
    double epsilon = 0.35;        // bandit exploration rate
    double q_init = 0.0;
    int window_len = -1;          // < 0 resolves to 0 (bandit) or 5 (dqn/ppo)
    DqnConfig dqn;
    PpoConfig ppo;
};

struct TrainBlock {
    bool enabled = false;  // per-step dictionary refresh (trainable kind only)
    int epochs = 2;
    double gamma = 0.0;
    int batch = 64;
    double lr = 1e-3;
};

struct RunBlock {
    long t_max = 1000;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/experiment";
    long checkpoint_every = 500;  // 0 keeps only the final checkpoint
    std::vector<long> export_steps = {100, 500, 2000, 4000};
    int eigfun_resolution = 51;   // per-axis points in eigenfunction grids
};

struct ExperimentConfig {
    SystemConfig system;
    GridConfig grid;
    DictionaryConfig dictionary;
    AgentBlock agent;
    RewardConfig reward;
    TrainBlock train;
    RunBlock run;
    bool resolved = false;
};

/// Strict parse: unknown keys are rejected with their dotted path; absent
/// keys take the documented defaults. Does not resolve computed values.
ExperimentConfig parse_config(const std::string& text);

/// Fills every derived value (system parameter map, grid domain, rbf
/// bandwidth, kde bandwidth, window length) and validates cross-field
/// constraints. Idempotent.
void resolve_config(ExperimentConfig& cfg);

/// Reads, parses, and resolves a config file.
ExperimentConfig load_config_file(const std::string& path);

/// Emits the complete configuration, resolved values included, so a rerun
/// of the emitted file reproduces the run byte-for-byte.
std::string config_to_json(const ExperimentConfig& cfg);

/// Instantiates the configured system (resolved config required).
SdeSystem make_system(const ExperimentConfig& cfg);

/// Instantiates the configured dictionary over the resolved domain.
std::shared_ptr<Dictionary> make_dictionary(const ExperimentConfig& cfg);

/// Builds the full environment configuration (system + dictionary included).
EnvConfig make_env_config(const ExperimentConfig& cfg);

}  // namespace koop
