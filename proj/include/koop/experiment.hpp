#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "koop/agents.hpp"
#include "koop/config.hpp"
#include "koop/reward_env.hpp"
#include "koop/sdmd.hpp"

namespace koop {

/// Applies the KOOP_OUTPUT_ROOT override: relative output directories are
/// placed under the override (or the working directory when unset);
/// absolute paths pass through unchanged.
std::filesystem::path resolve_output_dir(const std::string& output_dir);

/// Uniform evaluation grid with inclusive endpoints, `resolution` points per
/// axis (>= 2), axis 0 slowest. Rows hold the coordinates followed by
/// (re, im) of each requested mode's normalized eigenfunction.
std::string export_eigenfunction_grid(const KoopmanEstimate& est, const Dictionary& dict,
                                      const Box& domain, int resolution,
                                      const std::vector<int>& mode_indices);

/// Bandit value map: one row per cell with its grid coordinates, center,
/// running mean value, and pull count.
std::string reward_map_csv(const BanditAgent& agent, const ActionGrid& grid);

struct RunResult {
    std::filesystem::path run_dir;
    long steps = 0;           // total environment steps completed
    long diverged_steps = 0;  // steps that hit the divergence floor
    double final_reward = 0.0;
};

/// Runs the configured agent against the sampling environment, writing the
/// resolved config, a JSON-lines step log, periodic CSV exports, and
/// checkpoints into the run directory. With `resume_checkpoint` the run
/// continues from that checkpoint and appends to the same log, producing
/// the identical file an uninterrupted run would have written.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& resume_checkpoint = {});

struct GradcheckReport {
    double max_rel_err = 0.0;
    bool pass = false;  // every case below 1e-4
    std::string text;   // one line per case
};

/// Derivative verification sweep: network weight gradients against central
/// finite differences and dictionary input derivatives (gradient + Hessian)
/// across several architectures and seeds.
GradcheckReport run_gradcheck();

}  // namespace koop
