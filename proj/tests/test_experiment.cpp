#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/experiment.hpp"

using namespace koop;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// Step log lines with the timing field removed; everything else must be
// bit-identical between runs.
std::vector<std::string> canonical_log(const fs::path& p) {
    std::vector<std::string> lines;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        j.erase("wall_ms");
        lines.push_back(j.dump());
    }
    return lines;
}

ExperimentConfig tiny_ou_config(const fs::path& out_dir, long t_max) {
    ExperimentConfig cfg = parse_config(R"({
      "system": {"name": "ou", "n_steps": 50},
      "grid": {"k": 4},
      "dictionary": {"kind": "hermite", "degree": 2},
      "agent": {"kind": "bandit", "epsilon": 0.35},
      "run": {"checkpoint_every": 2, "export_steps": [2], "eigfun_resolution": 5, "seed": 11}
    })");
    cfg.run.t_max = t_max;
    cfg.run.output_dir = out_dir.string();
    return cfg;
}

// Diagonal-operator estimate over {1, x, y}: eigenfunctions are exactly the
// basis functions, in the order constant, x, y.
KoopmanEstimate diagonal_estimate() {
    Matrix g = Matrix::Identity(3, 3);
    Matrix h = Matrix::Zero(3, 3);
    h(1, 1) = -1.0;
    h(2, 2) = -2.0;
    return estimate_koopman(g, h, 0.01, 0.0);
}

}  // namespace

TEST_CASE("resolve_output_dir honors the output-root override") {
    unsetenv("KOOP_OUTPUT_ROOT");
    CHECK(resolve_output_dir("/abs/path") == fs::path("/abs/path"));
    CHECK(resolve_output_dir("runs/a") == fs::path("runs/a"));

    setenv("KOOP_OUTPUT_ROOT", "/tmp/koop_root", 1);
    CHECK(resolve_output_dir("runs/a") == fs::path("/tmp/koop_root/runs/a"));
    CHECK(resolve_output_dir("/abs/path") == fs::path("/abs/path"));
    unsetenv("KOOP_OUTPUT_ROOT");
}

TEST_CASE("eigenfunction grid: inclusive corners, axis 0 slowest") {
    KoopmanEstimate est = diagonal_estimate();
    MonomialDictionary dict(2, 1);
    Box domain = Box::make({0.0, 0.0}, {1.0, 1.0});

    const std::string csv = export_eigenfunction_grid(est, dict, domain, 2, {0, 1, 2});
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "x,y,re_phi_0,im_phi_0,re_phi_1,im_phi_1,re_phi_2,im_phi_2");

    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream fields(line);
        std::string f;
        while (std::getline(fields, f, ',')) row.push_back(std::stod(f));
        rows.push_back(row);
    }
    REQUIRE(rows.size() == 4);
    // Axis 0 slowest: (0,0), (0,1), (1,0), (1,1).
    CHECK(rows[0][0] == 0.0);
    CHECK(rows[1][1] == 1.0);
    CHECK(rows[2][0] == 1.0);
    CHECK(rows[3][0] == 1.0);
    CHECK(rows[3][1] == 1.0);

    for (const auto& row : rows) {
        CHECK(row[2] == doctest::Approx(1.0).epsilon(1e-9));  // constant mode
        CHECK(row[3] == doctest::Approx(0.0));                // purely real
        CHECK(row[4] == doctest::Approx(row[0]).epsilon(1e-9));  // mode 1 is x
        CHECK(row[6] == doctest::Approx(row[1]).epsilon(1e-9));  // mode 2 is y
    }

    CHECK_THROWS_AS(export_eigenfunction_grid(est, dict, domain, 1, {0}), InvalidInput);
    CHECK_THROWS_AS(export_eigenfunction_grid(est, dict, domain, 2, {7}), InvalidInput);
}

TEST_CASE("reward map csv lists cells with values and counts") {
    BanditAgent agent(4, 0.1);
    agent.update(2, 1.5);
    agent.update(2, 1.5);
    ActionGrid grid(Box::make({0.0, 0.0}, {1.0, 1.0}), 2);

    const std::string csv = reward_map_csv(agent, grid);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "action,i0,i1,center_x,center_y,q,n");
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].rfind("0,0,0,0.25,0.25,0,0", 0) == 0);
    CHECK(rows[2].rfind("2,1,0,0.75,0.25,1.5,2", 0) == 0);

    BanditAgent wrong(5, 0.1);
    CHECK_THROWS_AS(reward_map_csv(wrong, grid), ShapeMismatch);
}

TEST_CASE("run_experiment writes the full artifact set") {
    const fs::path dir = fresh_dir("koop_exp_artifacts");
    RunResult res = run_experiment(tiny_ou_config(dir, 3));
    CHECK(res.steps == 3);
    CHECK(res.run_dir == dir);

    CHECK(fs::exists(dir / "resolved_config.json"));
    CHECK(fs::exists(dir / "step_log.jsonl"));
    CHECK(fs::exists(dir / "eigenvalues.csv"));
    CHECK(fs::exists(dir / "eigfuns_step2.csv"));
    CHECK(fs::exists(dir / "rewardmap_step2.csv"));
    CHECK(fs::exists(dir / "eigfuns_step_final.csv"));
    CHECK(fs::exists(dir / "checkpoints" / "step_2" / "meta.json"));
    CHECK(fs::exists(dir / "checkpoints" / "step_3" / "env_state.json"));
    CHECK(fs::exists(dir / "checkpoints" / "step_3" / "dictionary" / "dict.json"));
    CHECK(fs::exists(dir / "checkpoints" / "step_3" / "agent" / "bandit.csv"));

    // The emitted config is itself a valid, already-resolved config.
    ExperimentConfig emitted = parse_config(read_file(dir / "resolved_config.json"));
    resolve_config(emitted);
    CHECK(emitted.run.t_max == 3);

    // Three well-formed log lines with the documented key set.
    auto lines = canonical_log(dir / "step_log.jsonl");
    REQUIRE(lines.size() == 3);
    json first = json::parse(lines[0]);
    CHECK(first["step"] == 0);
    CHECK(first.contains("action"));
    CHECK(first.contains("x_new"));
    CHECK(first["reward"].contains("total"));
    CHECK(first["reward"].contains("bonus"));
    CHECK(first.contains("mu"));

    // Eigenvalue history covers the export step and the final step.
    const std::string eig = read_file(dir / "eigenvalues.csv");
    CHECK(eig.rfind("step,index,re_mu,im_mu,re_lambda,im_lambda\n", 0) == 0);
    CHECK(eig.find("\n2,0,") != std::string::npos);
    CHECK(eig.find("\n3,0,") != std::string::npos);

    fs::remove_all(dir);
}

TEST_CASE("t_max = 0 yields an empty but valid run") {
    const fs::path dir = fresh_dir("koop_exp_empty");
    RunResult res = run_experiment(tiny_ou_config(dir, 0));
    CHECK(res.steps == 0);
    CHECK(res.diverged_steps == 0);
    CHECK(fs::exists(dir / "resolved_config.json"));
    CHECK(fs::exists(dir / "step_log.jsonl"));
    CHECK(canonical_log(dir / "step_log.jsonl").empty());
    CHECK(fs::exists(dir / "checkpoints" / "step_0" / "meta.json"));
    CHECK(!fs::exists(dir / "eigenvalues.csv"));
    fs::remove_all(dir);
}

TEST_CASE("identical configs produce identical step logs") {
    const fs::path a = fresh_dir("koop_exp_det_a");
    const fs::path b = fresh_dir("koop_exp_det_b");
    ExperimentConfig ca = tiny_ou_config(a, 4);
    ExperimentConfig cb = tiny_ou_config(b, 4);
    run_experiment(ca);
    run_experiment(cb);
    CHECK(canonical_log(a / "step_log.jsonl") == canonical_log(b / "step_log.jsonl"));

    // A different seed must change the trace.
    const fs::path c = fresh_dir("koop_exp_det_c");
    ExperimentConfig cc = tiny_ou_config(c, 4);
    cc.run.seed = 12;
    run_experiment(cc);
    CHECK(canonical_log(a / "step_log.jsonl") != canonical_log(c / "step_log.jsonl"));

    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted log") {
    const fs::path full_dir = fresh_dir("koop_exp_resume_full");
    run_experiment(tiny_ou_config(full_dir, 6));

    const fs::path part_dir = fresh_dir("koop_exp_resume_part");
    run_experiment(tiny_ou_config(part_dir, 4));
    // Continue from step 4 up to 6 in the same directory.
    run_experiment(tiny_ou_config(part_dir, 6),
                   (part_dir / "checkpoints" / "step_4").string());

    CHECK(canonical_log(part_dir / "step_log.jsonl") ==
          canonical_log(full_dir / "step_log.jsonl"));

    fs::remove_all(full_dir);
    fs::remove_all(part_dir);
}

TEST_CASE("resume from a missing checkpoint fails cleanly") {
    const fs::path dir = fresh_dir("koop_exp_resume_missing");
    CHECK_THROWS_AS(run_experiment(tiny_ou_config(dir, 2), "/tmp/no_such_checkpoint_anywhere"),
                    IoError);
    fs::remove_all(dir);
}

TEST_CASE("gradient check sweep passes") {
    GradcheckReport report = run_gradcheck();
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-4);
    CHECK(!report.text.empty());
}
