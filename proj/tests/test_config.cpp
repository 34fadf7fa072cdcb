#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "koop/config.hpp"
#include "koop/errors.hpp"

using namespace koop;

namespace {

const char* kFullConfig = R"({
  "version": 1,
  "system": {"name": "double_well", "dt": 0.01, "n_steps": 300},
  "grid": {"k": 32},
  "dictionary": {"kind": "rbf", "centers_per_axis": 10},
  "agent": {"kind": "bandit", "epsilon": 0.35},
  "reward": {"r0": 1.0, "alpha_exp": 0.15},
  "run": {"t_max": 4000, "seed": 3, "output_dir": "runs/dw",
          "export_steps": [100, 500, 2000, 4000]}
})";

}  // namespace

TEST_CASE("minimal config parses with documented defaults") {
    ExperimentConfig cfg = parse_config(R"({"system": {"name": "ou"}})");
    CHECK(cfg.system.name == "ou");
    CHECK(cfg.system.dt == 0.01);
    CHECK(cfg.system.n_steps == 1000);
    CHECK(cfg.grid.k == 8);
    CHECK(!cfg.grid.domain.has_value());
    CHECK(cfg.dictionary.kind == "rbf");
    CHECK(cfg.agent.kind == "bandit");
    CHECK(cfg.agent.epsilon == 0.35);
    CHECK(cfg.agent.window_len == -1);
    CHECK(cfg.reward.r0 == 1.0);
    CHECK(cfg.reward.alpha_exp == 0.15);
    CHECK(cfg.run.t_max == 1000);
    CHECK(!cfg.resolved);
}

TEST_CASE("full experiment config parses and resolves") {
    ExperimentConfig cfg = parse_config(kFullConfig);
    CHECK(cfg.run.t_max == 4000);
    CHECK(cfg.grid.k == 32);
    resolve_config(cfg);
    CHECK(cfg.resolved);
    // Grid domain inherited from the double-well system.
    REQUIRE(cfg.grid.domain.has_value());
    CHECK(cfg.grid.domain->lo[0] == -3.0);
    CHECK(cfg.grid.domain->hi[1] == 4.0);
    // System parameter map completed from the builtin defaults.
    CHECK(cfg.system.params.at("sigma1") == doctest::Approx(1.09));
    // Rbf bandwidth: mean axis spacing of a 10-per-axis center grid.
    CHECK(cfg.dictionary.bandwidth == doctest::Approx((6.0 / 10 + 8.0 / 10) / 2).epsilon(1e-12));
    // KDE bandwidth: domain diagonal / (2 k).
    CHECK(cfg.reward.kde_bandwidth == doctest::Approx(10.0 / 64.0).epsilon(1e-12));
    // Bandit runs windowless by default.
    CHECK(cfg.agent.window_len == 0);
}

TEST_CASE("resolution is idempotent") {
    ExperimentConfig cfg = parse_config(kFullConfig);
    resolve_config(cfg);
    ExperimentConfig once = cfg;
    resolve_config(cfg);
    CHECK(config_to_json(cfg) == config_to_json(once));
}

TEST_CASE("emitted config round trips byte-for-byte") {
    ExperimentConfig cfg = parse_config(kFullConfig);
    resolve_config(cfg);
    const std::string emitted = config_to_json(cfg);

    ExperimentConfig back = parse_config(emitted);
    resolve_config(back);
    CHECK(config_to_json(back) == emitted);
}

TEST_CASE("unknown keys are rejected with their dotted path") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"system": {"name": "ou"}, "sytsem": {}})"),
                         doctest::Contains("sytsem"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"system": {"name": "ou", "dtt": 0.1}})"),
                         doctest::Contains("system.dtt"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_config(R"({"system": {"name": "ou"}, "agent": {"dqn": {"lrr": 1}}})"),
        doctest::Contains("agent.dqn.lrr"), ConfigError);
}

TEST_CASE("missing system block and malformed documents fail") {
    CHECK_THROWS_AS(parse_config(R"({"grid": {"k": 4}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("not json at all"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"version": 2, "system": {"name": "ou"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"system": {"name": "ou", "dt": "fast"}})"), ConfigError);
}

TEST_CASE("cross-field validation at resolve time") {
    SUBCASE("unknown system name") {
        ExperimentConfig cfg = parse_config(R"({"system": {"name": "lorenz"}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("unknown system parameter") {
        ExperimentConfig cfg =
            parse_config(R"({"system": {"name": "ou", "params": {"mass": 2.0}}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("bad agent kind") {
        ExperimentConfig cfg =
            parse_config(R"({"system": {"name": "ou"}, "agent": {"kind": "sarsa"}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("bandit epsilon outside [0, 1]") {
        ExperimentConfig cfg =
            parse_config(R"({"system": {"name": "ou"}, "agent": {"epsilon": 1.5}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("dictionary training requires the trainable kind") {
        ExperimentConfig cfg = parse_config(
            R"({"system": {"name": "ou"}, "dictionary": {"kind": "rbf"},
                "train": {"enabled": true}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("bad generator mode") {
        ExperimentConfig cfg = parse_config(
            R"({"system": {"name": "ou"}, "dictionary": {"generator_mode": "exact"}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("negative horizon") {
        ExperimentConfig cfg =
            parse_config(R"({"system": {"name": "ou"}, "run": {"t_max": -1}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
    SUBCASE("eigenfunction resolution needs two points per axis") {
        ExperimentConfig cfg =
            parse_config(R"({"system": {"name": "ou"}, "run": {"eigfun_resolution": 1}})");
        CHECK_THROWS_AS(resolve_config(cfg), ConfigError);
    }
}

TEST_CASE("window length defaults depend on the agent kind") {
    ExperimentConfig bandit = parse_config(R"({"system": {"name": "ou"}})");
    resolve_config(bandit);
    CHECK(bandit.agent.window_len == 0);

    ExperimentConfig dqn =
        parse_config(R"({"system": {"name": "ou"}, "agent": {"kind": "dqn"}})");
    resolve_config(dqn);
    CHECK(dqn.agent.window_len == 5);

    ExperimentConfig ppo =
        parse_config(R"({"system": {"name": "ou"}, "agent": {"kind": "ppo", "window_len": 2}})");
    resolve_config(ppo);
    CHECK(ppo.agent.window_len == 2);
}

TEST_CASE("export steps are sorted and deduplicated") {
    ExperimentConfig cfg = parse_config(
        R"({"system": {"name": "ou"}, "run": {"export_steps": [500, 100, 500, 40]}})");
    resolve_config(cfg);
    CHECK(cfg.run.export_steps == std::vector<long>{40, 100, 500});

    ExperimentConfig bad = parse_config(
        R"({"system": {"name": "ou"}, "run": {"export_steps": [0]}})");
    CHECK_THROWS_AS(resolve_config(bad), ConfigError);
}

TEST_CASE("factories need a resolved config") {
    ExperimentConfig cfg = parse_config(R"({"system": {"name": "ou"}})");
    CHECK_THROWS_AS(make_system(cfg), ConfigError);
    CHECK_THROWS_AS(make_dictionary(cfg), ConfigError);
    CHECK_THROWS_AS(make_env_config(cfg), ConfigError);

    resolve_config(cfg);
    SdeSystem sys = make_system(cfg);
    CHECK(sys.name == "ou");
    CHECK(sys.dim == 1);

    auto dict = make_dictionary(cfg);
    CHECK(dict->kind() == "rbf");
    CHECK(dict->dim() == 1);
    CHECK(dict->size() == 11);  // 10 centers + constant

    EnvConfig env = make_env_config(cfg);
    CHECK(env.system.name == "ou");
    CHECK(env.grid_k == cfg.grid.k);
    CHECK(env.n_traj_steps == cfg.system.n_steps);
    CHECK(env.dt == cfg.system.dt);
    CHECK(env.window_len == 0);
    CHECK(env.reward.kde_bandwidth > 0.0);
    CHECK(env.dictionary != nullptr);
}

TEST_CASE("dictionary factory covers every kind") {
    auto build = [](const std::string& extra) {
        ExperimentConfig cfg =
            parse_config(R"({"system": {"name": "double_well"}, "dictionary": )" + extra + "}");
        resolve_config(cfg);
        return make_dictionary(cfg);
    };
    CHECK(build(R"({"kind": "monomial", "degree": 2})")->size() == 6);
    CHECK(build(R"({"kind": "hermite", "degree": 2})")->size() == 6);
    CHECK(build(R"({"kind": "rbf", "centers_per_axis": 3})")->size() == 10);
    auto trainable = build(R"({"kind": "trainable", "hidden": [8], "outputs": 4})");
    CHECK(trainable->size() == 5);
    CHECK(trainable->kind() == "trainable");
    CHECK_THROWS_AS(build(R"({"kind": "wavelet"})"), ConfigError);
}

TEST_CASE("trainable dictionary seeds derive from the run seed") {
    const char* text = R"({"system": {"name": "ou"},
                           "dictionary": {"kind": "trainable", "hidden": [8], "outputs": 3},
                           "run": {"seed": 9}})";
    ExperimentConfig a = parse_config(text);
    resolve_config(a);
    ExperimentConfig b = parse_config(text);
    resolve_config(b);
    Matrix pts = Matrix::Random(5, 1);
    CHECK(make_dictionary(a)->evaluate(pts) == make_dictionary(b)->evaluate(pts));

    ExperimentConfig c = parse_config(text);
    c.run.seed = 10;
    resolve_config(c);
    CHECK(make_dictionary(a)->evaluate(pts) != make_dictionary(c)->evaluate(pts));
}

TEST_CASE("load_config_file reads and resolves") {
    const std::string path = "/tmp/koop_test_config.json";
    {
        std::ofstream out(path);
        out << kFullConfig;
    }
    ExperimentConfig cfg = load_config_file(path);
    CHECK(cfg.resolved);
    CHECK(cfg.run.t_max == 4000);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_config_file("/tmp/definitely_missing_koop.json"), IoError);
}

TEST_CASE("explicit grid domain overrides the system default") {
    ExperimentConfig cfg = parse_config(
        R"({"system": {"name": "ou"},
            "grid": {"k": 4, "domain": {"lo": [-2.0], "hi": [2.0]}}})");
    resolve_config(cfg);
    REQUIRE(cfg.grid.domain.has_value());
    CHECK(cfg.grid.domain->lo[0] == -2.0);
    CHECK(cfg.grid.domain->hi[0] == 2.0);
    EnvConfig env = make_env_config(cfg);
    CHECK(env.system.domain.lo[0] == -2.0);
}
