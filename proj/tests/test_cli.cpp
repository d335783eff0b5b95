#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "ga/dataset.hpp"
#include "ga/errors.hpp"

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "ga");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return ga::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

fs::path workdir() {
    const fs::path d = fs::temp_directory_path() / "ga_cli_tests";
    fs::create_directories(d);
    return d;
}

const char* kSmallConfig = R"({
  "dataset": "gwr-r", "n": 400, "seed": 3,
  "model": {"d_model": 16, "n_heads": 2, "n_inducing": 4, "max_len": 16, "n_layers": 1},
  "train": {"epochs": 3},
  "members": 4, "background": 10, "instances": 6, "lengths": [8, 16], "bench_members": 2
})";

} // namespace

TEST_CASE("gen") {
    const auto d = workdir();
    CHECK(run({"gen", "--dataset", "gwr-r", "--n", "2500", "--seed", "42", "--out", (d / "a.csv").string()}) == 0);
    CHECK(run({"gen", "--dataset", "gwr-r", "--n", "2500", "--seed", "42", "--out", (d / "b.csv").string()}) == 0);
    CHECK(lines(d / "a.csv").size() == 2501);
    CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
    CHECK(fs::exists(d / "a.meta.json"));
    CHECK(ga::load_meta(d / "a.meta.json").generator == "gwr-r");

    CHECK(run({"gen", "--dataset", "sl-r", "--n", "300", "--rho", "0.4", "--out", (d / "s.csv").string()}) == 0);
    CHECK(ga::load_meta(d / "s.meta.json").params.at("rho") == 0.4);

    CHECK(run({"gen", "--dataset", "gwr-r", "--n", "2501", "--out", (d / "c.csv").string()}) == 2);
    CHECK(run({"gen", "--dataset", "lattice", "--out", (d / "c.csv").string()}) == 2);
    CHECK(run({"gen", "--n", "abc", "--out", (d / "c.csv").string()}) == 2);
    CHECK(run({"gen"}) == 2);
    CHECK(run({}) == 2);
    CHECK(run({"gen", "--help"}) == 0);
}

TEST_CASE("train, predict, explain, bench") {
    const auto d = workdir();
    {
        std::ofstream out(d / "cfg.json");
        out << kSmallConfig;
    }
    const auto data = (d / "g.csv").string(), model = (d / "m.json").string();
    REQUIRE(run({"gen", "--dataset", "gwr-r", "--n", "400", "--seed", "1", "--out", data}) == 0);
    REQUIRE(run({"train", "--data", data, "--config", (d / "cfg.json").string(), "--model-out", model, "--loss-out",
                 (d / "loss.csv").string()}) == 0);
    const auto loss = lines(d / "loss.csv");
    CHECK(loss.size() == 4);
    CHECK(loss.front() == "epoch,mse");

    REQUIRE(run({"predict", "--model", model, "--data", data, "--members", "8", "--out", (d / "p.csv").string()}) == 0);
    const auto pred = lines(d / "p.csv");
    CHECK(pred.front() == "id,y_mean,y_std");
    CHECK(pred.size() == 121);
    for (std::size_t i = 1; i < pred.size(); ++i) CHECK(std::stod(pred[i].substr(pred[i].rfind(',') + 1)) >= 0.0);

    REQUIRE(run({"explain", "--model", model, "--data", data, "--background", "10", "--instances", "4", "--out",
                 (d / "e.csv").string()}) == 0);
    const auto ex = lines(d / "e.csv");
    CHECK(ex.size() == 5);
    CHECK(ex.front() == "id,phi0,phi_geo,phi_x1,phi_x2,phi_geo_x1,phi_geo_x2,beta_hat_x1,beta_hat_x2");

    REQUIRE(run({"bench", "--model", model, "--data", data, "--lengths", "8,16", "--members", "2", "--out",
                 (d / "b.csv").string()}) == 0);
    const auto bench = lines(d / "b.csv");
    CHECK(bench.size() == 6);
    CHECK(bench.back().rfind("all,ratio,", 0) == 0);

    CHECK(run({"predict", "--model", (d / "nope.json").string(), "--data", data, "--out", (d / "x.csv").string()}) == 1);
    CHECK(run({"predict", "--model", model, "--data", (d / "cfg.json").string(), "--out", (d / "x.csv").string()}) == 1);
    CHECK(run({"explain", "--model", model, "--data", data, "--background", "100000", "--out",
               (d / "x.csv").string()}) == 2);
}

TEST_CASE("run config") {
    const auto d = workdir();
    {
        std::ofstream out(d / "bad.json");
        out << R"({"n": 400, "colour": "red"})";
    }
    CHECK_THROWS_AS(ga::cli::load_run_config(d / "bad.json"), ga::ParseError);
    CHECK(run({"train", "--data", (d / "g.csv").string(), "--config", (d / "bad.json").string(), "--model-out",
               (d / "m2.json").string()}) == 1);

    const ga::cli::RunConfig defaults;
    CHECK(nlohmann::json(defaults).get<ga::cli::RunConfig>().lengths == defaults.lengths);
}

TEST_CASE("seed precedence") {
    ::unsetenv("GA_SEED");
    CHECK(ga::cli::resolve_seed(std::nullopt, 7) == 7);
    ::setenv("GA_SEED", "11", 1);
    CHECK(ga::cli::resolve_seed(std::nullopt, 7) == 11);
    CHECK(ga::cli::resolve_seed(3, 7) == 3);
    ::setenv("GA_SEED", "eleven", 1);
    CHECK_THROWS_AS(ga::cli::resolve_seed(std::nullopt, 7), ga::ContractError);
    ::unsetenv("GA_SEED");
}

TEST_CASE("reproduce is deterministic") {
    const auto d = workdir();
    {
        std::ofstream out(d / "cfg.json");
        out << kSmallConfig;
    }
    REQUIRE(run({"reproduce", "--config", (d / "cfg.json").string(), "--out-dir", (d / "r1").string()}) == 0);
    REQUIRE(run({"reproduce", "--config", (d / "cfg.json").string(), "--out-dir", (d / "r2").string()}) == 0);
    for (const char* f : {"data.csv", "model.json", "loss.csv", "predictions.csv", "explanations.csv"})
        CHECK(slurp(d / "r1" / f) == slurp(d / "r2" / f));
    CHECK(lines(d / "r1" / "bench.csv").size() == 6);
}
