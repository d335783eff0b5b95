#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ga/model.hpp"
#include "ga/pipeline.hpp"

namespace ga::cli {

/// Everything a run needs. Missing keys keep their defaults; unknown keys
/// are rejected.
struct RunConfig {
    model::ModelConfig model;
    pipeline::TrainConfig train;
    std::string dataset = "gwr-r";
    std::size_t n = 2500;
    double rho = 0.5;
    /// Master seed for reproduce (data, split, training, inference, explanation).
    std::uint64_t seed = 42;
    std::size_t members = 8;
    double expansion = 1.25;
    std::size_t background = 30;
    std::size_t instances = 50;
    std::vector<std::size_t> lengths{16, 32, 64, 128};
    std::size_t bench_members = 8;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
/// Throws ParseError naming the file on malformed JSON or unknown keys.
RunConfig load_run_config(const std::filesystem::path& path);

/// GA_SEED when set; ContractError when it is not an unsigned integer.
std::optional<std::uint64_t> env_seed();
/// flag > GA_SEED > config
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed);

struct GenOptions {
    std::string dataset = "gwr-r";
    std::size_t n = 2500;
    std::uint64_t seed = 42;
    double rho = 0.5;
    std::filesystem::path out;
};
void cmd_gen(const GenOptions& o);

struct TrainOptions {
    std::filesystem::path data;
    std::optional<std::filesystem::path> config;
    std::filesystem::path model_out;
    std::optional<std::filesystem::path> loss_out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool verbose = true;
};
/// Splits the data, trains on the train part and bundles it as context.
pipeline::TrainResult cmd_train(const TrainOptions& o);

struct PredictOptions {
    std::filesystem::path model;
    std::filesystem::path data;
    std::size_t members = 8;
    double expansion = 1.25;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::size_t threads = 1;
    bool verbose = true;
};
/// Predicts every data row whose id is not in the model's context pool.
pipeline::EnsemblePrediction cmd_predict(const PredictOptions& o);

struct ExplainOptions {
    std::filesystem::path model;
    std::filesystem::path data;
    /// Number of background rows drawn from the context pool.
    std::size_t background = 30;
    /// Number of query rows explained (0 = all).
    std::size_t instances = 50;
    std::size_t members = 1;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::size_t threads = 1;
};
void cmd_explain(const ExplainOptions& o);

struct BenchOptions {
    std::filesystem::path model;
    std::filesystem::path data;
    std::vector<std::size_t> lengths{16, 32, 64, 128};
    std::size_t members = 8;
    double expansion = 1.25;
    std::uint64_t seed = 0;
    std::filesystem::path out;
};
std::vector<pipeline::TimingRow> cmd_bench(const BenchOptions& o);

struct ReproduceOptions {
    std::optional<std::filesystem::path> config;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    bool verbose = true;
};
/// gen → train → predict → explain → bench into out_dir (data.csv,
/// model.json, loss.csv, predictions.csv, explanations.csv, bench.csv).
void cmd_reproduce(const ReproduceOptions& o);

/// Parses argv and dispatches. Returns 0 on success, 1 on a runtime or data
/// error, 2 on a usage error.
int run(int argc, const char* const* argv);

} // namespace ga::cli
