#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ga/dataset.hpp"
#include "ga/model.hpp"
#include "ga/spatial_index.hpp"

namespace ga::pipeline {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double expansion_factor = 1.25;
    /// Train fraction of the train/test split.
    double split = 0.7;
    /// Worker threads for per-sequence gradients; results do not depend on it.
    std::size_t threads = 1;

    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Split {
    std::vector<PointRecord> train;
    std::vector<PointRecord> test;
};

/// Seeded shuffle, first round(fraction·n) points to train. Both halves are
/// returned in id order.
Split split_dataset(const std::vector<PointRecord>& points, double train_fraction, std::uint64_t seed);

struct TrainResult {
    model::GeoAggregator model;
    /// Mean squared error per epoch, in squared target units.
    std::vector<double> loss_history;
};

/// Called after every epoch with (epoch index, epoch mse).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Minibatch Adam on squared error. The training set is both query and
/// context pool; neighbours are cached once with ceil(expansion·L_max)
/// candidates and every epoch redraws the random context subsets.
/// Throws ContractError when there are fewer than L_max points.
TrainResult train(const std::vector<PointRecord>& train_points, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch = {});

/// Per-query ensemble mean, Bessel-corrected standard deviation (0 for a
/// single member) and member count. `members[k][i]` is member k's output.
struct EnsemblePrediction {
    std::vector<std::int64_t> ids;
    std::vector<double> mean;
    std::vector<double> std;
    std::size_t member_count = 0;
    std::vector<std::vector<double>> members;
};

/// Member k draws its context subsets from Rng(seed ^ k). With expansion 1
/// every member sees the same sequences.
EnsemblePrediction predict_ensemble(const model::GeoAggregator& m, const QueryPool& queries,
                                    const ContextPool& context, std::size_t members, double expansion,
                                    std::uint64_t seed, std::size_t threads = 1);

/// Aggregates member outputs into mean and standard deviation.
EnsemblePrediction aggregate_members(std::vector<std::int64_t> ids, std::vector<std::vector<double>> members);

struct Metrics {
    double r2 = 0.0;
    double mae = 0.0;
};

/// r2 = 1 − SSE/SST, mae = mean |pred − truth|. Throws ContractError when
/// there are fewer than two values or the truth has zero variance.
Metrics evaluate(std::span<const double> pred, std::span<const double> truth);
/// Aligns ensemble means with the targets in `truth` by id.
Metrics evaluate(const EnsemblePrediction& pred, const QueryPool& truth);

/// Location-blind global least squares y ~ 1 + x.
struct LinearFit {
    double intercept = 0.0;
    std::vector<double> coef;

    double predict(const PointRecord& p) const;
};
LinearFit fit_ols(const std::vector<PointRecord>& points);

enum class CacheMode { precomputed, on_the_fly };
std::string to_string(CacheMode m);

struct TimingRow {
    std::size_t length = 0;
    CacheMode mode = CacheMode::precomputed;
    double seconds = 0.0;
    std::uint64_t tree_queries = 0;
};

/// For each sequence length: `members`-member inference over all queries on
/// the calling thread. Precomputed mode caches neighbours once per length
/// (included in the timing); on-the-fly mode queries the tree for every
/// member and point. Lengths must be ascending.
std::vector<TimingRow> benchmark_inference(const model::GeoAggregator& m, const QueryPool& queries,
                                           const ContextPool& context, std::span<const std::size_t> lengths,
                                           std::size_t members, CacheMode mode, double expansion,
                                           std::uint64_t seed);

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

void write_predictions_csv(const EnsemblePrediction& pred, const std::filesystem::path& path);
void write_loss_csv(std::span<const double> history, const std::filesystem::path& path);
/// Timing rows followed by `all,ratio,<mean precomputed/on-the-fly ratio>`
/// when both modes are present.
void write_benchmark_csv(std::span<const TimingRow> rows, const std::filesystem::path& path);

} // namespace ga::pipeline
