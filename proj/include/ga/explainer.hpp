#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ga/model.hpp"
#include "ga/spatial_index.hpp"

namespace ga::explain {

/// Batch predictor over rows that keep their original ids.
using Predictor = std::function<std::vector<double>(std::span<const PointRecord>)>;

/// Players are encoded as bits of a coalition mask: bit 0 is the joint
/// location player (u and v together), bit j+1 is covariate j.
using Coalition = std::uint32_t;
inline constexpr Coalition kGeoPlayer = 1u;
inline constexpr Coalition feature_player(std::size_t j) { return Coalition{1} << (j + 1); }
inline constexpr std::size_t kMaxExactPlayers = 20;

/// The instance with every player outside `coalition` replaced by the
/// background row's value. Location is swapped as a (u, v) pair; the id is
/// always the instance's.
PointRecord substitute(const PointRecord& instance, const PointRecord& background, Coalition coalition);

/// Mean prediction over the background rows with `coalition` fixed to the instance.
double coalition_value(const Predictor& f, const PointRecord& instance, Coalition coalition,
                       std::span<const PointRecord> background);

/// v(S) for every mask S in [0, 2^players), evaluated as one predictor batch.
std::vector<double> all_coalition_values(const Predictor& f, const PointRecord& instance,
                                         std::span<const PointRecord> background);

/// φ_a = Σ_{S∌a} |S|!(M−|S|−1)!/M! · (v(S∪{a}) − v(S)) for every player.
/// Throws ContractError for more than kMaxExactPlayers players.
std::vector<double> shapley_exact(std::span<const double> values, std::size_t players);

/// Shapley interaction index of players a and b:
/// Σ_{S ⊆ N∖{a,b}} |S|!(M−|S|−2)!/(M−1)! · (v(S∪{a,b}) − v(S∪{a}) − v(S∪{b}) + v(S)).
double interaction_index(std::span<const double> values, std::size_t players, std::size_t a, std::size_t b);

/// Per instance: φ0 + φ_GEO + Σ φ_j + Σ φ_(GEO,j) = prediction.
struct GeoShapleyResult {
    std::vector<std::int64_t> ids;
    std::vector<double> phi0;
    std::vector<double> phi_geo;
    std::vector<std::vector<double>> phi;      // [row][feature]
    std::vector<std::vector<double>> phi_geo_x; // [row][feature]
    std::vector<double> prediction;

    std::size_t size() const noexcept { return ids.size(); }
};

/// Exact GeoShapley decomposition: the pairwise GEO×feature interaction is
/// split evenly between the two main effects and reported separately.
GeoShapleyResult geoshapley_explain(const Predictor& f, std::span<const PointRecord> instances,
                                    std::span<const PointRecord> background, std::size_t threads = 1);

/// β̂_j = (φ_j + φ_(GEO,j)) / (x_j − x̄_j) with x̄ the background mean; empty
/// when |x_j − x̄_j| < 1e-3·std_j (background std).
std::vector<std::vector<std::optional<double>>> local_coefficients(const GeoShapleyResult& result,
                                                                   std::span<const PointRecord> instances,
                                                                   std::span<const PointRecord> background);

/// Predictor for a trained model that builds every input sequence from the
/// true neighbours of the row's id, whatever coordinates or covariates the
/// row carries, distances included. Substituted coordinates only reach the
/// model's positional channels (coordinate embedding and rotary phases).
class AnchoredPredictor {
public:
    struct Options {
        /// 1 gives a deterministic single-member predictor; more members average
        /// randomised context subsets seeded per (member, id).
        std::size_t members = 1;
        double expansion = 1.25;
        std::uint64_t seed = 0;
        /// Recompute the distance bias from the row's own coordinates.
        bool recompute_distances = false;
    };

    /// `instances` are the rows that may be explained; both pools must
    /// outlive the predictor.
    AnchoredPredictor(const model::GeoAggregator& model, const ContextPool& context, const QueryPool& instances);
    AnchoredPredictor(const model::GeoAggregator& model, const ContextPool& context, const QueryPool& instances,
                      Options opts);

    /// Sequence for `row` (LookupError for an unknown id). `rng` is only drawn
    /// from when the cached list holds more candidates than L_max − 1.
    InputSequence sequence_for(const PointRecord& row, Rng& rng) const;
    double predict(const PointRecord& row) const;
    std::vector<double> operator()(std::span<const PointRecord> rows) const;

private:
    const model::GeoAggregator* model_;
    const ContextPool* context_;
    Options opts_;
    std::shared_ptr<const NeighborCache> cache_;
};

/// Wraps an AnchoredPredictor (copied) as a Predictor.
Predictor make_shap_predictor(const model::GeoAggregator& model, const ContextPool& context, const QueryPool& instances,
                              AnchoredPredictor::Options opts = {1, 1.0, 0});

/// f = β1(u,v)·x1 + β2(u,v)·x2 with the GWR-r generator's surfaces.
Predictor gwr_oracle_predictor();

/// `id,phi0,phi_geo,phi_x1..,phi_geo_x1..,beta_hat_x1..`; missing
/// coefficients are empty cells.
void write_explanation_csv(const GeoShapleyResult& result,
                           const std::vector<std::vector<std::optional<double>>>& betas,
                           const std::filesystem::path& path);

} // namespace ga::explain
