#include "ga/explainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "ga/errors.hpp"
#include "ga/pipeline.hpp"
#include "ga/synthetic.hpp"

namespace ga::explain {

PointRecord substitute(const PointRecord& instance, const PointRecord& background, Coalition coalition) {
    if (background.x.size() != instance.x.size())
        throw ContractError("substitute: instance and background differ in covariate count");
    PointRecord row = instance;
    if (!(coalition & kGeoPlayer)) {
        row.u = background.u;
        row.v = background.v;
    }
    for (std::size_t j = 0; j < row.x.size(); ++j)
        if (!(coalition & feature_player(j))) row.x[j] = background.x[j];
    return row;
}

double coalition_value(const Predictor& f, const PointRecord& instance, Coalition coalition,
                       std::span<const PointRecord> background) {
    if (background.empty()) throw ContractError("coalition_value: background must not be empty");
    std::vector<PointRecord> rows;
    rows.reserve(background.size());
    for (const auto& b : background) rows.push_back(substitute(instance, b, coalition));
    const auto preds = f(rows);
    double s = 0.0;
    for (double p : preds) s += p;
    return s / static_cast<double>(preds.size());
}

std::vector<double> all_coalition_values(const Predictor& f, const PointRecord& instance,
                                         std::span<const PointRecord> background) {
    if (background.empty()) throw ContractError("coalition_value: background must not be empty");
    const std::size_t players = instance.x.size() + 1;
    if (players > kMaxExactPlayers)
        throw ContractError("exact enumeration supports at most " + std::to_string(kMaxExactPlayers) +
                            " players; use a sampling estimator for " + std::to_string(players));
    const std::size_t n_masks = std::size_t{1} << players;
    std::vector<PointRecord> rows;
    rows.reserve(n_masks * background.size());
    for (std::size_t mask = 0; mask < n_masks; ++mask)
        for (const auto& b : background) rows.push_back(substitute(instance, b, static_cast<Coalition>(mask)));
    const auto preds = f(rows);
    if (preds.size() != rows.size()) throw ContractError("predictor returned the wrong number of outputs");
    std::vector<double> values(n_masks, 0.0);
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
        double s = 0.0;
        for (std::size_t i = 0; i < background.size(); ++i) s += preds[mask * background.size() + i];
        values[mask] = s / static_cast<double>(background.size());
    }
    return values;
}

namespace {

/// weights[s] = s!(M−s−1)!/M!
std::vector<double> shapley_weights(std::size_t m) {
    std::vector<double> w(m);
    for (std::size_t s = 0; s < m; ++s)
        w[s] = std::exp(std::lgamma(static_cast<double>(s) + 1) + std::lgamma(static_cast<double>(m - s)) -
                        std::lgamma(static_cast<double>(m) + 1));
    return w;
}

void check_values(std::span<const double> values, std::size_t players) {
    if (players == 0 || players > kMaxExactPlayers)
        throw ContractError("exact enumeration supports 1.." + std::to_string(kMaxExactPlayers) +
                            " players, got " + std::to_string(players) + "; use a sampling estimator");
    if (values.size() != (std::size_t{1} << players))
        throw ContractError("expected 2^" + std::to_string(players) + " coalition values, got " +
                            std::to_string(values.size()));
}

} // namespace

std::vector<double> shapley_exact(std::span<const double> values, std::size_t players) {
    check_values(values, players);
    const auto w = shapley_weights(players);
    std::vector<double> phi(players, 0.0);
    for (std::size_t a = 0; a < players; ++a) {
        const std::size_t bit = std::size_t{1} << a;
        for (std::size_t s = 0; s < values.size(); ++s) {
            if (s & bit) continue;
            phi[a] += w[static_cast<std::size_t>(std::popcount(s))] * (values[s | bit] - values[s]);
        }
    }
    return phi;
}

double interaction_index(std::span<const double> values, std::size_t players, std::size_t a, std::size_t b) {
    check_values(values, players);
    if (a == b || a >= players || b >= players) throw ContractError("interaction_index: invalid player pair");
    // |S|!(M−|S|−2)!/(M−1)! equals the Shapley weight of a game with M−1 players
    const auto w = shapley_weights(players - 1);
    const std::size_t ba = std::size_t{1} << a, bb = std::size_t{1} << b;
    double sii = 0.0;
    for (std::size_t s = 0; s < values.size(); ++s) {
        if (s & (ba | bb)) continue;
        sii += w[static_cast<std::size_t>(std::popcount(s))] *
               (values[s | ba | bb] - values[s | ba] - values[s | bb] + values[s]);
    }
    return sii;
}

GeoShapleyResult geoshapley_explain(const Predictor& f, std::span<const PointRecord> instances,
                                    std::span<const PointRecord> background, std::size_t threads) {
    if (background.empty()) throw ContractError("geoshapley_explain: background must not be empty");
    const std::size_t n = instances.size();
    const std::size_t p = background.front().x.size();
    for (const auto& r : instances)
        if (r.x.size() != p) throw ContractError("geoshapley_explain: instance " + std::to_string(r.id) +
                                                 " does not match the background schema");
    const std::size_t players = p + 1;

    GeoShapleyResult res;
    res.ids.resize(n);
    res.phi0.resize(n);
    res.phi_geo.resize(n);
    res.prediction.resize(n);
    res.phi.assign(n, std::vector<double>(p));
    res.phi_geo_x.assign(n, std::vector<double>(p));
    pipeline::parallel_for(n, threads, [&](std::size_t i) {
        const auto values = all_coalition_values(f, instances[i], background);
        const auto phi = shapley_exact(values, players);
        res.ids[i] = instances[i].id;
        res.phi0[i] = values.front();
        res.prediction[i] = values.back();
        double geo = phi[0];
        for (std::size_t j = 0; j < p; ++j) {
            const double sii = interaction_index(values, players, 0, j + 1);
            res.phi_geo_x[i][j] = sii;
            res.phi[i][j] = phi[j + 1] - sii / 2.0;
            geo -= sii / 2.0;
        }
        res.phi_geo[i] = geo;
    });
    return res;
}

std::vector<std::vector<std::optional<double>>> local_coefficients(const GeoShapleyResult& result,
                                                                   std::span<const PointRecord> instances,
                                                                   std::span<const PointRecord> background) {
    if (instances.size() != result.size()) throw ContractError("local_coefficients: result/instances misaligned");
    if (background.empty()) throw ContractError("local_coefficients: background must not be empty");
    const std::size_t p = background.front().x.size();
    std::vector<double> mean(p, 0.0), sd(p, 0.0);
    for (const auto& b : background)
        for (std::size_t j = 0; j < p; ++j) mean[j] += b.x[j];
    for (double& m : mean) m /= static_cast<double>(background.size());
    for (const auto& b : background)
        for (std::size_t j = 0; j < p; ++j) sd[j] += (b.x[j] - mean[j]) * (b.x[j] - mean[j]);
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(background.size()));

    std::vector<std::vector<std::optional<double>>> beta(result.size(), std::vector<std::optional<double>>(p));
    for (std::size_t i = 0; i < result.size(); ++i) {
        if (instances[i].id != result.ids[i]) throw ContractError("local_coefficients: id mismatch at row " + std::to_string(i));
        for (std::size_t j = 0; j < p; ++j) {
            const double dx = instances[i].x[j] - mean[j];
            if (dx == 0.0 || std::abs(dx) < 1e-3 * sd[j]) continue;
            beta[i][j] = (result.phi[i][j] + result.phi_geo_x[i][j]) / dx;
        }
    }
    return beta;
}

// ---------------------------------------------------------------------------

AnchoredPredictor::AnchoredPredictor(const model::GeoAggregator& model, const ContextPool& context,
                                     const QueryPool& instances)
    : AnchoredPredictor(model, context, instances, Options{}) {}

AnchoredPredictor::AnchoredPredictor(const model::GeoAggregator& model, const ContextPool& context,
                                     const QueryPool& instances, Options opts)
    : model_(&model), context_(&context), opts_(opts) {
    if (opts_.members < 1) throw ContractError("AnchoredPredictor: members must be >= 1");
    const std::size_t k = std::min(expanded_k(model.config().max_len, opts_.expansion), context.size());
    cache_ = std::make_shared<const NeighborCache>(precompute_neighbors(instances, context, k));
}

InputSequence AnchoredPredictor::sequence_for(const PointRecord& row, Rng& rng) const {
    InputSequence seq = assemble_sequence(row, *cache_, *context_, model_->config().max_len, rng);
    if (!opts_.recompute_distances) return seq;
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const double du = row.u - seq.tokens[i]->u, dv = row.v - seq.tokens[i]->v;
        seq.sq_dist[i] = du * du + dv * dv;
    }
    return seq;
}

double AnchoredPredictor::predict(const PointRecord& row) const {
    double s = 0.0;
    for (std::size_t k = 0; k < opts_.members; ++k) {
        Rng rng(opts_.seed ^ static_cast<std::uint64_t>(k) ^
                (static_cast<std::uint64_t>(row.id) * 0x9E3779B97F4A7C15ULL));
        s += model_->predict(sequence_for(row, rng));
    }
    return s / static_cast<double>(opts_.members);
}

std::vector<double> AnchoredPredictor::operator()(std::span<const PointRecord> rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(predict(r));
    return out;
}

Predictor make_shap_predictor(const model::GeoAggregator& model, const ContextPool& context, const QueryPool& instances,
                              AnchoredPredictor::Options opts) {
    return AnchoredPredictor(model, context, instances, opts);
}

Predictor gwr_oracle_predictor() {
    return [](std::span<const PointRecord> rows) {
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) {
            if (r.x.size() != 2) throw ContractError("GWR oracle expects two covariates");
            out.push_back(synth::gwr_beta1(r.u, r.v) * r.x[0] + synth::gwr_beta2(r.u, r.v) * r.x[1]);
        }
        return out;
    };
}

void write_explanation_csv(const GeoShapleyResult& result,
                           const std::vector<std::vector<std::optional<double>>>& betas,
                           const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::size_t p = result.size() ? result.phi.front().size() : 0;
    out << "id,phi0,phi_geo";
    for (std::size_t j = 1; j <= p; ++j) out << ",phi_x" << j;
    for (std::size_t j = 1; j <= p; ++j) out << ",phi_geo_x" << j;
    for (std::size_t j = 1; j <= p; ++j) out << ",beta_hat_x" << j;
    out << '\n';
    for (std::size_t i = 0; i < result.size(); ++i) {
        out << result.ids[i] << ',' << format_real(result.phi0[i]) << ',' << format_real(result.phi_geo[i]);
        for (double v : result.phi[i]) out << ',' << format_real(v);
        for (double v : result.phi_geo_x[i]) out << ',' << format_real(v);
        for (std::size_t j = 0; j < p; ++j) {
            out << ',';
            if (i < betas.size() && betas[i][j]) out << format_real(*betas[i][j]);
        }
        out << '\n';
    }
}

} // namespace ga::explain
