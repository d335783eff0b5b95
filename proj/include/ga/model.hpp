#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ga/spatial_index.hpp"
#include "ga/tape.hpp"

namespace ga::model {

using num::Tape;
using num::Tensor2;
using num::Var;

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t n_inducing = 8;
    std::size_t max_len = 64;
    std::size_t n_layers = 2;
    /// Initial value of every λ (after the softplus).
    double lambda_init = 1.0;
    /// One λ shared by all heads instead of one per head.
    bool legacy_single_abf = false;
    double rope_base = 100.0;
    std::size_t ffn_mult = 2;

    std::size_t head_dim() const { return d_model / n_heads; }
    /// Throws ContractError when an invariant is violated.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Affine maps fitted on the training pool: covariates and target are
/// standardised, coordinates are mapped isotropically into the unit square,
/// and squared distances for the attention bias are divided by `dist_scale2`
/// (in unit-square units).
struct Normalization {
    std::vector<double> x_mean;
    std::vector<double> x_std;
    double y_mean = 0.0;
    double y_std = 1.0;
    double u0 = 0.0;
    double v0 = 0.0;
    double coord_scale = 1.0;
    double dist_scale2 = 1.0;

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Fits means/stds, the coordinate frame and sets dist_scale2 to the median
/// squared distance to the (L_max−1)-th neighbour within the pool.
Normalization fit_normalization(const ContextPool& pool, std::size_t max_len);

/// Named learnable arrays in a fixed order.
class ModelParams {
public:
    std::size_t add(std::string name, Tensor2 value);
    std::size_t size() const noexcept { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor2& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor2& operator[](std::size_t i) const { return tensors_[i]; }
    /// Throws LookupError.
    std::size_t index(const std::string& name) const;
    std::vector<Tensor2>& tensors() noexcept { return tensors_; }
    const std::vector<Tensor2>& tensors() const noexcept { return tensors_; }
    std::size_t scalar_count() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor2> tensors_;
};

/// Per-head attention weights of the biased target attention, one entry per
/// layer, each holding H matrices of shape (queries × tokens).
struct AttentionTrace {
    std::vector<std::vector<Tensor2>> layers;
};

/// Token-level arrays the network consumes, already normalised.
struct SequenceFeatures {
    Tensor2 covariates;  // L × p
    Tensor2 target_col;  // L × 1, zero on the target row
    Tensor2 is_target;   // L × 1 one-hot on row 0
    Tensor2 coords;      // L × 2 in the unit-square frame
    Tensor2 bias_dist;   // 1 × L normalised squared distances from the target
};

SequenceFeatures make_features(const InputSequence& seq, const Normalization& norm);

// ---------------------------------------------------------------------------
// Building blocks. All operate on tape slots so that gradients flow through.

/// Rotation angles for 2-D rotary encoding of `n_heads` heads of width
/// head_dim: in every head, pair f < head_dim/4 turns by θ_f·u and pair
/// head_dim/4 + f by θ_f·v, θ_f = base^(−2f/(head_dim/2)).
/// Throws ContractError unless head_dim is divisible by 4.
Tensor2 rope_angles(const Tensor2& coords, std::size_t head_dim, std::size_t n_heads, double base);

/// Non-tape rotary encoding of (L × n_heads·head_dim) rows.
Tensor2 rope2d(const Tensor2& x, const Tensor2& coords, std::size_t head_dim, std::size_t n_heads, double base);

struct AttentionResult {
    Var output;                   // queries × d (heads concatenated, before W^O)
    std::vector<Tensor2> weights; // per head
};

/// Multi-head attention with a Gaussian distance bias:
/// α⁽ʰ⁾ = softmax(Q_h K_hᵀ/√head_dim − λ_h·D). `lambdas` holds one 1×1 slot
/// per head (the same slot may repeat). Pass an empty `sq_dist` for plain
/// attention. Throws ContractError on negative distances.
AttentionResult biased_attention(Tape& t, Var q, Var k, Var v, const Tensor2* sq_dist, std::span<const Var> lambdas,
                                 std::size_t n_heads);

/// W^{Q,K,V,O} of one attention block.
struct AttentionWeights {
    Var wq, wk, wv, wo;
};

/// Plain multi-head attention block: (queries·W^Q, keys·W^K, keys·W^V) → W^O.
Var attention_block(Tape& t, Var queries, Var keys, const AttentionWeights& w, std::size_t n_heads);

struct InducedResult {
    Var summary;   // m × d
    Var refreshed; // L × d
};

/// Inducing points attend to the context, then the context attends back to
/// the m-row summary. No distance bias (inducing points carry no location).
InducedResult induced_block(Tape& t, Var context, Var inducing, const AttentionWeights& pull,
                            const AttentionWeights& push, std::size_t n_heads);

// ---------------------------------------------------------------------------

class GeoAggregator {
public:
    GeoAggregator() = default;
    /// Fresh parameters drawn from `seed`.
    GeoAggregator(const ModelConfig& config, std::size_t n_covariates, Normalization norm, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const Normalization& normalization() const noexcept { return norm_; }
    std::size_t covariate_count() const noexcept { return n_covariates_; }
    ModelParams& params() noexcept { return params_; }
    const ModelParams& params() const noexcept { return params_; }

    /// Registers every parameter as a borrowed leaf.
    std::vector<Var> bind(Tape& t) const;

    /// Token embeddings (L × d). The target's y is replaced by the learned mask value.
    Var embed(Tape& t, std::span<const Var> pv, const SequenceFeatures& f) const;

    /// Standardised prediction (1×1) built on the tape.
    Var forward_on_tape(Tape& t, std::span<const Var> pv, const SequenceFeatures& f, AttentionTrace* trace = nullptr) const;

    /// Prediction in target units.
    double predict(const InputSequence& seq, AttentionTrace* trace = nullptr) const;

    /// Squared error loss in standardised units for one sequence with known target.
    Var loss_on_tape(Tape& t, std::span<const Var> pv, const InputSequence& seq) const;

    /// Resolved per-head λ values (length H; all equal in legacy mode).
    std::vector<double> lambdas() const;

    friend bool operator==(const GeoAggregator&, const GeoAggregator&) = default;

    nlohmann::json to_json() const;
    static GeoAggregator from_json(const nlohmann::json& j);

private:
    struct LayerSlots {
        std::size_t inducing = 0, ln1_g = 0, ln1_b = 0, ln2_g = 0, ln2_b = 0;
        std::size_t pull[4] = {}, push[4] = {}, att[4] = {};
        std::size_t lambda_raw = 0, ffn_w1 = 0, ffn_b1 = 0, ffn_w2 = 0, ffn_b2 = 0;

        friend bool operator==(const LayerSlots&, const LayerSlots&) = default;
    };
    void index_slots();

    ModelConfig config_;
    std::size_t n_covariates_ = 0;
    Normalization norm_;
    ModelParams params_;

    std::size_t emb_x_ = 0, emb_y_ = 0, emb_c_ = 0, emb_b_ = 0, y_mask_ = 0;
    std::size_t head_ln_g_ = 0, head_ln_b_ = 0, head_w1_ = 0, head_b1_ = 0, head_w2_ = 0, head_b2_ = 0;
    std::vector<LayerSlots> layers_;
};

/// A fitted model bundled with its context pool (GA predicts from observed
/// neighbours, so the pool travels with the parameters).
struct ModelBundle {
    GeoAggregator model;
    std::vector<PointRecord> context;
};

/// JSON document: format tag, version, config, normalization, named
/// row-major arrays and the context pool. Byte-stable for identical input.
void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

} // namespace ga::model
