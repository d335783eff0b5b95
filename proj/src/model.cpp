#include "ga/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ga/errors.hpp"
#include "ga/rng.hpp"

namespace ga::model {

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
    if (n_heads == 0 || d_model % n_heads != 0)
        throw ContractError("ModelConfig: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                            std::to_string(n_heads));
    if (head_dim() % 2 != 0) throw ContractError("ModelConfig: head_dim must be even for rotary pairing");
    if (head_dim() % 4 != 0) throw ContractError("ModelConfig: head_dim must be divisible by 4 (u and v pairs)");
    if (n_inducing < 1) throw ContractError("ModelConfig: n_inducing must be >= 1");
    if (max_len < 2) throw ContractError("ModelConfig: max_len must be >= 2");
    if (n_layers < 1) throw ContractError("ModelConfig: n_layers must be >= 1");
    if (!(lambda_init > 0.0)) throw ContractError("ModelConfig: lambda_init must be positive");
    if (!(rope_base > 0.0)) throw ContractError("ModelConfig: rope_base must be positive");
    if (ffn_mult < 1) throw ContractError("ModelConfig: ffn_mult must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_model", c.d_model},         {"n_heads", c.n_heads},
                       {"n_inducing", c.n_inducing},   {"max_len", c.max_len},
                       {"n_layers", c.n_layers},       {"lambda_init", c.lambda_init},
                       {"legacy_single_abf", c.legacy_single_abf}, {"rope_base", c.rope_base},
                       {"ffn_mult", c.ffn_mult}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    static const std::set<std::string> known{"d_model", "n_heads", "n_inducing", "max_len", "n_layers",
                                             "lambda_init", "legacy_single_abf", "rope_base", "ffn_mult"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ContractError("model config: unknown key '" + k + "'");
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_inducing = j.value("n_inducing", c.n_inducing);
    c.max_len = j.value("max_len", c.max_len);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.lambda_init = j.value("lambda_init", c.lambda_init);
    c.legacy_single_abf = j.value("legacy_single_abf", c.legacy_single_abf);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
}

// ---------------------------------------------------------------------------
// normalization and features

Normalization fit_normalization(const ContextPool& pool, std::size_t max_len) {
    const auto& pts = pool.points();
    const std::size_t n = pts.size();
    const std::size_t p = pts.front().x.size();
    Normalization nm;
    nm.x_mean.assign(p, 0.0);
    nm.x_std.assign(p, 0.0);
    double ysum = 0.0;
    std::size_t ycount = 0;
    double umin = pts.front().u, umax = umin, vmin = pts.front().v, vmax = vmin;
    for (const auto& pt : pts) {
        if (pt.x.size() != p) throw ContractError("fit_normalization: ragged covariates at id " + std::to_string(pt.id));
        for (std::size_t j = 0; j < p; ++j) nm.x_mean[j] += pt.x[j];
        if (pt.y) {
            ysum += *pt.y;
            ++ycount;
        }
        umin = std::min(umin, pt.u);
        umax = std::max(umax, pt.u);
        vmin = std::min(vmin, pt.v);
        vmax = std::max(vmax, pt.v);
    }
    for (double& m : nm.x_mean) m /= static_cast<double>(n);
    nm.y_mean = ycount ? ysum / static_cast<double>(ycount) : 0.0;
    double yss = 0.0;
    for (const auto& pt : pts) {
        for (std::size_t j = 0; j < p; ++j) nm.x_std[j] += (pt.x[j] - nm.x_mean[j]) * (pt.x[j] - nm.x_mean[j]);
        if (pt.y) yss += (*pt.y - nm.y_mean) * (*pt.y - nm.y_mean);
    }
    for (double& s : nm.x_std) {
        s = std::sqrt(s / static_cast<double>(n));
        if (!(s > 1e-12)) s = 1.0;
    }
    nm.y_std = ycount ? std::sqrt(yss / static_cast<double>(ycount)) : 1.0;
    if (!(nm.y_std > 1e-12)) nm.y_std = 1.0;
    nm.u0 = umin;
    nm.v0 = vmin;
    nm.coord_scale = std::max(umax - umin, vmax - vmin);
    if (!(nm.coord_scale > 0.0)) nm.coord_scale = 1.0;

    std::vector<double> far;
    far.reserve(n);
    const std::size_t k = std::min(max_len, n);
    for (const auto& pt : pts) far.push_back(pool.tree().knn(pt.u, pt.v, k).back().sq_dist);
    std::nth_element(far.begin(), far.begin() + static_cast<std::ptrdiff_t>(n / 2), far.end());
    const double med = far[n / 2] / (nm.coord_scale * nm.coord_scale);
    nm.dist_scale2 = med > 0.0 ? med : 1.0;
    return nm;
}

SequenceFeatures make_features(const InputSequence& seq, const Normalization& norm) {
    const std::size_t L = seq.size();
    const std::size_t p = norm.x_mean.size();
    if (L == 0) throw ContractError("make_features: empty sequence");
    SequenceFeatures f;
    f.covariates = Tensor2(L, p);
    f.target_col = Tensor2(L, 1);
    f.is_target = Tensor2(L, 1);
    f.coords = Tensor2(L, 2);
    f.bias_dist = Tensor2(1, L);
    f.is_target(0, 0) = 1.0;
    const double inv_s = 1.0 / norm.coord_scale;
    const double inv_d = inv_s * inv_s / norm.dist_scale2;
    for (std::size_t i = 0; i < L; ++i) {
        const PointRecord& r = *seq.tokens[i];
        if (r.x.size() != p)
            throw ContractError("embed: id " + std::to_string(r.id) + " has " + std::to_string(r.x.size()) +
                                " covariates, model expects " + std::to_string(p));
        for (std::size_t j = 0; j < p; ++j) f.covariates(i, j) = (r.x[j] - norm.x_mean[j]) / norm.x_std[j];
        if (i > 0) {
            if (!r.y) throw ContractError("embed: context point " + std::to_string(r.id) + " has no target value");
            f.target_col(i, 0) = (*r.y - norm.y_mean) / norm.y_std;
        }
        f.coords(i, 0) = (r.u - norm.u0) * inv_s;
        f.coords(i, 1) = (r.v - norm.v0) * inv_s;
        if (seq.sq_dist[i] < 0.0) throw ContractError("negative squared distance in sequence");
        f.bias_dist(0, i) = seq.sq_dist[i] * inv_d;
    }
    return f;
}

// ---------------------------------------------------------------------------
// building blocks

Tensor2 rope_angles(const Tensor2& coords, std::size_t head_dim, std::size_t n_heads, double base) {
    if (head_dim % 4 != 0)
        throw ContractError("rope2d: head_dim " + std::to_string(head_dim) + " must be divisible by 4");
    if (coords.cols() != 2) throw ShapeError("rope2d: coords must be L x 2, got " + coords.shape_string());
    const std::size_t pairs = head_dim / 2;
    const std::size_t quarter = head_dim / 4;
    std::vector<double> theta(quarter);
    for (std::size_t f = 0; f < quarter; ++f)
        theta[f] = std::pow(base, -2.0 * static_cast<double>(f) / static_cast<double>(pairs));
    Tensor2 ang(coords.rows(), n_heads * pairs);
    for (std::size_t i = 0; i < coords.rows(); ++i)
        for (std::size_t h = 0; h < n_heads; ++h)
            for (std::size_t q = 0; q < pairs; ++q)
                ang(i, h * pairs + q) = q < quarter ? theta[q] * coords(i, 0) : theta[q - quarter] * coords(i, 1);
    return ang;
}

Tensor2 rope2d(const Tensor2& x, const Tensor2& coords, std::size_t head_dim, std::size_t n_heads, double base) {
    if (x.cols() != head_dim * n_heads || x.rows() != coords.rows())
        throw ShapeError("rope2d: " + x.shape_string() + " with coords " + coords.shape_string());
    Tape t;
    Var v = t.constant(x);
    return t.value(t.rotate_pairs(v, rope_angles(coords, head_dim, n_heads, base)));
}

AttentionResult biased_attention(Tape& t, Var q, Var k, Var v, const Tensor2* sq_dist, std::span<const Var> lambdas,
                                 std::size_t n_heads) {
    const auto& qv = t.value(q);
    const auto& kv = t.value(k);
    const auto& vv = t.value(v);
    if (qv.cols() != kv.cols() || kv.rows() != vv.rows() || vv.cols() != qv.cols() || qv.cols() % n_heads != 0)
        throw ShapeError("biased_attention: Q " + qv.shape_string() + ", K " + kv.shape_string() + ", V " +
                         vv.shape_string() + " with " + std::to_string(n_heads) + " heads");
    if (sq_dist) {
        if (sq_dist->rows() != qv.rows() || sq_dist->cols() != kv.rows())
            throw ShapeError("biased_attention: distances " + sq_dist->shape_string() + " for " +
                             std::to_string(qv.rows()) + " queries and " + std::to_string(kv.rows()) + " keys");
        for (double d : sq_dist->data())
            if (d < 0.0) throw ContractError("biased_attention: negative squared distance");
        if (lambdas.size() != n_heads)
            throw ContractError("biased_attention: expected " + std::to_string(n_heads) + " lambdas, got " +
                                std::to_string(lambdas.size()));
    }
    const std::size_t dh = qv.cols() / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    AttentionResult res;
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Var qh = n_heads == 1 ? q : t.slice_cols(q, h * dh, dh);
        Var kh = n_heads == 1 ? k : t.slice_cols(k, h * dh, dh);
        Var vh = n_heads == 1 ? v : t.slice_cols(v, h * dh, dh);
        Var logits = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
        if (sq_dist) logits = t.sub_scaled(logits, lambdas[h], *sq_dist);
        Var alpha = t.softmax_rows(logits);
        res.weights.push_back(t.value(alpha));
        heads.push_back(t.matmul(alpha, vh));
    }
    res.output = n_heads == 1 ? heads.front() : t.concat_cols(heads);
    return res;
}

Var attention_block(Tape& t, Var queries, Var keys, const AttentionWeights& w, std::size_t n_heads) {
    Var q = t.matmul(queries, w.wq);
    Var k = t.matmul(keys, w.wk);
    Var v = t.matmul(keys, w.wv);
    auto res = biased_attention(t, q, k, v, nullptr, {}, n_heads);
    return t.matmul(res.output, w.wo);
}

InducedResult induced_block(Tape& t, Var context, Var inducing, const AttentionWeights& pull,
                            const AttentionWeights& push, std::size_t n_heads) {
    InducedResult r;
    r.summary = t.add(inducing, attention_block(t, inducing, context, pull, n_heads));
    r.refreshed = t.add(context, attention_block(t, context, r.summary, push, n_heads));
    return r;
}

// ---------------------------------------------------------------------------
// params

std::size_t ModelParams::add(std::string name, Tensor2 value) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return tensors_.size() - 1;
}

std::size_t ModelParams::index(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    throw LookupError("unknown parameter '" + name + "'");
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

namespace {

Tensor2 gaussian(Rng& rng, std::size_t r, std::size_t c, double sd) {
    Tensor2 t(r, c);
    for (double& v : t.data()) v = sd * rng.normal();
    return t;
}

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

} // namespace

GeoAggregator::GeoAggregator(const ModelConfig& config, std::size_t n_covariates, Normalization norm, std::uint64_t seed)
    : config_(config), n_covariates_(n_covariates), norm_(std::move(norm)) {
    config_.validate();
    if (norm_.x_mean.size() != n_covariates_ || norm_.x_std.size() != n_covariates_)
        throw ContractError("GeoAggregator: normalization covers " + std::to_string(norm_.x_mean.size()) +
                            " covariates, expected " + std::to_string(n_covariates_));
    Rng rng(seed);
    const std::size_t d = config_.d_model;
    const std::size_t f = d * config_.ffn_mult;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double p_sd = n_covariates_ ? 1.0 / std::sqrt(static_cast<double>(n_covariates_)) : 0.0;

    params_.add("embed.x", gaussian(rng, n_covariates_, d, p_sd));
    params_.add("embed.y", gaussian(rng, 1, d, 1.0));
    params_.add("embed.coord", gaussian(rng, 2, d, 1.0));
    params_.add("embed.bias", Tensor2(1, d));
    params_.add("embed.y_mask", Tensor2(1, 1));
    const double lambda_raw = softplus_inverse(config_.lambda_init);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        params_.add(pre + "inducing", gaussian(rng, config_.n_inducing, d, 1.0));
        for (const char* blk : {"pull", "push", "att"})
            for (const char* w : {"wq", "wk", "wv", "wo"})
                params_.add(pre + blk + "." + w, gaussian(rng, d, d, sd));
        params_.add(pre + "att.lambda_raw",
                    Tensor2(1, config_.legacy_single_abf ? 1 : config_.n_heads, lambda_raw));
        params_.add(pre + "ln1.gain", Tensor2(1, d, 1.0));
        params_.add(pre + "ln1.bias", Tensor2(1, d));
        params_.add(pre + "ln2.gain", Tensor2(1, d, 1.0));
        params_.add(pre + "ln2.bias", Tensor2(1, d));
        params_.add(pre + "ffn.w1", gaussian(rng, d, f, sd));
        params_.add(pre + "ffn.b1", Tensor2(1, f));
        params_.add(pre + "ffn.w2", gaussian(rng, f, d, 1.0 / std::sqrt(static_cast<double>(f))));
        params_.add(pre + "ffn.b2", Tensor2(1, d));
    }
    params_.add("head.ln.gain", Tensor2(1, d, 1.0));
    params_.add("head.ln.bias", Tensor2(1, d));
    params_.add("head.w1", gaussian(rng, d, d, sd));
    params_.add("head.b1", Tensor2(1, d));
    params_.add("head.w2", gaussian(rng, d, 1, sd));
    params_.add("head.b2", Tensor2(1, 1));
    index_slots();
}

void GeoAggregator::index_slots() {
    emb_x_ = params_.index("embed.x");
    emb_y_ = params_.index("embed.y");
    emb_c_ = params_.index("embed.coord");
    emb_b_ = params_.index("embed.bias");
    y_mask_ = params_.index("embed.y_mask");
    layers_.clear();
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        LayerSlots s;
        s.inducing = params_.index(pre + "inducing");
        const char* ws[4] = {"wq", "wk", "wv", "wo"};
        for (int i = 0; i < 4; ++i) {
            s.pull[i] = params_.index(pre + "pull." + ws[i]);
            s.push[i] = params_.index(pre + "push." + ws[i]);
            s.att[i] = params_.index(pre + "att." + ws[i]);
        }
        s.lambda_raw = params_.index(pre + "att.lambda_raw");
        s.ln1_g = params_.index(pre + "ln1.gain");
        s.ln1_b = params_.index(pre + "ln1.bias");
        s.ln2_g = params_.index(pre + "ln2.gain");
        s.ln2_b = params_.index(pre + "ln2.bias");
        s.ffn_w1 = params_.index(pre + "ffn.w1");
        s.ffn_b1 = params_.index(pre + "ffn.b1");
        s.ffn_w2 = params_.index(pre + "ffn.w2");
        s.ffn_b2 = params_.index(pre + "ffn.b2");
        layers_.push_back(s);
    }
    head_ln_g_ = params_.index("head.ln.gain");
    head_ln_b_ = params_.index("head.ln.bias");
    head_w1_ = params_.index("head.w1");
    head_b1_ = params_.index("head.b1");
    head_w2_ = params_.index("head.w2");
    head_b2_ = params_.index("head.b2");
}

std::vector<Var> GeoAggregator::bind(Tape& t) const {
    std::vector<Var> pv;
    pv.reserve(params_.size());
    for (const auto& p : params_.tensors()) pv.push_back(t.leaf(p));
    return pv;
}

std::vector<double> GeoAggregator::lambdas() const {
    std::vector<double> out;
    if (layers_.empty()) return out;
    const auto& raw = params_[layers_.front().lambda_raw];
    for (std::size_t h = 0; h < config_.n_heads; ++h) {
        const double r = raw(0, config_.legacy_single_abf ? 0 : h);
        out.push_back(r > 30.0 ? r : std::log1p(std::exp(r)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// forward

Var GeoAggregator::embed(Tape& t, std::span<const Var> pv, const SequenceFeatures& f) const {
    if (f.covariates.cols() != n_covariates_)
        throw ContractError("embed: sequence has " + std::to_string(f.covariates.cols()) +
                            " covariates, model expects " + std::to_string(n_covariates_));
    Var ycol = t.add(t.constant(f.target_col), t.matmul(t.constant(f.is_target), pv[y_mask_]));
    Var e = t.matmul(ycol, pv[emb_y_]);
    if (n_covariates_ > 0) e = t.add(e, t.matmul(t.constant(f.covariates), pv[emb_x_]));
    e = t.add(e, t.matmul(t.constant(f.coords), pv[emb_c_]));
    return t.add_row(e, pv[emb_b_]);
}

Var GeoAggregator::forward_on_tape(Tape& t, std::span<const Var> pv, const SequenceFeatures& f,
                                   AttentionTrace* trace) const {
    const std::size_t H = config_.n_heads;
    const std::size_t L = f.coords.rows();
    const Tensor2 angles = rope_angles(f.coords, config_.head_dim(), H, config_.rope_base);
    Tensor2 target_angle(1, angles.cols());
    std::copy(angles.row(0).begin(), angles.row(0).end(), target_angle.row(0).begin());

    Var h = embed(t, pv, f);
    Var target = h;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerSlots& s = layers_[l];
        const bool last = l + 1 == layers_.size();
        const AttentionWeights pull{pv[s.pull[0]], pv[s.pull[1]], pv[s.pull[2]], pv[s.pull[3]]};
        const AttentionWeights push{pv[s.push[0]], pv[s.push[1]], pv[s.push[2]], pv[s.push[3]]};

        auto ind = induced_block(t, h, pv[s.inducing], pull, push, H);
        h = t.layer_norm_rows(ind.refreshed, pv[s.ln1_g], pv[s.ln1_b]);

        // target attends to every token with a per-head distance penalty
        Var tgt = t.slice_rows(h, 0, 1);
        Var q = t.rotate_pairs(t.matmul(tgt, pv[s.att[0]]), target_angle);
        Var k = t.rotate_pairs(t.matmul(h, pv[s.att[1]]), angles);
        Var v = t.matmul(h, pv[s.att[2]]);
        Var lam = t.softplus(pv[s.lambda_raw]);
        std::vector<Var> lambdas;
        for (std::size_t hh = 0; hh < H; ++hh) lambdas.push_back(t.pick(lam, 0, config_.legacy_single_abf ? 0 : hh));
        auto att = biased_attention(t, q, k, v, &f.bias_dist, lambdas, H);
        if (trace) trace->layers.push_back(att.weights);
        tgt = t.add(tgt, t.matmul(att.output, pv[s.att[3]]));

        auto ffn = [&](Var x) {
            Var n = t.layer_norm_rows(x, pv[s.ln2_g], pv[s.ln2_b]);
            Var z = t.relu(t.add_row(t.matmul(n, pv[s.ffn_w1]), pv[s.ffn_b1]));
            return t.add(x, t.add_row(t.matmul(z, pv[s.ffn_w2]), pv[s.ffn_b2]));
        };
        if (last) {
            // only the target row feeds the head
            target = ffn(tgt);
        } else {
            if (L > 1) {
                const Var parts[2] = {tgt, t.slice_rows(h, 1, L - 1)};
                h = t.concat_rows(parts);
            } else {
                h = tgt;
            }
            h = ffn(h);
        }
    }
    Var n = t.layer_norm_rows(target, pv[head_ln_g_], pv[head_ln_b_]);
    Var z = t.relu(t.add_row(t.matmul(n, pv[head_w1_]), pv[head_b1_]));
    return t.add(t.matmul(z, pv[head_w2_]), pv[head_b2_]);
}

double GeoAggregator::predict(const InputSequence& seq, AttentionTrace* trace) const {
    Tape t;
    const auto pv = bind(t);
    const auto f = make_features(seq, norm_);
    return t.scalar(forward_on_tape(t, pv, f, trace)) * norm_.y_std + norm_.y_mean;
}

Var GeoAggregator::loss_on_tape(Tape& t, std::span<const Var> pv, const InputSequence& seq) const {
    const auto& tgt = seq.target();
    if (!tgt.y) throw ContractError("loss: target id " + std::to_string(tgt.id) + " has no y");
    const auto f = make_features(seq, norm_);
    return t.mse(forward_on_tape(t, pv, f), Tensor2::scalar((*tgt.y - norm_.y_mean) / norm_.y_std));
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr const char* kFormat = "geoaggregator-model";
constexpr int kVersion = 1;

nlohmann::json norm_to_json(const Normalization& n) {
    return {{"x_mean", n.x_mean}, {"x_std", n.x_std},     {"y_mean", n.y_mean},
            {"y_std", n.y_std},   {"u0", n.u0},           {"v0", n.v0},
            {"coord_scale", n.coord_scale}, {"dist_scale2", n.dist_scale2}};
}

Normalization norm_from_json(const nlohmann::json& j) {
    Normalization n;
    n.x_mean = j.at("x_mean").get<std::vector<double>>();
    n.x_std = j.at("x_std").get<std::vector<double>>();
    n.y_mean = j.at("y_mean").get<double>();
    n.y_std = j.at("y_std").get<double>();
    n.u0 = j.at("u0").get<double>();
    n.v0 = j.at("v0").get<double>();
    n.coord_scale = j.at("coord_scale").get<double>();
    n.dist_scale2 = j.at("dist_scale2").get<double>();
    return n;
}

} // namespace

nlohmann::json GeoAggregator::to_json() const {
    nlohmann::json arrays = nlohmann::json::array();
    for (std::size_t i = 0; i < params_.size(); ++i)
        arrays.push_back({{"name", params_.name(i)},
                          {"rows", params_[i].rows()},
                          {"cols", params_[i].cols()},
                          {"data", params_[i].data()}});
    nlohmann::json cfg;
    model::to_json(cfg, config_);
    return {{"config", cfg}, {"n_covariates", n_covariates_}, {"normalization", norm_to_json(norm_)},
            {"arrays", arrays}};
}

GeoAggregator GeoAggregator::from_json(const nlohmann::json& j) {
    GeoAggregator m;
    model::from_json(j.at("config"), m.config_);
    m.config_.validate();
    m.n_covariates_ = j.at("n_covariates").get<std::size_t>();
    m.norm_ = norm_from_json(j.at("normalization"));
    for (const auto& a : j.at("arrays"))
        m.params_.add(a.at("name").get<std::string>(),
                      Tensor2(a.at("rows").get<std::size_t>(), a.at("cols").get<std::size_t>(),
                              a.at("data").get<std::vector<double>>()));
    m.index_slots();
    return m;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
    nlohmann::json j = bundle.model.to_json();
    j["format"] = kFormat;
    j["version"] = kVersion;
    nlohmann::json ctx = nlohmann::json::array();
    for (const auto& p : bundle.context) {
        if (!p.y) throw ContractError("save_model: context point " + std::to_string(p.id) + " has no target");
        ctx.push_back({{"id", p.id}, {"u", p.u}, {"v", p.v}, {"x", p.x}, {"y", *p.y}});
    }
    j["context"] = ctx;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

ModelBundle load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open for reading");
    try {
        nlohmann::json j;
        in >> j;
        if (j.value("format", std::string{}) != kFormat)
            throw ParseError(path.string() + ": not a GeoAggregator model file");
        if (j.at("version").get<int>() != kVersion)
            throw ParseError(path.string() + ": unsupported model format version " + j.at("version").dump());
        ModelBundle b;
        b.model = GeoAggregator::from_json(j);
        for (const auto& c : j.at("context")) {
            PointRecord p;
            p.id = c.at("id").get<std::int64_t>();
            p.u = c.at("u").get<double>();
            p.v = c.at("v").get<double>();
            p.x = c.at("x").get<std::vector<double>>();
            p.y = c.at("y").get<double>();
            b.context.push_back(std::move(p));
        }
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

} // namespace ga::model
