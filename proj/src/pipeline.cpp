#include "ga/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "ga/adam.hpp"
#include "ga/errors.hpp"
#include "ga/rng.hpp"

namespace ga::pipeline {

using model::GeoAggregator;
using num::Tape;
using num::Tensor2;

void TrainConfig::validate() const {
    if (batch < 1) throw ContractError("TrainConfig: batch must be >= 1");
    if (!(lr > 0.0)) throw ContractError("TrainConfig: lr must be positive");
    if (!(expansion_factor >= 1.0)) throw ContractError("TrainConfig: expansion_factor must be >= 1");
    if (!(split > 0.0 && split < 1.0)) throw ContractError("TrainConfig: split must lie in (0, 1)");
    if (threads < 1) throw ContractError("TrainConfig: threads must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs}, {"batch", c.batch},   {"lr", c.lr},
                       {"seed", c.seed},     {"expansion_factor", c.expansion_factor},
                       {"split", c.split},   {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    static const std::set<std::string> known{"epochs", "batch", "lr", "seed", "expansion_factor", "split", "threads"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ContractError("train config: unknown key '" + k + "'");
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.expansion_factor = j.value("expansion_factor", c.expansion_factor);
    c.split = j.value("split", c.split);
    c.threads = j.value("threads", c.threads);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex mu;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

Split split_dataset(const std::vector<PointRecord>& points, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("split: fraction must lie in (0, 1)");
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(points.size())));
    std::vector<char> in_train(points.size(), 0);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = 1;
    Split s;
    for (std::size_t i = 0; i < points.size(); ++i) (in_train[i] ? s.train : s.test).push_back(points[i]);
    return s;
}

// ---------------------------------------------------------------------------
// training

TrainResult train(const std::vector<PointRecord>& train_points, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch) {
    mcfg.validate();
    tcfg.validate();
    if (train_points.size() < mcfg.max_len)
        throw ContractError("train: " + std::to_string(train_points.size()) + " training points, need at least L_max = " +
                            std::to_string(mcfg.max_len));
    for (const auto& p : train_points)
        if (!p.y) throw ContractError("train: point " + std::to_string(p.id) + " has no target");

    const ContextPool pool(train_points);
    const QueryPool queries(train_points);
    auto norm = model::fit_normalization(pool, mcfg.max_len);
    TrainResult res{GeoAggregator(mcfg, train_points.front().x.size(), std::move(norm), tcfg.seed), {}};
    GeoAggregator& m = res.model;
    if (tcfg.epochs == 0) return res;

    const std::size_t k = std::min(expanded_k(mcfg.max_len, tcfg.expansion_factor), pool.size());
    const NeighborCache cache = precompute_neighbors(queries, pool, k);

    num::AdamState adam;
    const num::AdamConfig acfg{tcfg.lr};
    Rng rng(tcfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(queries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t np = m.params().size();
    const double y_var = m.normalization().y_std * m.normalization().y_std;

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch) {
            const std::size_t bsz = std::min(tcfg.batch, order.size() - start);
            std::vector<InputSequence> seqs;
            seqs.reserve(bsz);
            for (std::size_t b = 0; b < bsz; ++b)
                seqs.push_back(assemble_sequence(queries[order[start + b]], cache, pool, mcfg.max_len, rng));

            std::vector<Tensor2> grads;
            grads.reserve(np);
            for (const auto& p : m.params().tensors()) grads.emplace_back(p.rows(), p.cols());
            std::vector<double> losses(bsz);
            if (tcfg.threads == 1) {
                for (std::size_t b = 0; b < bsz; ++b) {
                    Tape t;
                    const auto pv = m.bind(t);
                    auto loss = m.loss_on_tape(t, pv, seqs[b]);
                    t.backward(loss);
                    losses[b] = t.scalar(loss);
                    for (std::size_t i = 0; i < np; ++i) t.add_grad_to(pv[i], grads[i]);
                }
            } else {
                std::vector<std::vector<Tensor2>> per(bsz);
                parallel_for(bsz, tcfg.threads, [&](std::size_t b) {
                    Tape t;
                    const auto pv = m.bind(t);
                    auto loss = m.loss_on_tape(t, pv, seqs[b]);
                    t.backward(loss);
                    losses[b] = t.scalar(loss);
                    per[b].reserve(np);
                    for (std::size_t i = 0; i < np; ++i) per[b].push_back(t.grad(pv[i]));
                });
                for (std::size_t b = 0; b < bsz; ++b)
                    for (std::size_t i = 0; i < np; ++i)
                        for (std::size_t e = 0; e < grads[i].size(); ++e) grads[i].data()[e] += per[b][i].data()[e];
            }
            const double inv = 1.0 / static_cast<double>(bsz);
            for (auto& g : grads)
                for (double& v : g.data()) v *= inv;
            for (double l : losses) epoch_loss += l;
            num::adam_step(m.params().tensors(), grads, adam, acfg);
        }
        const double mse = epoch_loss / static_cast<double>(order.size()) * y_var;
        res.loss_history.push_back(mse);
        if (on_epoch) on_epoch(epoch, mse);
    }
    return res;
}

// ---------------------------------------------------------------------------
// inference

EnsemblePrediction aggregate_members(std::vector<std::int64_t> ids, std::vector<std::vector<double>> members) {
    if (members.empty()) throw ContractError("ensemble: at least one member is required");
    EnsemblePrediction out;
    const std::size_t n = ids.size();
    const std::size_t M = members.size();
    for (const auto& mem : members)
        if (mem.size() != n) throw ContractError("ensemble: member output length mismatch");
    out.ids = std::move(ids);
    out.mean.assign(n, 0.0);
    out.std.assign(n, 0.0);
    out.member_count = M;
    for (std::size_t i = 0; i < n; ++i) {
        // shifted by the first member so identical outputs give σ = 0 exactly
        const double ref = members[0][i];
        double s = 0.0;
        for (std::size_t k = 0; k < M; ++k) s += members[k][i] - ref;
        const double mean = ref + s / static_cast<double>(M);
        out.mean[i] = mean;
        if (M > 1) {
            double ss = 0.0;
            for (std::size_t k = 0; k < M; ++k) ss += (members[k][i] - mean) * (members[k][i] - mean);
            out.std[i] = std::sqrt(ss / static_cast<double>(M - 1));
        }
    }
    out.members = std::move(members);
    return out;
}

EnsemblePrediction predict_ensemble(const GeoAggregator& m, const QueryPool& queries, const ContextPool& context,
                                    std::size_t members, double expansion, std::uint64_t seed, std::size_t threads) {
    if (members < 1) throw ContractError("predict_ensemble: members must be >= 1");
    const std::size_t L = m.config().max_len;
    const std::size_t k = std::min(expanded_k(L, expansion), context.size());
    const NeighborCache cache = precompute_neighbors(queries, context, k);
    std::vector<std::vector<double>> out(members, std::vector<double>(queries.size()));
    parallel_for(members, threads, [&](std::size_t member) {
        Rng rng(seed ^ static_cast<std::uint64_t>(member));
        for (std::size_t i = 0; i < queries.size(); ++i)
            out[member][i] = m.predict(assemble_sequence(queries[i], cache, context, L, rng));
    });
    std::vector<std::int64_t> ids;
    ids.reserve(queries.size());
    for (const auto& q : queries.points()) ids.push_back(q.id);
    return aggregate_members(std::move(ids), std::move(out));
}

Metrics evaluate(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ContractError("evaluate: prediction/truth length mismatch");
    if (truth.size() < 2) throw ContractError("evaluate: R^2 undefined for fewer than two truth values");
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double sse = 0.0, sst = 0.0, abs = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = pred[i] - truth[i];
        sse += e * e;
        sst += (truth[i] - mean) * (truth[i] - mean);
        abs += std::abs(e);
    }
    if (!(sst > 0.0)) throw ContractError("evaluate: R^2 undefined for zero-variance truth");
    return {1.0 - sse / sst, abs / static_cast<double>(truth.size())};
}

Metrics evaluate(const EnsemblePrediction& pred, const QueryPool& truth) {
    std::vector<double> y;
    y.reserve(pred.ids.size());
    for (auto id : pred.ids) {
        const auto& p = truth.at(id);
        if (!p.y) throw ContractError("evaluate: id " + std::to_string(id) + " has no target");
        y.push_back(*p.y);
    }
    return evaluate(pred.mean, y);
}

// ---------------------------------------------------------------------------
// baseline

double LinearFit::predict(const PointRecord& p) const {
    double s = intercept;
    for (std::size_t j = 0; j < coef.size(); ++j) s += coef[j] * p.x[j];
    return s;
}

LinearFit fit_ols(const std::vector<PointRecord>& points) {
    if (points.empty()) throw ContractError("fit_ols: no points");
    const std::size_t p = points.front().x.size();
    const std::size_t n = p + 1;
    // normal equations on [1, x]
    std::vector<double> a(n * n, 0.0), b(n, 0.0);
    std::vector<double> row(n);
    for (const auto& pt : points) {
        if (!pt.y) throw ContractError("fit_ols: point " + std::to_string(pt.id) + " has no target");
        row[0] = 1.0;
        for (std::size_t j = 0; j < p; ++j) row[j + 1] = pt.x[j];
        for (std::size_t r = 0; r < n; ++r) {
            b[r] += row[r] * *pt.y;
            for (std::size_t c = 0; c < n; ++c) a[r * n + c] += row[r] * row[c];
        }
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        if (std::abs(a[piv * n + col]) < 1e-12) throw SolverError("fit_ols: singular design matrix");
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
            std::swap(b[col], b[piv]);
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r * n + col] / a[col * n + col];
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    LinearFit fit;
    fit.intercept = b[0] / a[0];
    for (std::size_t j = 0; j < p; ++j) fit.coef.push_back(b[j + 1] / a[(j + 1) * n + j + 1]);
    return fit;
}

// ---------------------------------------------------------------------------
// benchmark

std::string to_string(CacheMode m) { return m == CacheMode::precomputed ? "precomputed" : "on_the_fly"; }

std::vector<TimingRow> benchmark_inference(const GeoAggregator& m, const QueryPool& queries, const ContextPool& context,
                                           std::span<const std::size_t> lengths, std::size_t members, CacheMode mode,
                                           double expansion, std::uint64_t seed) {
    if (!std::is_sorted(lengths.begin(), lengths.end())) throw ContractError("benchmark: lengths must be ascending");
    if (members < 1) throw ContractError("benchmark: members must be >= 1");
    std::vector<TimingRow> rows;
    double sink = 0.0;
    for (std::size_t L : lengths) {
        if (L < 2) throw ContractError("benchmark: sequence length must be >= 2");
        const std::size_t k = std::min(expanded_k(L, expansion), context.size());
        context.tree().reset_query_count();
        const auto t0 = std::chrono::steady_clock::now();
        if (mode == CacheMode::precomputed) {
            const NeighborCache cache = precompute_neighbors(queries, context, k);
            for (std::size_t member = 0; member < members; ++member) {
                Rng rng(seed ^ static_cast<std::uint64_t>(member));
                for (const auto& q : queries.points()) sink += m.predict(assemble_sequence(q, cache, context, L, rng));
            }
        } else {
            for (std::size_t member = 0; member < members; ++member) {
                Rng rng(seed ^ static_cast<std::uint64_t>(member));
                for (const auto& q : queries.points())
                    sink += m.predict(assemble_sequence_on_the_fly(q, context, k, L, rng));
            }
        }
        const auto t1 = std::chrono::steady_clock::now();
        rows.push_back({L, mode, std::chrono::duration<double>(t1 - t0).count(), context.tree().query_count()});
    }
    if (!std::isfinite(sink)) throw std::runtime_error("benchmark: non-finite predictions");
    return rows;
}

// ---------------------------------------------------------------------------
// writers

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

} // namespace

void write_predictions_csv(const EnsemblePrediction& pred, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "id,y_mean,y_std\n";
    for (std::size_t i = 0; i < pred.ids.size(); ++i)
        out << pred.ids[i] << ',' << format_real(pred.mean[i]) << ',' << format_real(pred.std[i]) << '\n';
}

void write_loss_csv(std::span<const double> history, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "epoch,mse\n";
    for (std::size_t e = 0; e < history.size(); ++e) out << (e + 1) << ',' << format_real(history[e]) << '\n';
}

void write_benchmark_csv(std::span<const TimingRow> rows, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "length,mode,seconds\n";
    std::map<std::size_t, std::map<CacheMode, double>> by_len;
    for (const auto& r : rows) {
        out << r.length << ',' << to_string(r.mode) << ',' << format_real(r.seconds) << '\n';
        by_len[r.length][r.mode] = r.seconds;
    }
    double ratio_sum = 0.0;
    std::size_t count = 0;
    for (const auto& [len, modes] : by_len) {
        auto pre = modes.find(CacheMode::precomputed);
        auto otf = modes.find(CacheMode::on_the_fly);
        if (pre == modes.end() || otf == modes.end() || !(otf->second > 0.0)) continue;
        ratio_sum += pre->second / otf->second;
        ++count;
    }
    if (count) out << "all,ratio," << format_real(ratio_sum / static_cast<double>(count)) << '\n';
}

} // namespace ga::pipeline
