#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"

#include "ga/dataset.hpp"
#include "ga/errors.hpp"
#include "ga/explainer.hpp"
#include "ga/synthetic.hpp"

namespace ga::cli {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"model", c.model},         {"train", c.train},
                       {"dataset", c.dataset},     {"n", c.n},
                       {"rho", c.rho},             {"seed", c.seed},
                       {"members", c.members},     {"expansion", c.expansion},
                       {"background", c.background}, {"instances", c.instances},
                       {"lengths", c.lengths},     {"bench_members", c.bench_members}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    static const std::set<std::string> known{"model",      "train",     "dataset", "n",       "rho",
                                             "seed",       "members",   "expansion", "background",
                                             "instances",  "lengths",   "bench_members"};
    if (!j.is_object()) throw ContractError("run config must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ContractError("run config: unknown key '" + k + "'");
    if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<pipeline::TrainConfig>();
    c.dataset = j.value("dataset", c.dataset);
    c.n = j.value("n", c.n);
    c.rho = j.value("rho", c.rho);
    c.seed = j.value("seed", c.seed);
    c.members = j.value("members", c.members);
    c.expansion = j.value("expansion", c.expansion);
    c.background = j.value("background", c.background);
    c.instances = j.value("instances", c.instances);
    c.lengths = j.value("lengths", c.lengths);
    c.bench_members = j.value("bench_members", c.bench_members);
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open config");
    try {
        RunConfig c = nlohmann::json::parse(in).get<RunConfig>();
        c.model.validate();
        c.train.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ContractError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("GA_SEED");
    if (!s || !*s) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (errno != 0 || *end != '\0' || *s == '-') throw ContractError(std::string("GA_SEED is not an unsigned integer: '") + s + "'");
    return static_cast<std::uint64_t>(v);
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
    if (flag) return *flag;
    if (auto e = env_seed()) return *e;
    return config_seed;
}

namespace {

void note(bool verbose, const std::string& msg) {
    if (verbose) std::cerr << msg << '\n';
}

GeoDataset generate(const std::string& dataset, std::size_t n, std::uint64_t seed, double rho) {
    if (dataset == "gwr-r") return synth::generate_gwr(n, seed);
    if (dataset == "sl-r") return synth::generate_sl(n, seed, rho);
    throw ContractError("unknown dataset '" + dataset + "' (expected gwr-r or sl-r)");
}

/// Data rows whose ids are absent from the context pool.
std::vector<PointRecord> query_rows(const std::vector<PointRecord>& data, const ContextPool& context) {
    std::vector<PointRecord> out;
    for (const auto& p : data)
        if (!context.contains(p.id)) out.push_back(p);
    if (out.empty()) throw ContractError("no query rows: every data row is part of the model's context pool");
    return out;
}

void check_schema(const model::GeoAggregator& m, const GeoDataset& ds, const fs::path& path) {
    if (ds.covariate_count() != m.covariate_count())
        throw ParseError(path.string() + ": " + std::to_string(ds.covariate_count()) + " covariates, model expects " +
                         std::to_string(m.covariate_count()));
}

} // namespace

void cmd_gen(const GenOptions& o) {
    if (o.out.empty()) throw ContractError("gen: --out is required");
    const GeoDataset ds = generate(o.dataset, o.n, o.seed, o.rho);
    save_csv(ds, o.out);
    save_meta(ds.meta, meta_path_for(o.out));
}

pipeline::TrainResult cmd_train(const TrainOptions& o) {
    RunConfig cfg;
    if (o.config) cfg = load_run_config(*o.config);
    cfg.train.seed = resolve_seed(o.seed, cfg.train.seed);
    if (o.threads) cfg.train.threads = *o.threads;
    cfg.train.validate();

    const GeoDataset ds = load_csv(o.data);
    const auto split = pipeline::split_dataset(ds.points, cfg.train.split, cfg.train.seed);
    note(o.verbose, "train: " + std::to_string(split.train.size()) + " training rows, " +
                        std::to_string(split.test.size()) + " held out, seed " + std::to_string(cfg.train.seed));
    auto result = pipeline::train(split.train, cfg.model, cfg.train, [&](std::size_t e, double mse) {
        note(o.verbose, "  epoch " + std::to_string(e + 1) + " mse " + format_real(mse));
    });
    model::save_model({result.model, split.train}, o.model_out);
    if (o.loss_out) pipeline::write_loss_csv(result.loss_history, *o.loss_out);
    return result;
}

pipeline::EnsemblePrediction cmd_predict(const PredictOptions& o) {
    const auto bundle = model::load_model(o.model);
    const GeoDataset ds = load_csv(o.data);
    check_schema(bundle.model, ds, o.data);
    const ContextPool context(bundle.context);
    const QueryPool queries(query_rows(ds.points, context));
    auto pred = pipeline::predict_ensemble(bundle.model, queries, context, o.members, o.expansion, o.seed, o.threads);
    pipeline::write_predictions_csv(pred, o.out);
    bool labelled = true;
    for (const auto& q : queries.points()) labelled = labelled && q.y.has_value();
    if (labelled && queries.size() >= 2) {
        const auto m = pipeline::evaluate(pred, queries);
        note(o.verbose, "predict: " + std::to_string(queries.size()) + " rows, R2 " + format_real(m.r2) + ", MAE " +
                            format_real(m.mae));
    }
    return pred;
}

void cmd_explain(const ExplainOptions& o) {
    const auto bundle = model::load_model(o.model);
    const GeoDataset ds = load_csv(o.data);
    check_schema(bundle.model, ds, o.data);
    const ContextPool context(bundle.context);
    const auto candidates = query_rows(ds.points, context);
    if (o.background < 1) throw ContractError("explain: --background must be >= 1");
    if (o.background > context.size()) throw ContractError("explain: --background exceeds the context pool size");

    Rng rng(o.seed);
    std::vector<PointRecord> background;
    for (std::size_t i : rng.sample_sorted(context.size(), o.background)) background.push_back(context[i]);
    std::vector<PointRecord> instances;
    if (o.instances == 0 || o.instances >= candidates.size()) {
        instances = candidates;
    } else {
        for (std::size_t i : rng.sample_sorted(candidates.size(), o.instances)) instances.push_back(candidates[i]);
    }

    const QueryPool pool(instances);
    const auto f = explain::make_shap_predictor(bundle.model, context, pool, {o.members, 1.0, o.seed});
    const auto result = explain::geoshapley_explain(f, instances, background, o.threads);
    const auto betas = explain::local_coefficients(result, instances, background);
    explain::write_explanation_csv(result, betas, o.out);
}

std::vector<pipeline::TimingRow> cmd_bench(const BenchOptions& o) {
    const auto bundle = model::load_model(o.model);
    const GeoDataset ds = load_csv(o.data);
    check_schema(bundle.model, ds, o.data);
    const ContextPool context(bundle.context);
    const QueryPool queries(query_rows(ds.points, context));
    auto rows = pipeline::benchmark_inference(bundle.model, queries, context, o.lengths, o.members,
                                              pipeline::CacheMode::precomputed, o.expansion, o.seed);
    const auto otf = pipeline::benchmark_inference(bundle.model, queries, context, o.lengths, o.members,
                                                   pipeline::CacheMode::on_the_fly, o.expansion, o.seed);
    rows.insert(rows.end(), otf.begin(), otf.end());
    pipeline::write_benchmark_csv(rows, o.out);
    return rows;
}

void cmd_reproduce(const ReproduceOptions& o) {
    RunConfig cfg;
    if (o.config) cfg = load_run_config(*o.config);
    const std::uint64_t seed = resolve_seed(o.seed, cfg.seed);
    fs::create_directories(o.out_dir);
    const fs::path data = o.out_dir / "data.csv";
    const fs::path model_path = o.out_dir / "model.json";
    const fs::path run_config = o.out_dir / "run_config.json";

    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg.train.threads = o.threads;
    {
        std::ofstream out(run_config, std::ios::binary);
        out << nlohmann::json(cfg).dump(2) << '\n';
    }
    note(o.verbose, "reproduce: generating " + cfg.dataset + " (n=" + std::to_string(cfg.n) + ")");
    cmd_gen({cfg.dataset, cfg.n, seed, cfg.rho, data});
    cmd_train({data, run_config, model_path, o.out_dir / "loss.csv", std::nullopt, std::nullopt, o.verbose});
    cmd_predict({model_path, data, cfg.members, cfg.expansion, seed, o.out_dir / "predictions.csv", o.threads, o.verbose});
    note(o.verbose, "reproduce: explaining " + std::to_string(cfg.instances) + " rows");
    cmd_explain({model_path, data, cfg.background, cfg.instances, 1, seed, o.out_dir / "explanations.csv", o.threads});
    note(o.verbose, "reproduce: benchmarking");
    cmd_bench({model_path, data, cfg.lengths, cfg.bench_members, cfg.expansion, seed, o.out_dir / "bench.csv"});
}

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv) {
    CLI::App app{"GeoAggregator: train, predict, explain and benchmark on geospatial tabular data"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
    g->add_option("--dataset", gen.dataset, "gwr-r or sl-r")->check(CLI::IsMember({"gwr-r", "sl-r"}));
    g->add_option("--n", gen.n, "number of points (a perfect square for gwr-r)");
    g->add_option("--seed", gen.seed);
    g->add_option("--rho", gen.rho, "spatial lag strength for sl-r");
    g->add_option("--out", gen.out)->required();

    TrainOptions tr;
    std::string tr_config;
    std::uint64_t tr_seed = 0;
    std::size_t tr_threads = 1;
    std::string tr_loss;
    auto* t = app.add_subcommand("train", "train a model on the split's training part");
    t->add_option("--data", tr.data)->required();
    auto* tr_config_opt = t->add_option("--config", tr_config, "run config JSON");
    t->add_option("--model-out", tr.model_out)->required();
    auto* tr_loss_opt = t->add_option("--loss-out", tr_loss, "loss history CSV");
    auto* tr_seed_opt = t->add_option("--seed", tr_seed);
    auto* tr_threads_opt = t->add_option("--threads", tr_threads)->check(CLI::PositiveNumber);

    PredictOptions pr;
    auto* p = app.add_subcommand("predict", "ensemble prediction for rows outside the context pool");
    p->add_option("--model", pr.model)->required();
    p->add_option("--data", pr.data)->required();
    p->add_option("--members", pr.members)->check(CLI::PositiveNumber);
    p->add_option("--expansion", pr.expansion);
    auto* pr_seed_opt = p->add_option("--seed", pr.seed);
    p->add_option("--out", pr.out)->required();
    p->add_option("--threads", pr.threads)->check(CLI::PositiveNumber);

    ExplainOptions ex;
    auto* e = app.add_subcommand("explain", "GeoShapley explanation of query rows");
    e->add_option("--model", ex.model)->required();
    e->add_option("--data", ex.data)->required();
    e->add_option("--background", ex.background, "number of background rows from the context pool");
    e->add_option("--instances", ex.instances, "number of rows to explain (0 = all)");
    e->add_option("--members", ex.members, "ensemble members averaged by the explained predictor")
        ->check(CLI::PositiveNumber);
    auto* ex_seed_opt = e->add_option("--seed", ex.seed);
    e->add_option("--out", ex.out)->required();
    e->add_option("--threads", ex.threads)->check(CLI::PositiveNumber);

    BenchOptions be;
    auto* b = app.add_subcommand("bench", "inference timing with and without the neighbour cache");
    b->add_option("--model", be.model)->required();
    b->add_option("--data", be.data)->required();
    b->add_option("--lengths", be.lengths)->delimiter(',');
    b->add_option("--members", be.members)->check(CLI::PositiveNumber);
    b->add_option("--expansion", be.expansion);
    auto* be_seed_opt = b->add_option("--seed", be.seed);
    b->add_option("--out", be.out)->required();

    ReproduceOptions re;
    std::string re_config;
    std::uint64_t re_seed = 0;
    auto* r = app.add_subcommand("reproduce", "gen, train, predict, explain and bench in one go");
    auto* re_config_opt = r->add_option("--config", re_config);
    r->add_option("--out-dir", re.out_dir)->required();
    auto* re_seed_opt = r->add_option("--seed", re_seed);
    r->add_option("--threads", re.threads)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (g->parsed()) {
            cmd_gen(gen);
        } else if (t->parsed()) {
            if (*tr_config_opt) tr.config = tr_config;
            if (*tr_loss_opt) tr.loss_out = tr_loss;
            if (*tr_seed_opt) tr.seed = tr_seed;
            if (*tr_threads_opt) tr.threads = tr_threads;
            cmd_train(tr);
        } else if (p->parsed()) {
            if (!*pr_seed_opt) pr.seed = resolve_seed(std::nullopt, pr.seed);
            cmd_predict(pr);
        } else if (e->parsed()) {
            if (!*ex_seed_opt) ex.seed = resolve_seed(std::nullopt, ex.seed);
            cmd_explain(ex);
        } else if (b->parsed()) {
            if (!*be_seed_opt) be.seed = resolve_seed(std::nullopt, be.seed);
            cmd_bench(be);
        } else if (r->parsed()) {
            if (*re_config_opt) re.config = re_config;
            if (*re_seed_opt) re.seed = re_seed;
            cmd_reproduce(re);
        }
    } catch (const ContractError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace ga::cli
