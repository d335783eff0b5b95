#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ga/errors.hpp"
#include "ga/pipeline.hpp"
#include "ga/synthetic.hpp"
#include "model_fixtures.hpp"

using namespace ga::pipeline;
using ga::model::GeoAggregator;
using ga::model::ModelConfig;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<ga::PointRecord> linear_toy(std::size_t n, std::uint64_t seed) {
    ga::Rng rng(seed);
    auto pts = testutil::random_records(rng, n, 2);
    for (auto& p : pts) p.y = 2.0 * p.x[0] + 3.0 * p.x[1];
    return pts;
}

ModelConfig small_config() {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_inducing = 4;
    c.max_len = 16;
    c.n_layers = 1;
    return c;
}

/// Trained once and shared by the inference tests below.
const TrainResult& shared_model() {
    static const TrainResult r = [] {
        TrainConfig tc;
        tc.epochs = 3;
        tc.seed = 5;
        return train(linear_toy(200, 1), small_config(), tc);
    }();
    return r;
}

} // namespace

TEST_CASE("train config") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(nlohmann::json(c).get<TrainConfig>() == c);
    nlohmann::json j = c;
    j["schedule"] = "cosine";
    CHECK_THROWS_AS(j.get<TrainConfig>(), ga::ContractError);
    c.split = 1.0;
    CHECK_THROWS_AS(c.validate(), ga::ContractError);
}

TEST_CASE("split") {
    const auto pts = linear_toy(100, 2);
    const auto s = split_dataset(pts, 0.7, 9);
    CHECK(s.train.size() == 70);
    CHECK(s.test.size() == 30);
    std::set<std::int64_t> ids;
    for (const auto& p : s.train) ids.insert(p.id);
    for (const auto& p : s.test) CHECK(ids.insert(p.id).second);
    const auto again = split_dataset(pts, 0.7, 9);
    CHECK(again.train == s.train);
    CHECK_FALSE(split_dataset(pts, 0.7, 10).train == s.train);
}

TEST_CASE("evaluate") {
    const std::vector<double> y{0, 1, 2};
    auto m = evaluate(y, y);
    CHECK(m.r2 == 1.0);
    CHECK(m.mae == 0.0);
    const std::vector<double> flat{1, 1, 1};
    CHECK(evaluate(flat, y).r2 == doctest::Approx(0.0).epsilon(1e-15));
    const std::vector<double> hand{0, 1, 1};
    m = evaluate(hand, y);
    CHECK(m.mae == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(m.r2 == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(evaluate(std::vector<double>{1}, std::vector<double>{1}), ga::ContractError);
    CHECK_THROWS_AS(evaluate(flat, flat), ga::ContractError);
}

TEST_CASE("ols baseline recovers a linear model") {
    auto pts = linear_toy(50, 3);
    for (auto& p : pts) *p.y += 0.5;
    const auto fit = fit_ols(pts);
    CHECK(fit.intercept == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(fit.coef[0] == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(fit.coef[1] == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("training basics") {
    const auto pts = linear_toy(120, 4);
    TrainConfig tc;
    tc.seed = 8;
    tc.epochs = 0;
    const auto zero = train(pts, small_config(), tc);
    CHECK(zero.loss_history.empty());
    const ga::ContextPool pool(pts);
    CHECK(zero.model == GeoAggregator(small_config(), 2, ga::model::fit_normalization(pool, 16), 8));

    tc.epochs = 2;
    const auto a = train(pts, small_config(), tc);
    CHECK(a.loss_history.size() == 2);
    CHECK(train(pts, small_config(), tc).model == a.model);
    tc.threads = 3;
    CHECK(train(pts, small_config(), tc).model == a.model);

    const std::vector<ga::PointRecord> few(pts.begin(), pts.begin() + 10);
    CHECK_THROWS_AS(train(few, small_config(), tc), ga::ContractError);
}

TEST_CASE("noiseless linear toy is learnt") {
    const auto pts = linear_toy(400, 6);
    TrainConfig tc;
    tc.epochs = 50;
    tc.seed = 1;
    const auto r = train(pts, small_config(), tc);
    CHECK(r.loss_history.back() < r.loss_history.front());
    const ga::ContextPool pool(pts);
    const auto pred = predict_ensemble(r.model, pool, pool, 1, 1.0, 0);
    CHECK(evaluate(pred, pool).r2 > 0.99);
}

TEST_CASE("ensemble prediction") {
    const auto& m = shared_model().model;
    const auto pts = linear_toy(150, 20);
    std::vector<ga::PointRecord> q;
    for (auto p : std::vector<ga::PointRecord>(pts.begin(), pts.begin() + 30)) {
        p.id += 1000;
        q.push_back(p);
    }
    const ga::ContextPool ctx(std::vector<ga::PointRecord>(pts.begin() + 30, pts.end()));
    const ga::QueryPool queries(q);

    SUBCASE("one member") {
        const auto a = predict_ensemble(m, queries, ctx, 1, 1.25, 3);
        CHECK(a.member_count == 1);
        for (double s : a.std) CHECK(s == 0.0);
        CHECK(predict_ensemble(m, queries, ctx, 1, 1.25, 3).mean == a.mean);
    }
    SUBCASE("eight members") {
        const auto e = predict_ensemble(m, queries, ctx, 8, 1.25, 3);
        CHECK(e.member_count == 8);
        std::size_t spread = 0;
        for (std::size_t i = 0; i < e.ids.size(); ++i) {
            double s = 0.0;
            for (const auto& mem : e.members) s += mem[i];
            CHECK(std::abs(e.mean[i] - s / 8.0) < 1e-12);
            CHECK(e.std[i] >= 0.0);
            if (e.std[i] > 0.0) ++spread;
        }
        CHECK(spread > 0);
        CHECK(predict_ensemble(m, queries, ctx, 8, 1.25, 3, 4).mean == e.mean);

        auto shuffled = e.members;
        std::reverse(shuffled.begin(), shuffled.end());
        const auto p = aggregate_members(e.ids, shuffled);
        for (std::size_t i = 0; i < e.ids.size(); ++i) {
            CHECK(std::abs(p.mean[i] - e.mean[i]) < 1e-12);
            CHECK(std::abs(p.std[i] - e.std[i]) < 1e-12);
        }

        // squared error of the mean never exceeds the mean member squared error
        double ens = 0.0, members = 0.0;
        for (std::size_t i = 0; i < e.ids.size(); ++i) {
            const double y = *queries.at(e.ids[i]).y;
            ens += (e.mean[i] - y) * (e.mean[i] - y);
            for (const auto& mem : e.members) members += (mem[i] - y) * (mem[i] - y) / 8.0;
        }
        CHECK(ens <= members + 1e-12);
    }
    SUBCASE("no expansion means no spread") {
        const auto e = predict_ensemble(m, queries, ctx, 8, 1.0, 3);
        for (double s : e.std) CHECK(s == 0.0);
        CHECK(e.mean == predict_ensemble(m, queries, ctx, 1, 1.0, 99).mean);
    }
    SUBCASE("query counts") {
        const std::size_t lengths[] = {8, 16};
        const auto pre = benchmark_inference(m, queries, ctx, lengths, 4, CacheMode::precomputed, 1.25, 0);
        const auto otf = benchmark_inference(m, queries, ctx, lengths, 4, CacheMode::on_the_fly, 1.25, 0);
        for (const auto& r : pre) CHECK(r.tree_queries == 30);
        for (const auto& r : otf) CHECK(r.tree_queries == 120);
        const std::size_t bad[] = {16, 8};
        CHECK_THROWS_AS(benchmark_inference(m, queries, ctx, bad, 1, CacheMode::precomputed, 1.25, 0),
                        ga::ContractError);

        std::vector<TimingRow> rows = pre;
        rows.insert(rows.end(), otf.begin(), otf.end());
        const auto path = std::filesystem::temp_directory_path() / "ga_bench_test.csv";
        write_benchmark_csv(rows, path);
        const auto text = slurp(path);
        CHECK(text.rfind("length,mode,seconds\n8,precomputed,", 0) == 0);
        CHECK(text.find("\nall,ratio,") != std::string::npos);
        CHECK(std::count(text.begin(), text.end(), '\n') == 6);
    }
}

TEST_CASE("csv writers") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::vector<double> hist{1.5, 0.25};
    write_loss_csv(hist, dir / "ga_loss.csv");
    CHECK(slurp(dir / "ga_loss.csv") == "epoch,mse\n1,1.5\n2,0.25\n");
    const auto e = aggregate_members({4, 9}, {{1.0, 2.0}, {3.0, 2.0}});
    write_predictions_csv(e, dir / "ga_pred.csv");
    CHECK(slurp(dir / "ga_pred.csv") == "id,y_mean,y_std\n4,2,1.4142135623730951\n9,2,0\n");
}
