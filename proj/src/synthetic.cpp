#include "ga/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ga/errors.hpp"
#include "ga/kdtree.hpp"
#include "ga/rng.hpp"

namespace ga::synth {

double gwr_beta1(double u, double v) { return 3.0 * (u + v) / 2.0; }

double gwr_beta2(double u, double v) {
    const double du = u - 0.5, dv = v - 0.5;
    return 1.0 + 2.0 * std::exp(-(du * du + dv * dv) / 0.1);
}

GeoDataset generate_gwr(std::size_t n, std::uint64_t seed) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw ContractError("generate_gwr: n = " + std::to_string(n) + " is not a perfect square");
    if (n < 100) throw ContractError("generate_gwr: n must be at least 100");

    Rng rng(seed);
    GeoDataset ds;
    ds.points.reserve(n);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            PointRecord p;
            p.id = static_cast<std::int64_t>(r * side + c);
            p.u = (static_cast<double>(c) + 0.5) / static_cast<double>(side);
            p.v = (static_cast<double>(r) + 0.5) / static_cast<double>(side);
            const double x1 = rng.normal();
            const double x2 = rng.normal();
            const double eps = rng.normal(0.0, kGwrNoiseSd);
            p.x = {x1, x2};
            p.y = gwr_beta1(p.u, p.v) * x1 + gwr_beta2(p.u, p.v) * x2 + eps;
            ds.points.push_back(std::move(p));
        }
    }
    ds.meta.generator = "gwr-r";
    ds.meta.seed = seed;
    ds.meta.params = {{"n", n}, {"noise_sd", kGwrNoiseSd}};
    return ds;
}

std::vector<double> SpatialWeights::lag(std::span<const double> y) const {
    std::vector<double> out(neighbors.size(), 0.0);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        if (neighbors[i].empty()) continue;
        double s = 0.0;
        for (std::size_t j : neighbors[i]) s += y[j];
        out[i] = s / static_cast<double>(neighbors[i].size());
    }
    return out;
}

SpatialWeights knn_weights(const std::vector<PointRecord>& points, std::size_t k) {
    std::vector<KdTree::Point> tp;
    tp.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        tp.push_back({points[i].u, points[i].v, static_cast<std::int64_t>(i)});
    KdTree tree(std::move(tp));
    SpatialWeights w;
    w.neighbors.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (const auto& nb : tree.knn(points[i].u, points[i].v, k + 1)) {
            if (static_cast<std::size_t>(nb.id) == i || w.neighbors[i].size() == k) continue;
            w.neighbors[i].push_back(static_cast<std::size_t>(nb.id));
        }
    }
    return w;
}

std::vector<double> solve_spatial_lag(const SpatialWeights& w, double rho, std::span<const double> b, double tol) {
    if (b.size() != w.neighbors.size()) throw ContractError("solve_spatial_lag: size mismatch");
    std::vector<double> y(b.begin(), b.end());
    auto residual = [&](const std::vector<double>& cur) {
        const auto wy = w.lag(cur);
        double r = 0.0;
        for (std::size_t i = 0; i < cur.size(); ++i) r = std::max(r, std::abs(cur[i] - rho * wy[i] - b[i]));
        return r;
    };
    constexpr int kMaxIter = 10000;
    for (int it = 0; it < kMaxIter; ++it) {
        if (residual(y) < tol) return y;
        const auto wy = w.lag(y);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = b[i] + rho * wy[i];
    }
    throw SolverError("solve_spatial_lag: no convergence for rho = " + std::to_string(rho) +
                      " (I - rho W may be singular)");
}

GeoDataset generate_sl(std::size_t n, std::uint64_t seed, double rho) {
    if (!(std::abs(rho) < 1.0)) throw ContractError("generate_sl: |rho| must be < 1");
    if (n < 100) throw ContractError("generate_sl: n must be at least 100");

    Rng rng(seed);
    GeoDataset ds;
    ds.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = ds.points[i];
        p.id = static_cast<std::int64_t>(i);
        p.u = rng.uniform();
        p.v = rng.uniform();
    }
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = ds.points[i];
        const double x1 = rng.normal();
        const double x2 = rng.normal();
        const double eps = rng.normal(0.0, kSlNoiseSd);
        p.x = {x1, x2};
        b[i] = kSlBeta1 * x1 + kSlBeta2 * x2 + eps;
    }
    const auto w = knn_weights(ds.points, kSlNeighbors);
    const auto y = solve_spatial_lag(w, rho, b);
    for (std::size_t i = 0; i < n; ++i) ds.points[i].y = y[i];

    ds.meta.generator = "sl-r";
    ds.meta.seed = seed;
    ds.meta.params = {{"n", n}, {"rho", rho}, {"noise_sd", kSlNoiseSd}, {"beta", {kSlBeta1, kSlBeta2}},
                      {"neighbors", kSlNeighbors}};
    return ds;
}

} // namespace ga::synth
