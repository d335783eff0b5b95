#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ga/dataset.hpp"
#include "ga/kdtree.hpp"
#include "ga/rng.hpp"
#include "ga/tensor.hpp"

namespace testutil {

inline ga::num::Tensor2 random_tensor(ga::Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
    ga::num::Tensor2 t(r, c);
    for (double& x : t.data()) x = rng.normal(0.0, sd);
    return t;
}

/// Sort-everything k-NN, ordered by (squared distance, id).
inline std::vector<ga::Neighbor> brute_knn(const std::vector<ga::KdTree::Point>& pts, double u, double v,
                                           std::size_t k) {
    std::vector<ga::Neighbor> all;
    for (const auto& p : pts) {
        const double du = u - p.u, dv = v - p.v;
        all.push_back({p.id, du * du + dv * dv});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.sq_dist != b.sq_dist ? a.sq_dist < b.sq_dist : a.id < b.id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

inline std::vector<ga::KdTree::Point> random_points(ga::Rng& rng, std::size_t n) {
    std::vector<ga::KdTree::Point> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = {rng.uniform(), rng.uniform(), static_cast<std::int64_t>(i)};
    return pts;
}

/// Records with p covariates and a target; ids 0..n-1.
inline std::vector<ga::PointRecord> random_records(ga::Rng& rng, std::size_t n, std::size_t p) {
    std::vector<ga::PointRecord> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].id = static_cast<std::int64_t>(i);
        out[i].u = rng.uniform();
        out[i].v = rng.uniform();
        for (std::size_t j = 0; j < p; ++j) out[i].x.push_back(rng.normal());
        out[i].y = rng.normal();
    }
    return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace testutil
