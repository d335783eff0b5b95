#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ga/dataset.hpp"

namespace ga::synth {

/// Spatially varying coefficient surfaces of the GWR-r generator.
double gwr_beta1(double u, double v);
double gwr_beta2(double u, double v);

inline constexpr double kGwrNoiseSd = 0.25;
inline constexpr double kSlNoiseSd = 0.5;
inline constexpr double kSlBeta1 = 2.0;
inline constexpr double kSlBeta2 = 3.0;
inline constexpr std::size_t kSlNeighbors = 8;

/// GWR-r: √n×√n grid of cell centres on [0,1]², x1,x2 ~ N(0,1),
/// y = β1(u,v)·x1 + β2(u,v)·x2 + N(0, 0.25²).
/// Ids run 0..n−1 in row-major grid order (v outer, u inner); per point the
/// draws are x1, x2, ε in that order. Throws ContractError unless n is a
/// perfect square >= 100.
GeoDataset generate_gwr(std::size_t n, std::uint64_t seed);

/// SL-r: uniform coordinates, x1,x2 ~ N(0,1), β = (2,3), W the
/// row-standardised 8-NN adjacency, y = (I − ρW)⁻¹(Xβ + ε), ε ~ N(0, 0.5²).
/// Draw order: u,v for every point, then x1,x2,ε for every point.
GeoDataset generate_sl(std::size_t n, std::uint64_t seed, double rho);

/// Row-standardised k-nearest-neighbour weights (self excluded); row i holds
/// the ids of point i's neighbours, each with weight 1/k.
struct SpatialWeights {
    std::vector<std::vector<std::size_t>> neighbors;

    /// (W·y)_i
    std::vector<double> lag(std::span<const double> y) const;
};

/// Indices refer to positions in `points`.
SpatialWeights knn_weights(const std::vector<PointRecord>& points, std::size_t k);

/// Solves (I − ρW) y = b by fixed-point iteration until the max-norm
/// residual falls below `tol`. Throws SolverError on non-convergence.
std::vector<double> solve_spatial_lag(const SpatialWeights& w, double rho, std::span<const double> b,
                                      double tol = 1e-10);

} // namespace ga::synth
