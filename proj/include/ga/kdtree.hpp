#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

namespace ga {

struct Neighbor {
    std::int64_t id = 0;
    double sq_dist = 0.0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Static 2-D k-d tree (median split, alternating u/v axes).
///
/// Points are stored in tree order; node i of a range [lo, hi) is its median
/// element, so no node objects are allocated. Nearest-neighbor results are
/// ordered by (squared distance, id), which makes ties deterministic.
class KdTree {
public:
    struct Point {
        double u = 0.0;
        double v = 0.0;
        std::int64_t id = 0;
    };

    /// Throws ContractError when `points` is empty or a coordinate is not finite.
    explicit KdTree(std::vector<Point> points);

    KdTree(const KdTree&) = delete;
    KdTree& operator=(const KdTree&) = delete;

    std::size_t size() const noexcept { return pts_.size(); }
    /// Height of the tree; 1 for a single point.
    std::size_t depth() const noexcept { return depth_; }

    /// The min(k, size) nearest points to (u, v), ascending. k must be >= 1.
    std::vector<Neighbor> knn(double u, double v, std::size_t k) const;

    /// Number of knn calls since construction or the last reset.
    std::uint64_t query_count() const noexcept { return queries_.load(std::memory_order_relaxed); }
    void reset_query_count() const noexcept { queries_.store(0, std::memory_order_relaxed); }

private:
    std::size_t build(std::size_t lo, std::size_t hi, int axis);
    void search(std::size_t lo, std::size_t hi, int axis, double u, double v, std::size_t k,
                std::vector<Neighbor>& heap) const;

    std::vector<Point> pts_;
    std::size_t depth_ = 0;
    mutable std::atomic<std::uint64_t> queries_{0};
};

} // namespace ga
