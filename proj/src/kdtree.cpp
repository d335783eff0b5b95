#include "ga/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ga/errors.hpp"

namespace ga {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
    return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.id < b.id);
}

double coord(const KdTree::Point& p, int axis) { return axis == 0 ? p.u : p.v; }

} // namespace

KdTree::KdTree(std::vector<Point> points) : pts_(std::move(points)) {
    if (pts_.empty()) throw ContractError("KdTree: cannot build over an empty pool");
    for (const auto& p : pts_)
        if (!std::isfinite(p.u) || !std::isfinite(p.v))
            throw ContractError("KdTree: non-finite coordinates for id " + std::to_string(p.id));
    depth_ = build(0, pts_.size(), 0);
}

std::size_t KdTree::build(std::size_t lo, std::size_t hi, int axis) {
    if (hi <= lo) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    auto first = pts_.begin() + static_cast<std::ptrdiff_t>(lo);
    std::nth_element(first, pts_.begin() + static_cast<std::ptrdiff_t>(mid), pts_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [axis](const Point& a, const Point& b) {
                         const double ca = coord(a, axis), cb = coord(b, axis);
                         return ca < cb || (ca == cb && a.id < b.id);
                     });
    const std::size_t l = build(lo, mid, 1 - axis);
    const std::size_t r = build(mid + 1, hi, 1 - axis);
    return 1 + std::max(l, r);
}

std::vector<Neighbor> KdTree::knn(double u, double v, std::size_t k) const {
    if (k == 0) throw ContractError("knn: k must be at least 1");
    queries_.fetch_add(1, std::memory_order_relaxed);
    k = std::min(k, pts_.size());
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    search(0, pts_.size(), 0, u, v, k, heap);
    std::sort_heap(heap.begin(), heap.end(), closer);
    return heap;
}

void KdTree::search(std::size_t lo, std::size_t hi, int axis, double u, double v, std::size_t k,
                    std::vector<Neighbor>& heap) const {
    if (hi <= lo) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const Point& p = pts_[mid];
    const double du = u - p.u, dv = v - p.v;
    const Neighbor cand{p.id, du * du + dv * dv};
    if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
    } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
    }

    const double diff = axis == 0 ? du : dv;
    const bool go_left = diff < 0.0;
    if (go_left)
        search(lo, mid, 1 - axis, u, v, k, heap);
    else
        search(mid + 1, hi, 1 - axis, u, v, k, heap);
    // Equal-distance points on the far side may still win on id.
    if (heap.size() < k || diff * diff <= heap.front().sq_dist) {
        if (go_left)
            search(mid + 1, hi, 1 - axis, u, v, k, heap);
        else
            search(lo, mid, 1 - axis, u, v, k, heap);
    }
}

} // namespace ga
