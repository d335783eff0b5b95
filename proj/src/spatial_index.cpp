#include "ga/spatial_index.hpp"

#include <cmath>
#include <string>

#include "ga/errors.hpp"

namespace ga {

QueryPool::QueryPool(std::vector<PointRecord> points) : points_(std::move(points)) {
    index_.reserve(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto& p = points_[i];
        if (!std::isfinite(p.u) || !std::isfinite(p.v))
            throw ContractError("pool: non-finite coordinates for id " + std::to_string(p.id));
        if (!index_.emplace(p.id, i).second) throw ContractError("pool: duplicate id " + std::to_string(p.id));
    }
}

const PointRecord* QueryPool::find(std::int64_t id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &points_[it->second];
}

const PointRecord& QueryPool::at(std::int64_t id) const {
    if (const auto* p = find(id)) return *p;
    throw LookupError("unknown point id " + std::to_string(id));
}

namespace {

std::vector<KdTree::Point> tree_points(const std::vector<PointRecord>& pts) {
    if (pts.empty()) throw ContractError("ContextPool: context pool must not be empty");
    std::vector<KdTree::Point> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back({p.u, p.v, p.id});
    return out;
}

} // namespace

ContextPool::ContextPool(std::vector<PointRecord> points)
    : QueryPool(std::move(points)), tree_(std::make_unique<KdTree>(tree_points(this->points()))) {}

const std::vector<Neighbor>& NeighborCache::entry(std::int64_t id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw LookupError("no cached neighbors for id " + std::to_string(id));
    return it->second;
}

std::size_t expanded_k(std::size_t max_len, double expansion_factor) {
    if (!(expansion_factor >= 1.0)) throw ContractError("expansion factor must be >= 1");
    return static_cast<std::size_t>(std::ceil(expansion_factor * static_cast<double>(max_len) - 1e-9));
}

NeighborCache precompute_neighbors(const QueryPool& queries, const ContextPool& context, std::size_t k) {
    std::unordered_map<std::int64_t, std::vector<Neighbor>> entries;
    entries.reserve(queries.size());
    for (const auto& q : queries.points()) entries.emplace(q.id, context.tree().knn(q.u, q.v, k));
    return NeighborCache(k, std::move(entries));
}

InputSequence select_context(const PointRecord& target, const std::vector<Neighbor>& neighbors,
                             const ContextPool& context, std::size_t max_len, Rng& rng) {
    if (max_len < 1) throw ContractError("select_context: L_max must be at least 1");
    std::vector<const Neighbor*> candidates;
    candidates.reserve(neighbors.size());
    const std::size_t pool = neighbors.empty() ? 0 : neighbors.size() - 1;
    for (const auto& n : neighbors) {
        if (candidates.size() == pool) break;
        if (n.id != target.id) candidates.push_back(&n);
    }
    const std::size_t need = std::min(max_len - 1, candidates.size());

    InputSequence seq;
    seq.tokens.reserve(need + 1);
    seq.sq_dist.reserve(need + 1);
    seq.tokens.push_back(&target);
    seq.sq_dist.push_back(0.0);
    auto push = [&](const Neighbor& n) {
        seq.tokens.push_back(&context.at(n.id));
        seq.sq_dist.push_back(n.sq_dist);
    };
    if (need == candidates.size()) {
        for (const auto* n : candidates) push(*n);
    } else {
        for (std::size_t i : rng.sample_sorted(candidates.size(), need)) push(*candidates[i]);
    }
    return seq;
}

InputSequence assemble_sequence(const PointRecord& target, const NeighborCache& cache, const ContextPool& context,
                                std::size_t max_len, Rng& rng) {
    const auto& nb = cache.entry(target.id);
    if (nb.size() < std::min(max_len, context.size()))
        throw ContractError("assemble_sequence: cache entry for id " + std::to_string(target.id) + " holds " +
                            std::to_string(nb.size()) + " neighbors, fewer than L_max = " + std::to_string(max_len));
    return select_context(target, nb, context, max_len, rng);
}

InputSequence assemble_sequence_on_the_fly(const PointRecord& target, const ContextPool& context,
                                           std::size_t k, std::size_t max_len, Rng& rng) {
    return select_context(target, context.tree().knn(target.u, target.v, k), context, max_len, rng);
}

} // namespace ga
