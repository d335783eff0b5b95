#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "ga/dataset.hpp"
#include "ga/kdtree.hpp"
#include "ga/rng.hpp"

namespace ga {

/// Immutable list of points with unique ids and an id index.
class QueryPool {
public:
    explicit QueryPool(std::vector<PointRecord> points);

    std::size_t size() const noexcept { return points_.size(); }
    const std::vector<PointRecord>& points() const noexcept { return points_; }
    const PointRecord& operator[](std::size_t i) const { return points_[i]; }
    /// nullptr when absent.
    const PointRecord* find(std::int64_t id) const;
    /// Throws LookupError when absent.
    const PointRecord& at(std::int64_t id) const;
    bool contains(std::int64_t id) const { return find(id) != nullptr; }

private:
    std::vector<PointRecord> points_;
    std::unordered_map<std::int64_t, std::size_t> index_;
};

/// Observed points that serve as context, plus a k-d tree over (u, v).
class ContextPool : public QueryPool {
public:
    /// Throws ContractError when empty.
    explicit ContextPool(std::vector<PointRecord> points);

    const KdTree& tree() const noexcept { return *tree_; }

private:
    std::unique_ptr<KdTree> tree_;
};

/// Per-query precomputed neighbor lists (context id, squared distance),
/// ascending by distance with ties broken by id.
class NeighborCache {
public:
    NeighborCache() = default;
    NeighborCache(std::size_t k, std::unordered_map<std::int64_t, std::vector<Neighbor>> entries)
        : k_(k), entries_(std::move(entries)) {}

    std::size_t k() const noexcept { return k_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool contains(std::int64_t id) const { return entries_.count(id) != 0; }
    /// Throws LookupError naming the id when there is no entry.
    const std::vector<Neighbor>& entry(std::int64_t id) const;

private:
    std::size_t k_ = 0;
    std::unordered_map<std::int64_t, std::vector<Neighbor>> entries_;
};

/// Number of candidates fetched per query: ceil(expansion · L_max).
std::size_t expanded_k(std::size_t max_len, double expansion_factor);

/// One k-NN query per query point; afterwards sequence assembly never
/// touches the tree.
NeighborCache precompute_neighbors(const QueryPool& queries, const ContextPool& context, std::size_t k);

/// Model input: target first, then context points by ascending distance.
/// Token pointers refer into the pools (or the caller's target record) and
/// must not outlive them.
struct InputSequence {
    std::vector<const PointRecord*> tokens;
    /// Squared distance from the target to each token (0 for the target).
    std::vector<double> sq_dist;

    std::size_t size() const noexcept { return tokens.size(); }
    const PointRecord& target() const { return *tokens.front(); }
};

/// Builds the sequence for `target` from a neighbor list.
///
/// Any occurrence of the target's own id is dropped, and one slot of the list
/// is reserved for the target itself: the candidates are the first
/// (list length − 1) non-target neighbors. When more candidates than the
/// L_max − 1 context slots remain, a uniform random subset is kept (order
/// preserved); otherwise no random draw is made.
InputSequence select_context(const PointRecord& target, const std::vector<Neighbor>& neighbors,
                             const ContextPool& context, std::size_t max_len, Rng& rng);

/// Cache-backed assembly. Throws LookupError for a missing entry and
/// ContractError when the entry is shorter than min(L_max, |context|).
InputSequence assemble_sequence(const PointRecord& target, const NeighborCache& cache, const ContextPool& context,
                                std::size_t max_len, Rng& rng);

/// Same result as caching, but queries the tree for this call only.
InputSequence assemble_sequence_on_the_fly(const PointRecord& target, const ContextPool& context,
                                           std::size_t k, std::size_t max_len, Rng& rng);

} // namespace ga
