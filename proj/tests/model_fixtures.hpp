#pragma once

#include <algorithm>
#include <vector>

#include "ga/model.hpp"
#include "ga/spatial_index.hpp"
#include "ga/tape.hpp"
#include "helpers.hpp"

namespace testutil {

inline ga::model::Normalization unit_norm(std::size_t p) {
    ga::model::Normalization n;
    n.x_mean.assign(p, 0.0);
    n.x_std.assign(p, 1.0);
    return n;
}

inline ga::model::ModelConfig toy_config() {
    ga::model::ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_inducing = 2;
    c.max_len = 8;
    c.n_layers = 2;
    return c;
}

/// Owns a small random pool and hands out sequences over it.
struct ToyWorld {
    ga::ContextPool pool;

    explicit ToyWorld(std::uint64_t seed, std::size_t n = 40, std::size_t p = 2)
        : pool([&] {
              ga::Rng rng(seed);
              return random_records(rng, n, p);
          }()) {}

    ga::InputSequence sequence(std::size_t i, std::size_t len) const {
        ga::Rng rng(0);
        return ga::assemble_sequence_on_the_fly(pool[i], pool, len, len, rng);
    }
};

/// Worst relative error of analytic vs central-difference gradients of the
/// MSE loss over every parameter tensor of `m`.
inline double full_model_grad_error(const ga::model::GeoAggregator& m, const ga::InputSequence& seq,
                                    double eps = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        auto f = [&](ga::num::Tape& t, ga::num::Var x) {
            auto pv = m.bind(t);
            pv[i] = x;
            return m.loss_on_tape(t, pv, seq);
        };
        worst = std::max(worst, ga::num::grad_check(f, m.params()[i], eps));
    }
    return worst;
}

} // namespace testutil
