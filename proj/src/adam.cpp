#include "ga/adam.hpp"

#include <cmath>
#include <string>

#include "ga/errors.hpp"

namespace ga::num {

void adam_step(std::span<Tensor2> params, std::span<const Tensor2> grads, AdamState& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw ContractError("adam_step: " + std::to_string(params.size()) + " params but " +
                            std::to_string(grads.size()) + " grads");
    if (state.m.empty() && state.v.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.rows(), p.cols());
            state.v.emplace_back(p.rows(), p.cols());
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                            " moments for " + std::to_string(params.size()) + " params");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.m[i]) ||
            !params[i].same_shape(state.v[i]))
            throw ContractError("adam_step: shape mismatch at parameter " + std::to_string(i) + " (" +
                                params[i].shape_string() + " vs grad " + grads[i].shape_string() + ")");
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data();
        const auto& g = grads[i].data();
        auto& m = state.m[i].data();
        auto& v = state.v[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

} // namespace ga::num
