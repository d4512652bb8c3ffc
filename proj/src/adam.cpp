#include "diffscope/adam.hpp"

#include <cmath>

namespace diffscope {

template <typename T>
void adam_step(ParamStore<T>& params, const Gradients<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
    for (const auto& [name, g] : grads) {
        if (!params.contains(name)) throw ConfigError("gradient for unknown parameter " + name);
        if (g.shape() != params.get(name).shape()) throw ConfigError("gradient shape mismatch for " + name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            if (!std::isfinite(double(g[i]))) {
                throw NonFiniteGradient("non-finite gradient in parameter '" + name + "' at element " +
                                        std::to_string(i));
            }
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (const auto& [name, g] : grads) {
        auto& p = params.mut(name);
        auto& m = state.m.try_emplace(name, p.shape()).first->second;
        auto& v = state.v.try_emplace(name, p.shape()).first->second;
        if (m.shape() != p.shape() || v.shape() != p.shape()) throw ConfigError("optimizer state shape mismatch for " + name);
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = T(mi);
            v[i] = T(vi);
            const double mhat = mi / bc1, vhat = vi / bc2;
            p[i] = T(double(p[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

template void adam_step(ParamStore<float>&, const Gradients<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(ParamStore<double>&, const Gradients<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace diffscope
