#pragma once

#include "diffscope/param_store.hpp"
#include "diffscope/tape.hpp"

#include <stdexcept>

namespace diffscope {

/// Raised when a gradient contains NaN/inf; the message names the offending parameter.
class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::int64_t step = 0;
    std::map<std::string, Tensor<T>> m;
    std::map<std::string, Tensor<T>> v;
};

/// Bias-corrected Adam update. All gradients are checked before any parameter changes.
template <typename T>
void adam_step(ParamStore<T>& params, const Gradients<T>& grads, AdamState<T>& state, const AdamConfig& cfg);

extern template void adam_step(ParamStore<float>&, const Gradients<float>&, AdamState<float>&, const AdamConfig&);
extern template void adam_step(ParamStore<double>&, const Gradients<double>&, AdamState<double>&,
                               const AdamConfig&);

}  // namespace diffscope
