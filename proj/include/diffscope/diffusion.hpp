#pragma once

#include "diffscope/schedule.hpp"
#include "diffscope/tape.hpp"
#include "diffscope/unet.hpp"

#include <functional>
#include <optional>
#include <random>
#include <span>
#include <type_traits>

namespace diffscope {

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule);

/// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t), without clamping.
template <typename T>
Tensor<T> estimate_x0_raw(const Tensor<T>& x_t, int t, const Tensor<T>& eps_pred, const NoiseSchedule& schedule);

/// As estimate_x0_raw, clamped to [-1, 1] when the schedule asks for it.
template <typename T>
Tensor<T> estimate_x0(const Tensor<T>& x_t, int t, const Tensor<T>& eps_pred, const NoiseSchedule& schedule);

/// One reverse transition t -> t_next (0 <= t_next < t); a multi-step jump uses the same rule.
/// `noise` must be given exactly when sigma(t, t_next) > 0.
template <typename T>
Tensor<T> sample_step(const Tensor<T>& x_t, int t, int t_next, const Tensor<T>& eps_pred, const NoiseSchedule& schedule,
                      std::type_identity_t<const Tensor<T>*> noise);

/// Records eps_theta(x, t, class) on a tape. Used by training_loss so that tests can swap in stubs.
template <typename T>
using EpsModel = std::function<Var(Tape<T>&, Var x_t, std::span<const int> t, std::span<const int> classes)>;

template <typename T>
EpsModel<T> unet_model(const ParamStore<T>& params, const UnetConfig& cfg);

template <typename T>
struct TrainingDraw {
    std::vector<int> timesteps;
    Tensor<T> eps;
};

/// Mean squared noise residual for one minibatch. t is uniform on [1, T], eps unit Gaussian,
/// both drawn from `rng`. The drawn values are reported through `draw` when given.
template <typename T>
Var training_loss(Tape<T>& tape, const EpsModel<T>& model, const Tensor<T>& x0, std::span<const int> classes,
                  const NoiseSchedule& schedule, std::mt19937_64& rng, TrainingDraw<T>* draw = nullptr);

}  // namespace diffscope
