#include "diffscope/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace diffscope {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw UsageError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample");
    schedule.check_step(t);
    const double a = schedule.alpha_bar(t);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(sa * x0[i] + sn * eps[i]);
    return out;
}

template <typename T>
Tensor<T> estimate_x0_raw(const Tensor<T>& x_t, int t, const Tensor<T>& eps_pred, const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_pred, "estimate_x0");
    schedule.check_step(t);
    const double a = schedule.alpha_bar(t);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor<T> out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>((x_t[i] - sn * eps_pred[i]) / sa);
    return out;
}

template <typename T>
Tensor<T> estimate_x0(const Tensor<T>& x_t, int t, const Tensor<T>& eps_pred, const NoiseSchedule& schedule) {
    auto x0 = estimate_x0_raw(x_t, t, eps_pred, schedule);
    if (schedule.clip_x0)
        for (auto& v : x0.data()) v = std::clamp(v, T(-1), T(1));
    return x0;
}

template <typename T>
Tensor<T> sample_step(const Tensor<T>& x_t, int t, int t_next, const Tensor<T>& eps_pred, const NoiseSchedule& schedule,
                      std::type_identity_t<const Tensor<T>*> noise) {
    if (t_next < 0 || t_next >= t) throw UsageError("sample_step needs 0 <= t_next < t");
    const double sigma = schedule.sigma(t, t_next);
    if ((sigma > 0.0) != (noise != nullptr))
        throw UsageError(sigma > 0.0 ? "sample_step: noise required for sigma > 0" : "sample_step: noise given with sigma = 0");
    if (noise) require_same_shape(x_t, *noise, "sample_step noise");

    const double an = schedule.alpha_bar(t_next);
    const double dir2 = 1.0 - an - sigma * sigma;
    if (dir2 < -1e-12)
        throw ScheduleError("negative direction variance for step " + std::to_string(t) + " -> " + std::to_string(t_next));
    const double dir = std::sqrt(std::max(dir2, 0.0));
    const double san = std::sqrt(an);

    auto x0 = estimate_x0(x_t, t, eps_pred, schedule);
    Tensor<T> out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double v = san * x0[i] + dir * eps_pred[i];
        if (noise) v += sigma * (*noise)[i];
        out[i] = static_cast<T>(v);
    }
    return out;
}

template <typename T>
EpsModel<T> unet_model(const ParamStore<T>& params, const UnetConfig& cfg) {
    return [&params, &cfg](Tape<T>& tape, Var x, std::span<const int> t, std::span<const int> classes) {
        return unet_forward(tape, params, cfg, x, t, classes, InterventionMask{});
    };
}

template <typename T>
Var training_loss(Tape<T>& tape, const EpsModel<T>& model, const Tensor<T>& x0, std::span<const int> classes,
                  const NoiseSchedule& schedule, std::mt19937_64& rng, TrainingDraw<T>* draw) {
    if (x0.rank() == 0 || x0.dim(0) == 0) throw UsageError("training_loss: empty batch");
    const auto batch = x0.dim(0);
    std::uniform_int_distribution<int> pick_t(1, schedule.T);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<int> ts(static_cast<std::size_t>(batch));
    for (auto& t : ts) t = pick_t(rng);
    Tensor<T> eps(x0.shape());
    for (auto& v : eps.data()) v = static_cast<T>(normal(rng));

    const std::size_t per = x0.numel() / static_cast<std::size_t>(batch);
    Tensor<T> xt(x0.shape());
    for (std::int64_t b = 0; b < batch; ++b) {
        const double a = schedule.alpha_bar(ts[static_cast<std::size_t>(b)]);
        const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
        for (std::size_t i = static_cast<std::size_t>(b) * per; i < (static_cast<std::size_t>(b) + 1) * per; ++i)
            xt[i] = static_cast<T>(sa * x0[i] + sn * eps[i]);
    }
    Var pred = model(tape, tape.constant(std::move(xt)), ts, classes);
    Var loss = tape.mse(pred, tape.constant(eps));
    if (draw) {
        draw->timesteps = std::move(ts);
        draw->eps = std::move(eps);
    }
    return loss;
}

#define DIFFSCOPE_INSTANTIATE_DIFFUSION(T)                                                                          \
    template Tensor<T> q_sample(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&);                   \
    template Tensor<T> estimate_x0_raw(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&);            \
    template Tensor<T> estimate_x0(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&);                \
    template Tensor<T> sample_step(const Tensor<T>&, int, int, const Tensor<T>&, const NoiseSchedule&,            \
                                   const Tensor<T>*);                                                            \
    template EpsModel<T> unet_model(const ParamStore<T>&, const UnetConfig&);                                     \
    template Var training_loss(Tape<T>&, const EpsModel<T>&, const Tensor<T>&, std::span<const int>,            \
                               const NoiseSchedule&, std::mt19937_64&, TrainingDraw<T>*);

DIFFSCOPE_INSTANTIATE_DIFFUSION(float)
DIFFSCOPE_INSTANTIATE_DIFFUSION(double)

}  // namespace diffscope
