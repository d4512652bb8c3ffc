#include "diffscope/sampler.hpp"

#include "diffscope/rng.hpp"

namespace diffscope {

namespace {

Shape batch_shape(const Shape& sample_shape, std::int64_t b) {
    Shape s{b};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    return s;
}

}  // namespace

Denoiser unet_denoiser(const ParamStore<float>& params, const UnetConfig& cfg) {
    cfg.validate();
    Denoiser d;
    d.predict = [&params, &cfg](const Tensor<float>& x, std::span<const int> t, std::span<const int> classes,
                                InterventionMask mask) {
        return unet_predict(params, cfg, x, t, cfg.num_classes > 0 ? classes : std::span<const int>{}, mask);
    };
    d.flops = [&cfg](InterventionMask mask) { return count_flops(cfg, mask); };
    d.levels = cfg.levels;
    d.sample_shape = {cfg.image_channels, cfg.image_side, cfg.image_side};
    return d;
}

Tensor<float> initial_noise(std::uint64_t seed, const Shape& sample_shape) {
    Tensor<float> x(batch_shape(sample_shape, 1));
    fill_normal(x.data(), seed, NoiseStream::Initial, 0);
    return x;
}

Tensor<float> step_noise(std::uint64_t seed, int t, const Shape& sample_shape) {
    Tensor<float> x(batch_shape(sample_shape, 1));
    fill_normal(x.data(), seed, NoiseStream::Step, static_cast<std::uint64_t>(t));
    return x;
}

std::vector<Trajectory> generate_batch(const Denoiser& model, const NoiseSchedule& schedule, const Strategy& strategy,
                                       std::span<const SampleRequest> requests, const GenerateOptions& opts,
                                       const StartState* start) {
    require_valid(strategy, schedule.T, model.levels);
    if (opts.batch < 1) throw UsageError("generate: batch must be positive");
    const int t_from = start ? start->t : schedule.T;
    if (start && start->x.size() != requests.size()) throw UsageError("generate: one start state per request");
    const auto plan = plan_steps(strategy, schedule.T, t_from);

    std::vector<Trajectory> out(requests.size());
    for (std::size_t lo = 0; lo < requests.size(); lo += static_cast<std::size_t>(opts.batch)) {
        const std::size_t hi = std::min(requests.size(), lo + static_cast<std::size_t>(opts.batch));
        const auto nb = static_cast<std::int64_t>(hi - lo);

        std::vector<Tensor<float>> xs;
        std::vector<int> classes;
        for (std::size_t i = lo; i < hi; ++i) {
            out[i].seed = requests[i].seed;
            out[i].class_id = requests[i].class_id;
            classes.push_back(requests[i].class_id);
            if (start) {
                if (start->x[i].shape() != batch_shape(model.sample_shape, 1))
                    throw UsageError("generate: start state has shape " + shape_str(start->x[i].shape()));
                xs.push_back(start->x[i]);
            } else {
                xs.push_back(initial_noise(requests[i].seed, model.sample_shape));
            }
        }
        Tensor<float> x = stack_batch<float>(xs);

        for (const auto& p : plan) {
            std::vector<int> ts(static_cast<std::size_t>(nb), p.t);
            Tensor<float> eps = model.predict(x, ts, classes, p.mask);
            const std::uint64_t f = model.flops(p.mask);
            const bool snap = opts.snapshot_stride > 0 && p.t % opts.snapshot_stride == 0;

            Tensor<float> next;
            std::optional<Tensor<float>> x0;
            if (p.final_estimate) {
                next = estimate_x0(x, p.t, eps, schedule);
            } else {
                const bool noisy = schedule.sigma(p.t, p.t_next) > 0.0;
                Tensor<float> noise;
                if (noisy) {
                    std::vector<Tensor<float>> parts;
                    for (std::size_t i = lo; i < hi; ++i) parts.push_back(step_noise(requests[i].seed, p.t, model.sample_shape));
                    noise = stack_batch<float>(parts);
                }
                next = sample_step(x, p.t, p.t_next, eps, schedule, noisy ? &noise : nullptr);
            }
            if (opts.keep_x0) x0 = p.final_estimate ? next : estimate_x0(x, p.t, eps, schedule);

            for (std::int64_t b = 0; b < nb; ++b) {
                auto& tr = out[lo + static_cast<std::size_t>(b)];
                StepRecord r;
                r.t = p.t;
                r.t_next = p.t_next;
                r.mask = p.mask;
                r.flops = f;
                if (snap) r.x_t = x.batch_slice(b);
                if (opts.keep_eps) r.eps = eps.batch_slice(b);
                if (x0) r.x0_est = x0->batch_slice(b);
                tr.steps.push_back(std::move(r));
                tr.total_nfe += 1;
                tr.total_flops += f;
                tr.early_stopped = p.final_estimate;
            }
            x = std::move(next);
        }
        for (std::int64_t b = 0; b < nb; ++b) out[lo + static_cast<std::size_t>(b)].image = x.batch_slice(b);
    }
    return out;
}

Trajectory generate(const Denoiser& model, const NoiseSchedule& schedule, const Strategy& strategy,
                    SampleRequest request, const GenerateOptions& opts) {
    return std::move(generate_batch(model, schedule, strategy, std::span<const SampleRequest>(&request, 1), opts).front());
}

}  // namespace diffscope
