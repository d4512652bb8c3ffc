#pragma once

#include "diffscope/diffusion.hpp"
#include "diffscope/strategy.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace diffscope {

/// Anything that predicts noise under an intervention mask. The Unet is the real one;
/// tests plug in closed-form stubs.
struct Denoiser {
    std::function<Tensor<float>(const Tensor<float>& x, std::span<const int> t, std::span<const int> classes,
                                InterventionMask mask)>
        predict;
    std::function<std::uint64_t(InterventionMask)> flops;
    int levels = 2;
    Shape sample_shape;  // C, H, W
};

/// The params and config must outlive the returned object.
Denoiser unet_denoiser(const ParamStore<float>& params, const UnetConfig& cfg);

struct SampleRequest {
    std::uint64_t seed = 0;
    int class_id = 0;
};

struct StepRecord {
    int t = 0;
    int t_next = 0;
    InterventionMask mask;
    std::uint64_t flops = 0;
    std::optional<Tensor<float>> x_t;
    std::optional<Tensor<float>> eps;
    std::optional<Tensor<float>> x0_est;
};

struct Trajectory {
    std::uint64_t seed = 0;
    int class_id = 0;
    std::vector<StepRecord> steps;
    Tensor<float> image;  // [1, C, H, W], values nominally in [-1, 1]
    int total_nfe = 0;
    std::uint64_t total_flops = 0;
    bool early_stopped = false;
};

struct GenerateOptions {
    /// Keep x_t for steps with t % snapshot_stride == 0; 0 keeps none.
    int snapshot_stride = 1;
    bool keep_eps = true;
    bool keep_x0 = true;
    /// Samples evaluated together per network call. Results do not depend on it.
    int batch = 16;
};

/// Continue a run from a known state instead of drawing x_T.
struct StartState {
    int t = 0;
    std::vector<Tensor<float>> x;  // one [1, C, H, W] tensor per request
};

std::vector<Trajectory> generate_batch(const Denoiser& model, const NoiseSchedule& schedule, const Strategy& strategy,
                                       std::span<const SampleRequest> requests, const GenerateOptions& opts = {},
                                       const StartState* start = nullptr);

Trajectory generate(const Denoiser& model, const NoiseSchedule& schedule, const Strategy& strategy,
                    SampleRequest request, const GenerateOptions& opts = {});

/// Starting noise x_T of a seed, [1, C, H, W].
Tensor<float> initial_noise(std::uint64_t seed, const Shape& sample_shape);
/// Noise injected by the transition that leaves step t.
Tensor<float> step_noise(std::uint64_t seed, int t, const Shape& sample_shape);

}  // namespace diffscope
