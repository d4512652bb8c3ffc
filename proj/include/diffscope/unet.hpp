#pragma once

// Symmetric encoder/decoder noise predictor with per-call interventions.
//
// Level indexing: encoder levels E_1..E_D run top-down (E_1 at full resolution), the
// bottleneck M sits below E_D, decoder levels run bottom-up D_D..D_1. Skip S_l carries
// the output of E_l into D_l by channel concatenation (lower feature first, skip second).
// Encoder level l > 1 starts with a stride-2 conv; decoder level l > 1 ends with a stride-2
// transposed conv, so the "output" of D_l lives at the resolution of level l - 1.

#include "diffscope/param_store.hpp"
#include "diffscope/tape.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace diffscope {

struct UnetConfig {
    int levels = 4;
    int base_channels = 32;
    std::vector<int> channel_mult{1, 2, 2, 4};
    int blocks_per_level = 1;
    int time_embed_dim = 128;
    int num_classes = 0;
    int image_channels = 3;
    int image_side = 32;
    /// Number of diffusion steps the time embedding is scaled against.
    int max_timestep = 100;

    void validate() const;
    /// Channel width of level l (1-based).
    int channels(int level) const;
    /// Spatial side of level l (1-based).
    int side(int level) const;
    int sinusoid_dim() const;

    friend bool operator==(const UnetConfig&, const UnetConfig&) = default;
};

/// ns skip connections zeroed from the top, nb decoder levels elided from the bottom.
struct InterventionMask {
    int ns = 0;
    int nb = 0;

    bool identity() const noexcept { return ns == 0 && nb == 0; }
    void validate(const UnetConfig& cfg) const;
    std::string str() const;

    friend bool operator==(const InterventionMask&, const InterventionMask&) = default;
};

enum class SiteKind { EncoderOut, Bottleneck, Skip, DecoderOut };

struct ActivationSite {
    SiteKind kind;
    int level;  // 0 for the bottleneck
};

/// Observes or patches an activation. Patching goes through Tape::overwrite.
template <typename T>
using ActivationHook = std::function<void(const ActivationSite&, Tape<T>&, Var)>;

template <typename T>
ParamStore<T> init_unet_params(const UnetConfig& cfg, std::uint64_t seed);

/// Sinusoidal encoding of integer step t, [timesteps.size(), dim].
template <typename T>
Tensor<T> sinusoidal_embedding(std::span<const int> timesteps, int dim, int max_timestep);

/// Records one forward pass of the intervened network onto `tape`.
/// `timesteps` and `classes` hold one entry per batch element (`classes` empty when
/// the model is unconditional). Returns the predicted noise, shaped like `x`.
template <typename T>
Var unet_forward(Tape<T>& tape, const ParamStore<T>& params, const UnetConfig& cfg, Var x,
                 std::span<const int> timesteps, std::span<const int> classes, InterventionMask mask,
                 const ActivationHook<T>* hook = nullptr);

/// The same network compiled without any intervention branches.
template <typename T>
Var unet_forward_plain(Tape<T>& tape, const ParamStore<T>& params, const UnetConfig& cfg, Var x,
                       std::span<const int> timesteps, std::span<const int> classes,
                       const ActivationHook<T>* hook = nullptr);

/// Inference helper: no gradient recording.
template <typename T>
Tensor<T> unet_predict(const ParamStore<T>& params, const UnetConfig& cfg, const Tensor<T>& x,
                       std::span<const int> timesteps, std::span<const int> classes, InterventionMask mask = {},
                       const ActivationHook<T>* hook = nullptr);

/// Multiply-accumulate count of a single-sample forward pass, summed over the conv,
/// transposed-conv and linear layers that actually execute under `mask`.
std::uint64_t count_flops(const UnetConfig& cfg, InterventionMask mask = {});

}  // namespace diffscope
