#pragma once

// Serializable run descriptions. Every config round-trips through JSON unchanged.

#include "diffscope/dataset.hpp"
#include "diffscope/metrics.hpp"
#include "diffscope/schedule.hpp"
#include "diffscope/strategy.hpp"
#include "diffscope/unet.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace diffscope {

using Json = nlohmann::ordered_json;

/// Cosine by default: its noise ramps up only over the last steps, so early steps still shape the image.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::Cosine;
    int T = 100;
    SigmaMode sigma = SigmaMode::ancestral();
    bool clip_x0 = true;

    NoiseSchedule make() const;
    friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// The toy model every CLI default and the end-to-end checks refer to.
UnetConfig default_toy_unet(const ToySpec& data = {}, int T = 100);

struct TrainConfig {
    ToySpec data;
    UnetConfig unet = default_toy_unet();
    ScheduleSpec schedule;
    std::uint64_t seed = 0;
    int steps = 3000;
    int batch = 32;
    double lr = 1e-3;
    /// Linear warmup length in steps; 0 disables it.
    int warmup = 100;
    /// Exponential moving average of the weights, saved in place of the raw ones. 0 disables it.
    double ema_decay = 0.0;
    int checkpoint_every = 500;
    /// Images are drawn from indices [0, dataset_size); 0 means a fresh index for every draw.
    std::int64_t dataset_size = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct GenDataConfig {
    ToySpec data;
    std::int64_t count = 100;
    friend bool operator==(const GenDataConfig&, const GenDataConfig&) = default;
};

enum class ExperimentKind { SweepTStart, MaxWindow, CutRelaxCut, RunStrategy };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::RunStrategy;
    std::string checkpoint;
    std::uint64_t seed = 0;
    int samples = 100;
    /// Explicit sample seeds; empty means seed, seed + 1, ..., seed + samples - 1.
    std::vector<std::uint64_t> seeds;
    /// Baseline/intervened image pairs are written for this many leading samples.
    int image_dumps = 4;
    SsimWindow ssim_window = SsimWindow::Gaussian11;
    int batch = 16;

    // sweep_tstart
    SegmentKind intervention = SegmentKind::TimeSkip;
    int magnitude = 0;
    int n = 5;
    std::vector<int> t_starts;

    // max_window and cut_relax_cut
    int nb = 1;
    int t_start = 50;
    double threshold = 0.8;
    int n_max = 0;
    std::vector<int> r_values;

    // run_strategy
    std::optional<Strategy> strategy;

    /// Seeds actually used, in sample order.
    std::vector<std::uint64_t> sample_seeds() const;
    void validate() const;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

Json to_json(const UnetConfig& c);
Json to_json(const ToySpec& s);
Json to_json(const ScheduleSpec& s);
Json to_json(const TrainConfig& c);
Json to_json(const GenDataConfig& c);
/// Only fields used by the kind are written.
Json to_json(const ExperimentConfig& c);

UnetConfig unet_config_from_json(const Json& j);
ToySpec toy_spec_from_json(const Json& j);
ScheduleSpec schedule_spec_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
GenDataConfig gen_data_config_from_json(const Json& j);
ExperimentConfig experiment_config_from_json(const Json& j);

/// "a..b" (inclusive), "a..b:step" or a comma list of those. Step may be negative for descending ranges.
std::vector<std::int64_t> parse_int_list(const std::string& text);

/// Parses text, reporting syntax and field errors as ConfigError.
Json parse_json_text(const std::string& text, const std::string& what);
std::string dump_config(const Json& j);

}  // namespace diffscope
