#pragma once

#include "diffscope/checkpoint.hpp"
#include "diffscope/manifest.hpp"
#include "diffscope/sweep.hpp"

#include <filesystem>
#include <optional>

namespace diffscope {

struct ExperimentResult {
    SweepCurve curve;
    std::optional<PhaseBoundaries> phases;    // sweep_tstart
    std::optional<WindowResult> window;       // max_window
    std::optional<RelaxResult> relax;         // cut_relax_cut
    std::optional<CostReport> cost;           // run_strategy
};

/// Sample requests of a config: the listed seeds, classes assigned round robin.
std::vector<SampleRequest> experiment_samples(const ExperimentConfig& cfg, const UnetConfig& unet);

/// Runs the experiment without touching the filesystem beyond reading the checkpoint.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Checkpoint& ck, int workers,
                                int keep_images = 0, ImageStore* images = nullptr,
                                std::vector<Tensor<float>>* baselines = nullptr);

/// Runs the experiment into `out`. `config_text`, when given, is stored verbatim as config.json
/// (it must parse to `cfg`); otherwise the serialized config is stored.
ExperimentResult run_experiment_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out, int workers,
                                       const std::optional<std::string>& config_text = std::nullopt);

/// Writes images/{index}_{class name}.ppm, labels.csv, config.json and a manifest.
void gen_data_to_dir(const GenDataConfig& cfg, const std::filesystem::path& out,
                     const std::optional<std::string>& config_text = std::nullopt);

/// Checks the manifest of a finished run directory and summarises it into `out` as report.md
/// plus summary.csv. Throws IoError when the run does not verify.
void write_report(const std::filesystem::path& run_dir, const std::filesystem::path& out);

/// File name fragment for a strategy: its name with anything outside [A-Za-z0-9_.-] replaced.
std::string file_descriptor(const Strategy& s);

}  // namespace diffscope
