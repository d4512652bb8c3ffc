#pragma once

#include "diffscope/checkpoint.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>

namespace diffscope {

/// Raised when the loss or a gradient stops being finite. The last checkpoint on disk is kept.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LossRecord {
    int step = 0;
    double loss = 0.0;
    /// Loss of the all-zero predictor on the same draw, i.e. the mean squared noise.
    double zero_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRecord> losses;
    /// Means over the final stretch of training (the last tenth, at least one step).
    double final_loss = 0.0;
    double final_zero_loss = 0.0;
};

struct TrainHooks {
    /// Called before every step with the live parameters; tests use it to inject faults.
    std::function<void(int step, ParamStore<float>& params)> before_step;
    /// Called whenever a checkpoint is due, with the state to persist.
    std::function<void(const Checkpoint&)> on_checkpoint;
    /// Progress reporting.
    std::function<void(const LossRecord&)> on_step;
};

/// In-memory training. Deterministic for a fixed config.
TrainResult train_model(const TrainConfig& cfg, const TrainHooks& hooks = {});

std::string loss_csv(const std::vector<LossRecord>& losses);

/// Trains into `out`: checkpoint.bin (refreshed every checkpoint_every steps and at the end),
/// loss.csv, config.json and a manifest.
/// `config_text`, when given, is stored verbatim as config.json.
TrainResult train_to_dir(const TrainConfig& cfg, const std::filesystem::path& out,
                         const std::optional<std::string>& config_text = std::nullopt,
                         const std::function<void(const LossRecord&)>& progress = {});

}  // namespace diffscope
