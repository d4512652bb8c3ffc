#pragma once

#include "diffscope/schedule.hpp"
#include "diffscope/unet.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace diffscope {

enum class SegmentKind { TimeSkip, SkipZero, BlockZero };

std::string to_string(SegmentKind kind);
SegmentKind parse_segment_kind(const std::string& s);

/// Covers steps t_start, t_start - 1, ..., t_start - n + 1.
/// TimeSkip replaces them with one model call at t_start that jumps to t_start - n;
/// SkipZero / BlockZero run every covered step with the mask of size `magnitude`.
struct Segment {
    int t_start = 0;
    int n = 1;
    SegmentKind kind = SegmentKind::TimeSkip;
    int magnitude = 0;

    int t_end() const noexcept { return t_start - n + 1; }
    InterventionMask mask() const;
    std::string str() const;

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// Steps not covered by a segment run the plain network ("relax" periods are such gaps).
struct Strategy {
    std::string name;
    std::vector<Segment> segments;
    /// Last step that calls the model; its x0 estimate is returned as the image.
    std::optional<int> early_stop_t;

    bool empty() const noexcept { return segments.empty() && !early_stop_t; }
    friend bool operator==(const Strategy&, const Strategy&) = default;
};

inline constexpr int kStrategySchemaVersion = 1;

/// Lists every rule the strategy breaks; empty means valid. Never modifies the strategy.
std::vector<std::string> validate_strategy(const Strategy& s, int T, int levels);
/// Throws ConfigError carrying all violations.
void require_valid(const Strategy& s, int T, int levels);

/// One model call in the execution plan of a strategy.
struct PlannedStep {
    int t = 0;
    int t_next = 0;
    InterventionMask mask;
    bool final_estimate = false;  // early-stop call: output is the x0 estimate
};

/// Expands a validated strategy into the model calls made from t_from downward.
std::vector<PlannedStep> plan_steps(const Strategy& s, int T, int t_from);

struct CostReport {
    int nfe_baseline = 0;
    int nfe_strategy = 0;
    std::uint64_t flops_baseline = 0;
    std::uint64_t flops_strategy = 0;
    double savings_fraction = 0.0;
    // Decomposition of the saved work; the three parts add up to the total.
    int nfe_saved_early_stop = 0;
    int nfe_saved_time_skip = 0;
    std::uint64_t flops_saved_early_stop = 0;
    std::uint64_t flops_saved_time_skip = 0;
    std::uint64_t flops_saved_masks = 0;

    double nfe_saving_fraction() const { return 1.0 - static_cast<double>(nfe_strategy) / nfe_baseline; }
};

CostReport strategy_cost(const Strategy& s, int T, const UnetConfig& cfg);
/// Same accounting for an arbitrary per-call cost function.
CostReport strategy_cost(const Strategy& s, int T, int levels, const std::function<std::uint64_t(InterventionMask)>& flops);

/// The shortcut recipe: block removal at 65..61 and 60..59, relax 58..48, removal 47..41,
/// relax 40..31, removal 30..24, stop at 18. Block counts are given for a 16-block network
/// and mapped onto `levels` decoder levels (see glide_blocks_to_levels).
Strategy fig10_strategy(int levels);
/// floor(blocks * levels / 16), clamped to [1, levels - 1].
int glide_blocks_to_levels(int blocks, int levels);

Strategy builtin_strategy(const std::string& name, int levels);

std::string strategy_to_json(const Strategy& s);
Strategy strategy_from_json(const std::string& text);

}  // namespace diffscope
