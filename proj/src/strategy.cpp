#include "diffscope/strategy.hpp"

#include "json.hpp"

#include <algorithm>
#include <sstream>

namespace diffscope {

std::string to_string(SegmentKind kind) {
    switch (kind) {
    case SegmentKind::TimeSkip: return "time_skip";
    case SegmentKind::SkipZero: return "skip_zero";
    case SegmentKind::BlockZero: return "block_zero";
    }
    return "?";
}

SegmentKind parse_segment_kind(const std::string& s) {
    if (s == "time_skip" || s == "timeskip") return SegmentKind::TimeSkip;
    if (s == "skip_zero" || s == "skipzero") return SegmentKind::SkipZero;
    if (s == "block_zero" || s == "blockzero") return SegmentKind::BlockZero;
    throw ConfigError("unknown segment kind '" + s + "'");
}

InterventionMask Segment::mask() const {
    switch (kind) {
    case SegmentKind::SkipZero: return {magnitude, 0};
    case SegmentKind::BlockZero: return {0, magnitude};
    case SegmentKind::TimeSkip: return {};
    }
    return {};
}

std::string Segment::str() const {
    std::ostringstream os;
    os << to_string(kind) << "(" << magnitude << ")@[" << t_start << "," << t_end() << "]";
    return os.str();
}

std::vector<std::string> validate_strategy(const Strategy& s, int T, int levels) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.segments.size(); ++i) {
        const auto& seg = s.segments[i];
        const std::string id = "segment " + std::to_string(i) + " " + seg.str();
        if (seg.n < 1) out.push_back(id + ": n must be positive");
        if (seg.t_start > T || seg.t_start < 1) out.push_back(id + ": t_start outside [1, " + std::to_string(T) + "]");
        if (seg.n >= 1 && seg.t_end() < 1) out.push_back(id + ": covers steps below 1");
        if (seg.kind == SegmentKind::TimeSkip) {
            if (seg.magnitude != 0) out.push_back(id + ": time skips take no magnitude");
        } else if (seg.magnitude < 0 || seg.magnitude > levels - 1) {
            out.push_back(id + ": magnitude outside [0, " + std::to_string(levels - 1) + "] for a " +
                          std::to_string(levels) + "-level network");
        }
        if (i > 0 && s.segments[i - 1].t_start <= seg.t_start)
            out.push_back(id + ": segments must be sorted by descending t_start");
        for (std::size_t j = 0; j < i; ++j) {
            const auto& o = s.segments[j];
            const int lo = std::max(seg.t_end(), o.t_end()), hi = std::min(seg.t_start, o.t_start);
            if (lo <= hi)
                out.push_back("overlap at step " + std::to_string(hi) + " between segment " + std::to_string(j) + " " +
                              o.str() + " and segment " + std::to_string(i) + " " + seg.str());
        }
    }
    if (s.early_stop_t) {
        const int e = *s.early_stop_t;
        if (e < 1 || e > T) out.push_back("early_stop_t " + std::to_string(e) + " outside [1, " + std::to_string(T) + "]");
        for (std::size_t i = 0; i < s.segments.size(); ++i) {
            const auto& seg = s.segments[i];
            // A time skip may land exactly on the stop step.
            if (seg.t_end() <= e)
                out.push_back("early_stop_t " + std::to_string(e) + " is not below segment " + std::to_string(i) + " " +
                              seg.str());
        }
    }
    return out;
}

void require_valid(const Strategy& s, int T, int levels) {
    auto v = validate_strategy(s, T, levels);
    if (v.empty()) return;
    std::string msg = "invalid strategy '" + s.name + "':";
    for (const auto& m : v) msg += "\n  " + m;
    throw ConfigError(msg);
}

std::vector<PlannedStep> plan_steps(const Strategy& s, int T, int t_from) {
    if (t_from < 1 || t_from > T) throw UsageError("plan_steps: start step outside [1, T]");
    const int stop = s.early_stop_t.value_or(0);
    std::vector<PlannedStep> steps;
    std::size_t seg = 0;
    int t = t_from;
    while (t >= 1) {
        while (seg < s.segments.size() && s.segments[seg].t_end() > t) ++seg;
        PlannedStep p;
        p.t = t;
        p.t_next = t - 1;
        if (seg < s.segments.size() && s.segments[seg].t_start >= t) {
            const auto& g = s.segments[seg];
            if (g.kind == SegmentKind::TimeSkip) {
                // Entering a skip part-way through (resumed runs) jumps to the same target.
                p.t_next = g.t_start - g.n;
            } else {
                p.mask = g.mask();
            }
        }
        if (t == stop) {
            p.final_estimate = true;
            p.t_next = 0;
            steps.push_back(p);
            break;
        }
        steps.push_back(p);
        t = p.t_next;
    }
    return steps;
}

CostReport strategy_cost(const Strategy& s, int T, const UnetConfig& cfg) {
    return strategy_cost(s, T, cfg.levels, [&cfg](InterventionMask m) { return count_flops(cfg, m); });
}

CostReport strategy_cost(const Strategy& s, int T, int levels, const std::function<std::uint64_t(InterventionMask)>& flops) {
    require_valid(s, T, levels);
    CostReport r;
    const std::uint64_t full = flops({});
    r.nfe_baseline = T;
    r.flops_baseline = full * static_cast<std::uint64_t>(T);
    for (const auto& p : plan_steps(s, T, T)) {
        ++r.nfe_strategy;
        const std::uint64_t f = flops(p.mask);
        r.flops_strategy += f;
        r.flops_saved_masks += full - f;
        if (!p.final_estimate && p.t - p.t_next > 1) {
            r.nfe_saved_time_skip += p.t - p.t_next - 1;
            r.flops_saved_time_skip += full * static_cast<std::uint64_t>(p.t - p.t_next - 1);
        }
    }
    if (s.early_stop_t) {
        r.nfe_saved_early_stop = *s.early_stop_t - 1;
        r.flops_saved_early_stop = full * static_cast<std::uint64_t>(*s.early_stop_t - 1);
    }
    r.savings_fraction = 1.0 - static_cast<double>(r.flops_strategy) / static_cast<double>(r.flops_baseline);
    return r;
}

int glide_blocks_to_levels(int blocks, int levels) {
    return std::clamp(blocks * levels / 16, 1, levels - 1);
}

Strategy fig10_strategy(int levels) {
    const int six = glide_blocks_to_levels(6, levels), eight = glide_blocks_to_levels(8, levels);
    Strategy s;
    s.name = "fig10";
    s.segments = {
        {65, 5, SegmentKind::BlockZero, six},
        {60, 2, SegmentKind::BlockZero, eight},
        {47, 7, SegmentKind::BlockZero, eight},
        {30, 7, SegmentKind::BlockZero, eight},
    };
    s.early_stop_t = 18;
    return s;
}

Strategy builtin_strategy(const std::string& name, int levels) {
    if (name == "fig10") return fig10_strategy(levels);
    if (name == "empty" || name == "baseline") {
        Strategy s;
        s.name = name;
        return s;
    }
    throw ConfigError("unknown built-in strategy '" + name + "'");
}

std::string strategy_to_json(const Strategy& s) {
    nlohmann::ordered_json j;
    j["schema_version"] = kStrategySchemaVersion;
    j["name"] = s.name;
    j["segments"] = nlohmann::ordered_json::array();
    for (const auto& g : s.segments) {
        nlohmann::ordered_json e;
        e["t_start"] = g.t_start;
        e["n"] = g.n;
        e["kind"] = to_string(g.kind);
        e["magnitude"] = g.magnitude;
        j["segments"].push_back(e);
    }
    j["early_stop_t"] = s.early_stop_t ? nlohmann::ordered_json(*s.early_stop_t) : nlohmann::ordered_json(nullptr);
    return j.dump(2) + "\n";
}

Strategy strategy_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("strategy document is not valid JSON: ") + e.what());
    }
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kStrategySchemaVersion)
            throw ConfigError("unsupported strategy schema_version " + std::to_string(version));
        Strategy s;
        s.name = j.at("name").get<std::string>();
        for (const auto& e : j.at("segments")) {
            Segment g;
            g.t_start = e.at("t_start").get<int>();
            g.n = e.at("n").get<int>();
            g.kind = parse_segment_kind(e.at("kind").get<std::string>());
            g.magnitude = e.value("magnitude", 0);
            s.segments.push_back(g);
        }
        if (j.contains("early_stop_t") && !j["early_stop_t"].is_null()) s.early_stop_t = j["early_stop_t"].get<int>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed strategy document: ") + e.what());
    }
}

}  // namespace diffscope
