#include "diffscope/config.hpp"

#include <set>

namespace diffscope {

namespace {

// Rejects keys outside `allowed` so that typos in hand-written configs do not pass silently.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError(std::string(what) + ": unknown field '" + it.key() + "'");
}

template <typename T>
T get(const Json& j, const char* key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

template <typename T>
T require(const Json& j, const char* key, const char* what) {
    if (!j.contains(key)) throw ConfigError(std::string(what) + ": missing field '" + key + "'");
    return get<T>(j, key, T{});
}

SsimWindow parse_window(const std::string& s) {
    if (s == "gaussian11") return SsimWindow::Gaussian11;
    if (s == "uniform7") return SsimWindow::Uniform7;
    throw ConfigError("unknown ssim window: " + s);
}

std::string window_name(SsimWindow w) { return w == SsimWindow::Gaussian11 ? "gaussian11" : "uniform7"; }

}  // namespace

NoiseSchedule ScheduleSpec::make() const {
    auto s = make_schedule(kind, T, sigma);
    s.clip_x0 = clip_x0;
    return s;
}

UnetConfig default_toy_unet(const ToySpec& data, int T) {
    UnetConfig cfg;
    cfg.levels = 4;
    cfg.base_channels = 32;
    cfg.channel_mult = {1, 2, 2, 4};
    cfg.time_embed_dim = 128;
    cfg.num_classes = data.classes;
    cfg.image_channels = data.channels;
    cfg.image_side = data.side;
    cfg.max_timestep = T;
    return cfg;
}

void TrainConfig::validate() const {
    data.validate();
    unet.validate();
    if (unet.image_side != data.side || unet.image_channels != data.channels)
        throw ConfigError("unet image shape does not match the toy data");
    if (unet.num_classes != 0 && unet.num_classes != data.classes)
        throw ConfigError("unet num_classes must be 0 or the toy class count");
    (void)schedule.make();
    if (steps < 1) throw ConfigError("steps must be at least 1");
    if (batch < 1) throw ConfigError("batch must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (warmup < 0) throw ConfigError("warmup must be non-negative");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (dataset_size < 0) throw ConfigError("dataset_size must be non-negative");
}

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::SweepTStart: return "sweep_tstart";
        case ExperimentKind::MaxWindow: return "max_window";
        case ExperimentKind::CutRelaxCut: return "cut_relax_cut";
        case ExperimentKind::RunStrategy: return "run_strategy";
    }
    return "?";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
    for (auto k : {ExperimentKind::SweepTStart, ExperimentKind::MaxWindow, ExperimentKind::CutRelaxCut,
                   ExperimentKind::RunStrategy})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown experiment kind: " + s);
}

std::vector<std::uint64_t> ExperimentConfig::sample_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::uint64_t> out;
    for (int i = 0; i < samples; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
    return out;
}

void ExperimentConfig::validate() const {
    if (checkpoint.empty()) throw ConfigError("experiment needs a checkpoint");
    if (seeds.empty() && samples < 1) throw ConfigError("samples must be at least 1");
    if (!seeds.empty() && std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds must be distinct");
    if (image_dumps < 0) throw ConfigError("image_dumps must be non-negative");
    if (batch < 1) throw ConfigError("batch must be at least 1");
    switch (kind) {
        case ExperimentKind::SweepTStart:
            if (t_starts.empty()) throw ConfigError("sweep_tstart needs t_starts");
            if (n < 1) throw ConfigError("n must be at least 1");
            break;
        case ExperimentKind::MaxWindow:
            if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
            break;
        case ExperimentKind::CutRelaxCut:
            if (r_values.empty()) throw ConfigError("cut_relax_cut needs r_values");
            if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
            break;
        case ExperimentKind::RunStrategy:
            if (!strategy) throw ConfigError("run_strategy needs a strategy");
            break;
    }
}

Json to_json(const UnetConfig& c) {
    Json j;
    j["levels"] = c.levels;
    j["base_channels"] = c.base_channels;
    j["channel_mult"] = c.channel_mult;
    j["blocks_per_level"] = c.blocks_per_level;
    j["time_embed_dim"] = c.time_embed_dim;
    j["num_classes"] = c.num_classes;
    j["image_channels"] = c.image_channels;
    j["image_side"] = c.image_side;
    j["max_timestep"] = c.max_timestep;
    return j;
}

UnetConfig unet_config_from_json(const Json& j) {
    check_keys(j, {"levels", "base_channels", "channel_mult", "blocks_per_level", "time_embed_dim", "num_classes",
                   "image_channels", "image_side", "max_timestep"},
               "unet");
    UnetConfig d, c;
    c.levels = get(j, "levels", d.levels);
    c.base_channels = get(j, "base_channels", d.base_channels);
    c.channel_mult = get(j, "channel_mult", d.channel_mult);
    c.blocks_per_level = get(j, "blocks_per_level", d.blocks_per_level);
    c.time_embed_dim = get(j, "time_embed_dim", d.time_embed_dim);
    c.num_classes = get(j, "num_classes", d.num_classes);
    c.image_channels = get(j, "image_channels", d.image_channels);
    c.image_side = get(j, "image_side", d.image_side);
    c.max_timestep = get(j, "max_timestep", d.max_timestep);
    c.validate();
    return c;
}

Json to_json(const ToySpec& s) {
    Json j;
    j["side"] = s.side;
    j["channels"] = s.channels;
    j["classes"] = s.classes;
    j["position_jitter"] = s.position_jitter;
    j["scale_min"] = s.scale_min;
    j["scale_max"] = s.scale_max;
    j["seed"] = s.seed;
    return j;
}

ToySpec toy_spec_from_json(const Json& j) {
    check_keys(j, {"side", "channels", "classes", "position_jitter", "scale_min", "scale_max", "seed"}, "data");
    ToySpec d, s;
    s.side = get(j, "side", d.side);
    s.channels = get(j, "channels", d.channels);
    s.classes = get(j, "classes", d.classes);
    s.position_jitter = get(j, "position_jitter", d.position_jitter);
    s.scale_min = get(j, "scale_min", d.scale_min);
    s.scale_max = get(j, "scale_max", d.scale_max);
    s.seed = get(j, "seed", d.seed);
    s.validate();
    return s;
}

Json to_json(const ScheduleSpec& s) {
    Json j;
    j["kind"] = to_string(s.kind);
    j["T"] = s.T;
    j["sigma"] = s.sigma.str();
    j["clip_x0"] = s.clip_x0;
    return j;
}

ScheduleSpec schedule_spec_from_json(const Json& j) {
    check_keys(j, {"kind", "T", "sigma", "clip_x0"}, "schedule");
    ScheduleSpec d, s;
    s.kind = parse_schedule_kind(get<std::string>(j, "kind", to_string(d.kind)));
    s.T = get(j, "T", d.T);
    s.sigma = parse_sigma_mode(get<std::string>(j, "sigma", d.sigma.str()));
    s.clip_x0 = get(j, "clip_x0", d.clip_x0);
    (void)s.make();
    return s;
}

Json to_json(const TrainConfig& c) {
    Json j;
    j["data"] = to_json(c.data);
    j["unet"] = to_json(c.unet);
    j["schedule"] = to_json(c.schedule);
    j["seed"] = c.seed;
    j["steps"] = c.steps;
    j["batch"] = c.batch;
    j["lr"] = c.lr;
    j["warmup"] = c.warmup;
    j["ema_decay"] = c.ema_decay;
    j["checkpoint_every"] = c.checkpoint_every;
    j["dataset_size"] = c.dataset_size;
    return j;
}

TrainConfig train_config_from_json(const Json& j) {
    check_keys(j, {"data", "unet", "schedule", "seed", "steps", "batch", "lr", "warmup", "ema_decay", "checkpoint_every",
                   "dataset_size"},
               "train config");
    TrainConfig d, c;
    c.data = j.contains("data") ? toy_spec_from_json(j.at("data")) : d.data;
    c.schedule = j.contains("schedule") ? schedule_spec_from_json(j.at("schedule")) : d.schedule;
    c.unet = j.contains("unet") ? unet_config_from_json(j.at("unet")) : default_toy_unet(c.data, c.schedule.T);
    c.seed = require<std::uint64_t>(j, "seed", "train config");
    c.steps = get(j, "steps", d.steps);
    c.batch = get(j, "batch", d.batch);
    c.lr = get(j, "lr", d.lr);
    c.warmup = get(j, "warmup", d.warmup);
    c.ema_decay = get(j, "ema_decay", d.ema_decay);
    c.checkpoint_every = get(j, "checkpoint_every", d.checkpoint_every);
    c.dataset_size = get(j, "dataset_size", d.dataset_size);
    c.validate();
    return c;
}

Json to_json(const GenDataConfig& c) {
    Json j;
    j["data"] = to_json(c.data);
    j["count"] = c.count;
    return j;
}

GenDataConfig gen_data_config_from_json(const Json& j) {
    check_keys(j, {"data", "count"}, "gen-data config");
    GenDataConfig c;
    c.data = j.contains("data") ? toy_spec_from_json(j.at("data")) : ToySpec{};
    c.count = get(j, "count", c.count);
    if (c.count < 1) throw ConfigError("count must be at least 1");
    return c;
}

Json to_json(const ExperimentConfig& c) {
    Json j;
    j["kind"] = to_string(c.kind);
    j["checkpoint"] = c.checkpoint;
    j["seed"] = c.seed;
    j["samples"] = c.samples;
    if (!c.seeds.empty()) j["seeds"] = c.seeds;
    j["image_dumps"] = c.image_dumps;
    j["ssim_window"] = window_name(c.ssim_window);
    j["batch"] = c.batch;
    switch (c.kind) {
        case ExperimentKind::SweepTStart:
            j["intervention"] = to_string(c.intervention);
            j["magnitude"] = c.magnitude;
            j["n"] = c.n;
            j["t_starts"] = c.t_starts;
            break;
        case ExperimentKind::MaxWindow:
            j["nb"] = c.nb;
            j["t_start"] = c.t_start;
            j["threshold"] = c.threshold;
            j["n_max"] = c.n_max;
            break;
        case ExperimentKind::CutRelaxCut:
            j["nb"] = c.nb;
            j["t_start"] = c.t_start;
            j["n"] = c.n;
            j["r_values"] = c.r_values;
            j["threshold"] = c.threshold;
            break;
        case ExperimentKind::RunStrategy:
            if (c.strategy) j["strategy"] = Json::parse(strategy_to_json(*c.strategy));
            break;
    }
    return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
    ExperimentConfig c;
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    c.kind = parse_experiment_kind(require<std::string>(j, "kind", "experiment config"));
    switch (c.kind) {
        case ExperimentKind::SweepTStart:
            check_keys(j, {"kind", "checkpoint", "seed", "samples", "seeds", "image_dumps", "ssim_window", "batch",
                           "intervention", "magnitude", "n", "t_starts"},
                       "sweep_tstart config");
            c.intervention = parse_segment_kind(require<std::string>(j, "intervention", "sweep_tstart config"));
            c.magnitude = get(j, "magnitude", c.magnitude);
            c.n = get(j, "n", c.n);
            c.t_starts = require<std::vector<int>>(j, "t_starts", "sweep_tstart config");
            break;
        case ExperimentKind::MaxWindow:
            check_keys(j, {"kind", "checkpoint", "seed", "samples", "seeds", "image_dumps", "ssim_window", "batch", "nb",
                           "t_start", "threshold", "n_max"},
                       "max_window config");
            c.nb = require<int>(j, "nb", "max_window config");
            c.t_start = require<int>(j, "t_start", "max_window config");
            c.threshold = get(j, "threshold", c.threshold);
            c.n_max = get(j, "n_max", c.n_max);
            break;
        case ExperimentKind::CutRelaxCut:
            check_keys(j, {"kind", "checkpoint", "seed", "samples", "seeds", "image_dumps", "ssim_window", "batch", "nb",
                           "t_start", "n", "r_values", "threshold"},
                       "cut_relax_cut config");
            c.nb = require<int>(j, "nb", "cut_relax_cut config");
            c.t_start = require<int>(j, "t_start", "cut_relax_cut config");
            c.n = require<int>(j, "n", "cut_relax_cut config");
            c.r_values = require<std::vector<int>>(j, "r_values", "cut_relax_cut config");
            c.threshold = get(j, "threshold", c.threshold);
            break;
        case ExperimentKind::RunStrategy:
            check_keys(j, {"kind", "checkpoint", "seed", "samples", "seeds", "image_dumps", "ssim_window", "batch",
                           "strategy"},
                       "run_strategy config");
            c.strategy = strategy_from_json(require<Json>(j, "strategy", "run_strategy config").dump());
            break;
    }
    c.checkpoint = require<std::string>(j, "checkpoint", "experiment config");
    c.seed = require<std::uint64_t>(j, "seed", "experiment config");
    c.samples = get(j, "samples", c.samples);
    c.seeds = get(j, "seeds", c.seeds);
    c.image_dumps = get(j, "image_dumps", c.image_dumps);
    c.ssim_window = parse_window(get<std::string>(j, "ssim_window", window_name(c.ssim_window)));
    c.batch = get(j, "batch", c.batch);
    c.validate();
    return c;
}

std::vector<std::int64_t> parse_int_list(const std::string& text) {
    std::vector<std::int64_t> out;
    auto number = [&](const std::string& s) -> std::int64_t {
        std::size_t used = 0;
        std::int64_t v = 0;
        try {
            v = std::stoll(s, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != s.size() || s.empty()) throw ConfigError("not an integer: '" + s + "' in '" + text + "'");
        return v;
    };
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        const auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(number(item));
        } else {
            const auto colon = item.find(':', dots);
            const auto lo = number(item.substr(0, dots));
            const auto hi = number(item.substr(dots + 2, colon == std::string::npos ? std::string::npos : colon - dots - 2));
            const auto step = colon == std::string::npos ? (hi >= lo ? 1 : -1) : number(item.substr(colon + 1));
            if (step == 0 || (hi - lo) * step < 0) throw ConfigError("range does not progress: '" + item + "'");
            for (auto v = lo; step > 0 ? v <= hi : v >= hi; v += step) out.push_back(v);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

Json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

std::string dump_config(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace diffscope
