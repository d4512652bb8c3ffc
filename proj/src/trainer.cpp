#include "diffscope/trainer.hpp"

#include "diffscope/adam.hpp"
#include "diffscope/diffusion.hpp"
#include "diffscope/manifest.hpp"
#include "diffscope/rng.hpp"

#include <cmath>

namespace diffscope {

namespace {

constexpr std::uint64_t kTrainStream = 10;

Checkpoint snapshot(const TrainConfig& cfg, const ParamStore<float>& params, int step) {
    Checkpoint c;
    c.unet = cfg.unet;
    c.schedule = cfg.schedule;
    c.data = cfg.data;
    c.train_seed = cfg.seed;
    c.step = step;
    c.params = params;
    return c;
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    const NoiseSchedule schedule = cfg.schedule.make();
    if (cfg.unet.max_timestep != schedule.T) throw ConfigError("unet max_timestep must equal the schedule length");

    ParamStore<float> params = init_unet_params<float>(cfg.unet, cfg.seed);
    ParamStore<float> ema = params;
    AdamState<float> adam;
    AdamConfig acfg;
    const EpsModel<float> model = unet_model(params, cfg.unet);
    std::mt19937_64 rng = make_engine(cfg.seed, kTrainStream);

    TrainResult result;
    auto persisted = [&]() -> const ParamStore<float>& { return cfg.ema_decay > 0.0 ? ema : params; };

    std::int64_t next_index = 0;
    for (int step = 1; step <= cfg.steps; ++step) {
        if (hooks.before_step) hooks.before_step(step, params);

        std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.batch));
        if (cfg.dataset_size > 0) {
            std::uniform_int_distribution<std::int64_t> pick(0, cfg.dataset_size - 1);
            for (auto& i : idx) i = pick(rng);
        } else {
            for (auto& i : idx) i = next_index++;
        }
        const ToyDataset batch = toy_batch(cfg.data, idx);
        std::vector<int> classes;
        if (cfg.unet.num_classes > 0) classes = batch.labels;

        Tape<float> tape;
        TrainingDraw<float> draw;
        const Var loss = training_loss(tape, model, batch.images, classes, schedule, rng, &draw);
        const double loss_v = tape.value(loss).item();
        double zero = 0.0;
        for (float e : draw.eps.data()) zero += static_cast<double>(e) * e;
        zero /= static_cast<double>(draw.eps.numel());

        if (!std::isfinite(loss_v)) throw TrainingDiverged("loss is not finite at step " + std::to_string(step));
        const auto grads = backward(tape, loss, params);
        acfg.lr = cfg.warmup > 0 ? cfg.lr * std::min(1.0, static_cast<double>(step) / cfg.warmup) : cfg.lr;
        try {
            adam_step(params, grads, adam, acfg);
        } catch (const NonFiniteGradient& e) {
            throw TrainingDiverged(std::string("step ") + std::to_string(step) + ": " + e.what());
        }
        if (cfg.ema_decay > 0.0) {
            const auto d = static_cast<float>(cfg.ema_decay);
            for (const auto& [name, p] : params) {
                auto& e = ema.mut(name);
                for (std::size_t i = 0; i < p.numel(); ++i) e[i] = d * e[i] + (1.0f - d) * p[i];
            }
        }

        const LossRecord rec{step, loss_v, zero, acfg.lr};
        result.losses.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps)
            hooks.on_checkpoint(snapshot(cfg, persisted(), step));
    }

    result.checkpoint = snapshot(cfg, persisted(), cfg.steps);
    const std::size_t tail = std::max<std::size_t>(1, result.losses.size() / 10);
    for (std::size_t i = result.losses.size() - tail; i < result.losses.size(); ++i) {
        result.final_loss += result.losses[i].loss;
        result.final_zero_loss += result.losses[i].zero_loss;
    }
    result.final_loss /= static_cast<double>(tail);
    result.final_zero_loss /= static_cast<double>(tail);
    return result;
}

std::string loss_csv(const std::vector<LossRecord>& losses) {
    CsvWriter csv("loss", 1, {"step", "loss", "zero_loss", "lr"});
    for (const auto& r : losses) {
        csv.cell(r.step).cell(r.loss).cell(r.zero_loss).cell(r.lr);
        csv.end_row();
    }
    return csv.text();
}

TrainResult train_to_dir(const TrainConfig& cfg, const std::filesystem::path& out,
                         const std::optional<std::string>& config_text,
                         const std::function<void(const LossRecord&)>& progress) {
    cfg.validate();
    OutputDir dir(out);
    dir.write_text("config.json", config_text ? *config_text : dump_config(to_json(cfg)));
    std::vector<LossRecord> seen;
    TrainHooks hooks;
    hooks.on_step = [&](const LossRecord& r) {
        seen.push_back(r);
        if (progress) progress(r);
    };
    hooks.on_checkpoint = [&](const Checkpoint& c) {
        // Written straight into the final location so that a crash leaves the last good state behind.
        save_checkpoint(dir.final_path() / "checkpoint.bin", c);
        write_text_atomic(dir.final_path() / "loss.csv", loss_csv(seen));
    };
    dir.keep_partial_on_failure(true);
    TrainResult r = train_model(cfg, hooks);
    dir.write_bytes("checkpoint.bin", encode_checkpoint(r.checkpoint));
    dir.write_text("loss.csv", loss_csv(r.losses));
    CsvWriter summary("train_summary", 1, {"steps", "final_loss", "final_zero_loss", "ratio"});
    summary.cell(cfg.steps).cell(r.final_loss).cell(r.final_zero_loss).cell(r.final_zero_loss / r.final_loss);
    summary.end_row();
    dir.write_text("summary.csv", summary.text());
    dir.commit();
    return r;
}

}  // namespace diffscope
