#include "diffscope/experiment.hpp"

#include <cctype>

namespace diffscope {

namespace fs = std::filesystem;

namespace {

constexpr int kCsvVersion = 1;

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') ? c : '_';
    return out;
}

std::string samples_csv(const SweepCurve& curve) {
    CsvWriter csv("samples", kCsvVersion,
                  {"point", "seed", "class_id", "t_start", "n", "kind", "magnitude", "ssim", "psnr", "descriptor"});
    for (std::size_t p = 0; p < curve.points.size(); ++p) {
        const auto& pt = curve.points[p];
        for (const auto& m : pt.pairs) {
            csv.cell(p).cell(static_cast<std::int64_t>(m.seed)).cell(m.class_id);
            if (!pt.strategy.segments.empty()) {
                // With several segments the first one locates the point; the descriptor names the rest.
                const auto& s = pt.strategy.segments[0];
                csv.cell(s.t_start).cell(s.n).cell(to_string(s.kind)).cell(s.magnitude);
            } else {
                csv.cell("").cell("").cell("none").cell("");
            }
            csv.cell(m.ssim).cell(m.psnr).cell(file_descriptor(pt.strategy));
            csv.end_row();
        }
    }
    return csv.text();
}

std::string aggregate_csv(const SweepCurve& curve) {
    CsvWriter csv("aggregate", kCsvVersion,
                  {"point", "descriptor", "x_name", "x", "count", "ssim_mean", "ssim_std", "ssim_mad", "ssim_min",
                   "ssim_max", "psnr_mean", "psnr_std", "psnr_mad", "psnr_min", "psnr_max"});
    for (std::size_t p = 0; p < curve.points.size(); ++p) {
        const auto& pt = curve.points[p];
        csv.cell(p).cell(file_descriptor(pt.strategy)).cell(curve.x_name).cell(pt.x).cell(pt.ssim.count);
        csv.cell(pt.ssim.mean).cell(pt.ssim.stddev).cell(pt.ssim.mad).cell(pt.ssim.min).cell(pt.ssim.max);
        csv.cell(pt.psnr.mean).cell(pt.psnr.stddev).cell(pt.psnr.mad).cell(pt.psnr.min).cell(pt.psnr.max);
        csv.end_row();
    }
    return csv.text();
}

std::string histogram_csv(const SweepCurve& curve) {
    CsvWriter csv("ssim_histogram", kCsvVersion, {"point", "descriptor", "bin", "lo", "hi", "count"});
    for (std::size_t p = 0; p < curve.points.size(); ++p) {
        const auto& pt = curve.points[p];
        for (int b = 0; b < kHistogramBins; ++b) {
            csv.cell(p).cell(file_descriptor(pt.strategy)).cell(b);
            csv.cell(static_cast<double>(b) / kHistogramBins).cell(static_cast<double>(b + 1) / kHistogramBins);
            csv.cell(pt.ssim.histogram[static_cast<std::size_t>(b)]);
            csv.end_row();
        }
    }
    return csv.text();
}

std::string cost_csv(const CostReport& r) {
    CsvWriter csv("cost", kCsvVersion,
                  {"nfe_baseline", "nfe_strategy", "nfe_saving_fraction", "flops_baseline", "flops_strategy",
                   "savings_fraction", "nfe_saved_early_stop", "nfe_saved_time_skip", "flops_saved_early_stop",
                   "flops_saved_time_skip", "flops_saved_masks"});
    csv.cell(r.nfe_baseline).cell(r.nfe_strategy).cell(r.nfe_saving_fraction());
    csv.cell(static_cast<std::int64_t>(r.flops_baseline)).cell(static_cast<std::int64_t>(r.flops_strategy));
    csv.cell(r.savings_fraction).cell(r.nfe_saved_early_stop).cell(r.nfe_saved_time_skip);
    csv.cell(static_cast<std::int64_t>(r.flops_saved_early_stop)).cell(static_cast<std::int64_t>(r.flops_saved_time_skip));
    csv.cell(static_cast<std::int64_t>(r.flops_saved_masks));
    csv.end_row();
    return csv.text();
}

std::string phases_csv(const PhaseBoundaries& pb) {
    CsvWriter csv("phases", kCsvVersion, {"determined", "a", "b", "T", "three_nonempty", "reason"});
    csv.cell(pb.determined ? 1 : 0).cell(pb.a).cell(pb.b).cell(pb.T).cell(pb.three_nonempty() ? 1 : 0).cell(pb.reason);
    csv.end_row();
    return csv.text();
}

}  // namespace

std::string file_descriptor(const Strategy& s) { return s.name.empty() ? "strategy" : sanitize(s.name); }

std::vector<SampleRequest> experiment_samples(const ExperimentConfig& cfg, const UnetConfig& unet) {
    std::vector<SampleRequest> out;
    const auto seeds = cfg.sample_seeds();
    for (std::size_t i = 0; i < seeds.size(); ++i)
        out.push_back({seeds[i], unet.num_classes > 0 ? static_cast<int>(i % static_cast<std::size_t>(unet.num_classes)) : 0});
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Checkpoint& ck, int workers, int keep_images,
                                ImageStore* images, std::vector<Tensor<float>>* baselines) {
    cfg.validate();
    const NoiseSchedule schedule = ck.schedule.make();
    const Denoiser model = unet_denoiser(ck.params, ck.unet);
    SweepOptions opts;
    opts.workers = workers;
    opts.batch = cfg.batch;
    opts.ssim.window = cfg.ssim_window;
    opts.keep_images = keep_images;
    SweepRunner runner(model, schedule, experiment_samples(cfg, ck.unet), opts);

    ExperimentResult r;
    switch (cfg.kind) {
        case ExperimentKind::SweepTStart:
            r.curve = sweep_tstart(runner, {cfg.intervention, cfg.magnitude}, cfg.n, cfg.t_starts);
            r.phases = find_phase_boundaries(r.curve, schedule.T);
            break;
        case ExperimentKind::MaxWindow:
            r.window = max_window(runner, cfg.nb, cfg.t_start, cfg.threshold, cfg.n_max);
            r.curve = r.window->curve;
            break;
        case ExperimentKind::CutRelaxCut:
            r.relax = cut_relax_cut(runner, cfg.nb, cfg.t_start, cfg.n, cfg.r_values, cfg.threshold);
            r.curve = r.relax->curve;
            break;
        case ExperimentKind::RunStrategy:
            require_valid(*cfg.strategy, schedule.T, ck.unet.levels);
            r.curve = run_strategy(runner, *cfg.strategy);
            r.cost = strategy_cost(*cfg.strategy, schedule.T, ck.unet);
            break;
    }
    if (images) *images = runner.images();
    if (baselines) {
        baselines->clear();
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(keep_images), runner.samples().size());
        for (std::size_t i = 0; i < n; ++i) baselines->push_back(runner.baseline_image(i));
    }
    return r;
}

ExperimentResult run_experiment_to_dir(const ExperimentConfig& cfg, const fs::path& out, int workers,
                                       const std::optional<std::string>& config_text) {
    cfg.validate();
    if (config_text && !(experiment_config_from_json(parse_json_text(*config_text, "config")) == cfg))
        throw UsageError("config text does not describe the config being run");
    const Checkpoint ck = load_checkpoint(cfg.checkpoint);

    OutputDir dir(out);
    dir.write_text("config.json", config_text ? *config_text : dump_config(to_json(cfg)));

    ImageStore images;
    std::vector<Tensor<float>> baselines;
    ExperimentResult r = run_experiment(cfg, ck, workers, cfg.image_dumps, &images, &baselines);

    Json info;
    info["checkpoint_sha256"] = sha256_hex(encode_checkpoint(ck));
    info["checkpoint_step"] = ck.step;
    info["schedule"] = to_json(ck.schedule);
    info["samples"] = r.curve.points.empty() ? 0 : r.curve.points[0].pairs.size();
    dir.write_text("run.json", dump_config(info));

    dir.write_text("samples.csv", samples_csv(r.curve));
    dir.write_text("aggregate.csv", aggregate_csv(r.curve));
    dir.write_text("histogram.csv", histogram_csv(r.curve));
    if (r.phases) dir.write_text("phases.csv", phases_csv(*r.phases));
    if (r.window) {
        CsvWriter csv("max_window", kCsvVersion, {"nb", "t_start", "threshold", "n"});
        csv.cell(cfg.nb).cell(cfg.t_start).cell(cfg.threshold).cell(r.window->n);
        csv.end_row();
        dir.write_text("window.csv", csv.text());
    }
    if (r.relax) {
        CsvWriter csv("cut_relax_cut", kCsvVersion, {"nb", "t_start", "n", "threshold", "r", "found"});
        csv.cell(cfg.nb).cell(cfg.t_start).cell(cfg.n).cell(cfg.threshold);
        csv.cell(r.relax->r ? std::to_string(*r.relax->r) : std::string()).cell(r.relax->r ? 1 : 0);
        csv.end_row();
        dir.write_text("relax.csv", csv.text());
    }
    if (r.cost) {
        dir.write_text("cost.csv", cost_csv(*r.cost));
        dir.write_text("strategy.json", strategy_to_json(*cfg.strategy) + "\n");
    }

    const auto& samples = r.curve.points.empty() ? std::vector<PairMetrics>{} : r.curve.points[0].pairs;
    for (std::size_t i = 0; i < baselines.size(); ++i) {
        const std::string seed = std::to_string(samples[i].seed);
        dir.write_ppm("images/" + seed + "_baseline.ppm", to_unit_range(baselines[i]));
        for (std::size_t p = 0; p < r.curve.points.size(); ++p) {
            auto it = images.find({p, i});
            if (it == images.end()) continue;
            dir.write_ppm("images/" + seed + "_" + file_descriptor(r.curve.points[p].strategy) + ".ppm",
                          to_unit_range(it->second));
        }
    }
    dir.commit();
    return r;
}

void gen_data_to_dir(const GenDataConfig& cfg, const fs::path& out, const std::optional<std::string>& config_text) {
    cfg.data.validate();
    if (cfg.count < 1) throw ConfigError("count must be at least 1");
    OutputDir dir(out);
    dir.write_text("config.json", config_text ? *config_text : dump_config(to_json(cfg)));
    CsvWriter labels("labels", kCsvVersion, {"index", "label", "class_name", "file"});
    const int width = static_cast<int>(std::to_string(cfg.count - 1).size());
    for (std::int64_t i = 0; i < cfg.count; ++i) {
        const int label = toy_label(cfg.data, i);
        std::string idx = std::to_string(i);
        idx.insert(0, static_cast<std::size_t>(width) - idx.size(), '0');
        const std::string file = "images/" + idx + "_" + class_name(label) + ".ppm";
        dir.write_ppm(file, to_unit_range(toy_image(cfg.data, i)));
        labels.cell(i).cell(label).cell(class_name(label)).cell(file);
        labels.end_row();
    }
    dir.write_text("labels.csv", labels.text());
    dir.commit();
}

void write_report(const fs::path& run_dir, const fs::path& out) {
    const auto problems = verify_manifest(run_dir);
    if (!problems.empty()) {
        std::string msg = "run directory does not verify:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw IoError(msg);
    }
    const Json cfg = parse_json_text(read_text(run_dir / "config.json"), "config.json");
    const CsvTable agg = parse_csv(read_text(run_dir / "aggregate.csv"));

    std::string md = "# Run report\n\n";
    md += "Run directory: `" + run_dir.string() + "` (manifest verified)\n\n";
    md += "Kind: " + cfg.value("kind", std::string("?")) + "\n\n";
    md += "| point | descriptor | x | count | SSIM mean | SSIM std | SSIM mad | PSNR mean |\n";
    md += "|---|---|---|---|---|---|---|---|\n";
    CsvWriter summary("report_summary", kCsvVersion,
                      {"point", "descriptor", "x", "count", "ssim_mean", "ssim_lo2sd", "ssim_hi2sd", "psnr_mean"});
    for (const auto& row : agg.rows) {
        const double mean = std::stod(row[agg.column("ssim_mean")]);
        const double sd = std::stod(row[agg.column("ssim_std")]);
        md += "| " + row[agg.column("point")] + " | " + row[agg.column("descriptor")] + " | " + row[agg.column("x")] +
              " | " + row[agg.column("count")] + " | " + row[agg.column("ssim_mean")] + " | " +
              row[agg.column("ssim_std")] + " | " + row[agg.column("ssim_mad")] + " | " + row[agg.column("psnr_mean")] +
              " |\n";
        summary.cell(row[agg.column("point")]).cell(row[agg.column("descriptor")]).cell(row[agg.column("x")]);
        summary.cell(row[agg.column("count")]).cell(mean).cell(mean - 2 * sd).cell(mean + 2 * sd);
        summary.cell(row[agg.column("psnr_mean")]);
        summary.end_row();
    }
    auto append_table = [&](const std::string& file, const std::string& title) {
        if (!fs::exists(run_dir / file)) return;
        const CsvTable t = parse_csv(read_text(run_dir / file));
        md += "\n## " + title + "\n\n";
        for (const auto& row : t.rows)
            for (std::size_t c = 0; c < t.header.size(); ++c) md += "- " + t.header[c] + ": " + row[c] + "\n";
    };
    append_table("phases.csv", "Phase boundaries");
    append_table("window.csv", "Largest window");
    append_table("relax.csv", "Cut-relax-cut");
    append_table("cost.csv", "Cost");

    OutputDir dir(out);
    dir.write_text("report.md", md);
    dir.write_text("summary.csv", summary.text());
    dir.commit();
}

}  // namespace diffscope
