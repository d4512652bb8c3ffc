// Command-line front end: gen-data, train, sweep, window, relax, strategy, report.

#include "diffscope/experiment.hpp"
#include "diffscope/parallel.hpp"
#include "diffscope/trainer.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>

using namespace diffscope;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
};

// Options shared by the four experiment subcommands.
struct ExperimentFlags {
    std::string checkpoint;
    int samples = 100;
    std::string seeds;
    int image_dumps = 4;
    int batch = 16;
    std::string ssim_window = "gaussian11";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--out", c.out, "Output directory (must be absent or empty)")->required();
    app->add_option("--config", c.config, "Run from a saved config.json instead of flags")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Seed for every random draw (required without --config)");
}

void add_experiment_flags(CLI::App* app, ExperimentFlags& f) {
    app->add_option("--checkpoint", f.checkpoint, "Trained checkpoint");
    app->add_option("--samples", f.samples, "Number of samples (seeds seed, seed+1, ...)")->check(CLI::PositiveNumber);
    app->add_option("--seeds", f.seeds, "Explicit sample seeds, e.g. 1..100 or 3,5,9");
    app->add_option("--image-dumps", f.image_dumps, "Write image pairs for this many leading samples")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--batch", f.batch, "Samples per network call")->check(CLI::PositiveNumber);
    app->add_option("--ssim-window", f.ssim_window, "gaussian11 or uniform7")
        ->check(CLI::IsMember({"gaussian11", "uniform7"}));
}

// With --config, only --out may accompany it.
void check_config_exclusive(CLI::App* app) {
    if (app->count("--config") == 0) return;
    for (const auto* opt : app->get_options())
        if (opt->count() > 0 && opt->get_name() != "--config" && opt->get_name() != "--out" && opt->get_name() != "--help")
            throw CLI::ValidationError(opt->get_name(), "cannot be combined with --config");
}

void require_flags(CLI::App* app, std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (app->count(n) == 0) throw CLI::RequiredError(n);
}

ExperimentConfig base_experiment(ExperimentKind kind, const Common& c, const ExperimentFlags& f) {
    ExperimentConfig e;
    e.kind = kind;
    e.checkpoint = f.checkpoint;
    e.seed = c.seed;
    e.samples = f.samples;
    if (!f.seeds.empty())
        for (auto v : parse_int_list(f.seeds)) {
            if (v < 0) throw ConfigError("seeds must be non-negative");
            e.seeds.push_back(static_cast<std::uint64_t>(v));
        }
    if (!e.seeds.empty()) e.samples = static_cast<int>(e.seeds.size());
    e.image_dumps = f.image_dumps;
    e.batch = f.batch;
    e.ssim_window = f.ssim_window == "uniform7" ? SsimWindow::Uniform7 : SsimWindow::Gaussian11;
    return e;
}

std::vector<int> to_ints(const std::string& text) {
    std::vector<int> out;
    for (auto v : parse_int_list(text)) out.push_back(static_cast<int>(v));
    return out;
}

std::optional<std::string> load_config_text(const Common& c) {
    if (c.config.empty()) return std::nullopt;
    return read_text(c.config);
}

void print_curve(const ExperimentResult& r) {
    for (const auto& p : r.curve.points)
        std::printf("%-32s x=%-4d ssim mean %.4f sd %.4f  psnr mean %s\n", file_descriptor(p.strategy).c_str(), p.x,
                    p.ssim.mean, p.ssim.stddev, format_metric(p.psnr.mean).c_str());
    if (r.phases) {
        if (r.phases->determined)
            std::printf("phase boundaries: A=%d B=%d (three non-empty phases: %s)\n", r.phases->a, r.phases->b,
                        r.phases->three_nonempty() ? "yes" : "no");
        else
            std::printf("phase boundaries undetermined: %s\n", r.phases->reason.c_str());
    }
    if (r.window) std::printf("largest window n = %d\n", r.window->n);
    if (r.relax) {
        if (r.relax->r)
            std::printf("smallest relax r = %d\n", *r.relax->r);
        else
            std::printf("no probed relax length met the threshold\n");
    }
    if (r.cost)
        std::printf("NFE %d -> %d, FLOPs saved %.2f%% (early stop %llu, masks %llu, time skip %llu)\n",
                    r.cost->nfe_baseline, r.cost->nfe_strategy, 100.0 * r.cost->savings_fraction,
                    static_cast<unsigned long long>(r.cost->flops_saved_early_stop),
                    static_cast<unsigned long long>(r.cost->flops_saved_masks),
                    static_cast<unsigned long long>(r.cost->flops_saved_time_skip));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intervention experiments on a toy denoising diffusion model", "diffscope"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Common gen_c, train_c, sweep_c, window_c, relax_c, strat_c;
    ExperimentFlags sweep_f, window_f, relax_f, strat_f;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render the procedural toy dataset to PPM files");
    add_common(gen, gen_c);
    std::int64_t gen_count = 100;
    ToySpec gen_spec;
    gen->add_option("--count", gen_count, "Number of images")->check(CLI::PositiveNumber);
    gen->add_option("--classes", gen_spec.classes, "Number of classes (1..10)");
    gen->add_option("--side", gen_spec.side, "Image side in pixels");

    // train
    auto* train = app.add_subcommand("train", "Train the toy model and write a checkpoint");
    add_common(train, train_c);
    TrainConfig tc;
    std::string train_schedule = "cosine";
    int train_T = 100, base_channels = tc.unet.base_channels;
    train->add_option("--steps", tc.steps, "Optimizer steps")->check(CLI::PositiveNumber);
    train->add_option("--batch", tc.batch, "Minibatch size")->check(CLI::PositiveNumber);
    train->add_option("--lr", tc.lr, "Adam learning rate");
    train->add_option("--warmup", tc.warmup, "Linear warmup steps");
    train->add_option("--ema", tc.ema_decay, "Weight EMA decay saved to the checkpoint (0 = off)");
    train->add_option("--checkpoint-every", tc.checkpoint_every, "Checkpoint period in steps (0 = only at the end)");
    train->add_option("--dataset-size", tc.dataset_size, "Finite dataset size (0 = fresh images every draw)");
    train->add_option("--base-channels", base_channels, "Width of the first Unet level");
    train->add_option("--classes", tc.data.classes, "Number of toy classes (1..10)");
    train->add_option("--schedule", train_schedule, "linear or cosine")->check(CLI::IsMember({"linear", "cosine"}));
    train->add_option("--T", train_T, "Number of diffusion steps")->check(CLI::Range(2, 100000));

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Intervene for n steps at each t_start and compare with the baseline");
    add_common(sweep, sweep_c);
    add_experiment_flags(sweep, sweep_f);
    std::string sweep_kind = "time_skip", sweep_tstart;
    int sweep_n = 5, sweep_mag = 0;
    sweep->add_option("--kind", sweep_kind, "time_skip, skip_zero or block_zero");
    sweep->add_option("--magnitude", sweep_mag, "ns for skip_zero, nb for block_zero");
    sweep->add_option("--n", sweep_n, "Steps per intervention")->check(CLI::PositiveNumber);
    sweep->add_option("--tstart", sweep_tstart, "t_start values, e.g. 10..95:5");

    // window
    auto* window = app.add_subcommand("window", "Largest BlockZero window that keeps mean SSIM above a threshold");
    add_common(window, window_c);
    add_experiment_flags(window, window_f);
    int window_nb = 1, window_t = 50, window_nmax = 0;
    double window_thr = 0.8;
    window->add_option("--nb", window_nb, "Decoder levels removed");
    window->add_option("--tstart", window_t, "First intervened step");
    window->add_option("--threshold", window_thr, "Mean SSIM threshold in [0, 1]");
    window->add_option("--n-max", window_nmax, "Largest n probed (0 = up to t_start - 1)");

    // relax
    auto* relax = app.add_subcommand("relax", "Cut-relax-cut: shortest relax period that restores quality");
    add_common(relax, relax_c);
    add_experiment_flags(relax, relax_f);
    int relax_nb = 1, relax_t = 60, relax_n = 5;
    double relax_thr = 0.8;
    std::string relax_r = "1..10";
    relax->add_option("--nb", relax_nb, "Decoder levels removed");
    relax->add_option("--tstart", relax_t, "First intervened step");
    relax->add_option("--n", relax_n, "Length of each cut");
    relax->add_option("--r", relax_r, "Relax lengths to probe, e.g. 1..10");
    relax->add_option("--threshold", relax_thr, "Mean SSIM threshold in [0, 1]");

    // strategy
    auto* strat = app.add_subcommand("strategy", "Run a shortcut strategy against the baseline and report its cost");
    add_common(strat, strat_c);
    add_experiment_flags(strat, strat_f);
    std::string strat_name = "fig10";
    strat->add_option("--strategy", strat_name, "Built-in name (fig10, empty) or a strategy JSON file");

    // report
    auto* report = app.add_subcommand("report", "Verify a run directory and summarise it");
    std::string report_in, report_out;
    report->add_option("--in", report_in, "Run directory")->required();
    report->add_option("--out", report_out, "Report directory (must be absent or empty)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        if (argc > 1) std::cerr << "error: " << e.what() << "\n\n";
        const auto chosen = app.get_subcommands();
        std::cerr << (chosen.empty() ? app.help() : chosen.front()->help());
        return 2;
    }

    const auto started = std::chrono::steady_clock::now();
    try {
        int workers = default_workers();
        auto run_experiment_cmd = [&](const Common& c, ExperimentConfig e) {
            const auto text = load_config_text(c);
            if (text) e = experiment_config_from_json(parse_json_text(*text, c.config));
            print_curve(run_experiment_to_dir(e, c.out, workers, text));
        };
        // An explicit --seeds list names every sample, so it stands in for --seed.
        auto need_seed = [](CLI::App* cmd) {
            if (cmd->count("--config") > 0) return;
            if (const auto* seeds = cmd->get_option_no_throw("--seeds"); seeds && seeds->count() > 0) return;
            require_flags(cmd, {"--seed"});
        };

        if (*gen) {
            check_config_exclusive(gen);
            need_seed(gen);
            GenDataConfig g;
            const auto text = load_config_text(gen_c);
            if (text) {
                g = gen_data_config_from_json(parse_json_text(*text, gen_c.config));
            } else {
                g.data = gen_spec;
                g.data.seed = gen_c.seed;
                g.count = gen_count;
            }
            gen_data_to_dir(g, gen_c.out, text);
            std::printf("wrote %lld images to %s\n", static_cast<long long>(g.count), gen_c.out.c_str());
        } else if (*train) {
            check_config_exclusive(train);
            need_seed(train);
            const auto text = load_config_text(train_c);
            if (text) {
                tc = train_config_from_json(parse_json_text(*text, train_c.config));
            } else {
                tc.seed = train_c.seed;
                tc.data.seed = train_c.seed;
                tc.schedule.kind = parse_schedule_kind(train_schedule);
                tc.schedule.T = train_T;
                tc.unet = default_toy_unet(tc.data, train_T);
                tc.unet.base_channels = base_channels;
            }
            const int every = std::max(1, tc.steps / 20);
            auto r = train_to_dir(tc, train_c.out, text, [&](const LossRecord& rec) {
                if (rec.step % every == 0 || rec.step == tc.steps)
                    std::fprintf(stderr, "step %d/%d loss %.5f (zero predictor %.5f)\n", rec.step, tc.steps, rec.loss,
                                 rec.zero_loss);
            });
            std::printf("final loss %.5f, zero-predictor loss %.5f, ratio %.2f\n", r.final_loss, r.final_zero_loss,
                        r.final_zero_loss / r.final_loss);
        } else if (*sweep) {
            check_config_exclusive(sweep);
            need_seed(sweep);
            ExperimentConfig e;
            if (sweep->count("--config") == 0) {
                require_flags(sweep, {"--checkpoint", "--tstart"});
                e = base_experiment(ExperimentKind::SweepTStart, sweep_c, sweep_f);
                e.intervention = parse_segment_kind(sweep_kind);
                e.magnitude = sweep_mag;
                e.n = sweep_n;
                e.t_starts = to_ints(sweep_tstart);
            }
            run_experiment_cmd(sweep_c, e);
        } else if (*window) {
            check_config_exclusive(window);
            need_seed(window);
            ExperimentConfig e;
            if (window->count("--config") == 0) {
                require_flags(window, {"--checkpoint"});
                e = base_experiment(ExperimentKind::MaxWindow, window_c, window_f);
                e.nb = window_nb;
                e.t_start = window_t;
                e.threshold = window_thr;
                e.n_max = window_nmax;
            }
            run_experiment_cmd(window_c, e);
        } else if (*relax) {
            check_config_exclusive(relax);
            need_seed(relax);
            ExperimentConfig e;
            if (relax->count("--config") == 0) {
                require_flags(relax, {"--checkpoint"});
                e = base_experiment(ExperimentKind::CutRelaxCut, relax_c, relax_f);
                e.nb = relax_nb;
                e.t_start = relax_t;
                e.n = relax_n;
                e.r_values = to_ints(relax_r);
                e.threshold = relax_thr;
            }
            run_experiment_cmd(relax_c, e);
        } else if (*strat) {
            check_config_exclusive(strat);
            need_seed(strat);
            ExperimentConfig e;
            if (strat->count("--config") == 0) {
                require_flags(strat, {"--checkpoint"});
                e = base_experiment(ExperimentKind::RunStrategy, strat_c, strat_f);
                if (fs::exists(strat_name)) {
                    e.strategy = strategy_from_json(read_text(strat_name));
                } else {
                    const Checkpoint ck = load_checkpoint(e.checkpoint);
                    e.strategy = builtin_strategy(strat_name, ck.unet.levels);
                }
            }
            run_experiment_cmd(strat_c, e);
        } else if (*report) {
            write_report(report_in, report_out);
            std::printf("report written to %s\n", report_out.c_str());
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::fprintf(stderr, "wall time %.1f s (machine-dependent, not recorded in outputs)\n", secs);
    return 0;
}
