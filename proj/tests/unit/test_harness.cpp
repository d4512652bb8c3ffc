#include "doctest.h"

#include "diffscope/experiment.hpp"
#include "diffscope/trainer.hpp"

#include <cmath>
#include <cstring>
#include <unistd.h>

using namespace diffscope;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("diffscope_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Four levels so that the built-in strategies validate; small enough to sample quickly.
TrainConfig tiny_train(std::uint64_t seed = 3) {
    TrainConfig c;
    c.data.side = 16;
    c.data.classes = 2;
    c.unet = default_toy_unet(c.data, 100);
    c.unet.base_channels = 8;
    c.unet.channel_mult = {1, 2, 2, 2};
    c.unet.time_embed_dim = 16;
    c.seed = seed;
    c.steps = 3;
    c.batch = 4;
    c.warmup = 0;
    c.checkpoint_every = 0;
    return c;
}

std::string slurp(const fs::path& p) { return read_text(p); }

}  // namespace

TEST_CASE("toy dataset is deterministic, balanced and in range") {
    ToySpec spec;
    spec.seed = 11;
    const auto a = gen_dataset(spec, 20), b = gen_dataset(spec, 20);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);

    const auto ten = gen_dataset(spec, 10);
    std::vector<int> sorted = ten.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

    // An image depends on its index only, not on what else is in the batch.
    CHECK(toy_batch(spec, {7}).images.reshaped({3, 32, 32}) == toy_image(spec, 7));
    CHECK(toy_batch(spec, {3, 7}).images.batch_slice(1).reshaped({3, 32, 32}) == toy_image(spec, 7));

    ToySpec other = spec;
    other.seed = 12;
    CHECK_FALSE(toy_image(other, 0) == toy_image(spec, 0));

    CHECK_THROWS_AS(gen_dataset(spec, 0), UsageError);
    spec.classes = 11;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("toy pixel range over ten thousand images") {
    ToySpec spec;
    spec.seed = 5;
    float lo = 1.0f, hi = -1.0f;
    for (std::int64_t i = 0; i < 10000; ++i) {
        const auto img = toy_image(spec, i);
        for (float v : img.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    CHECK(lo >= -1.0f);
    CHECK(hi <= 1.0f);
    // The range is actually used.
    CHECK(hi - lo > 1.0f);
}

TEST_CASE("int list parsing") {
    CHECK(parse_int_list("3") == std::vector<std::int64_t>{3});
    CHECK(parse_int_list("1..4") == std::vector<std::int64_t>{1, 2, 3, 4});
    CHECK(parse_int_list("10..25:5") == std::vector<std::int64_t>{10, 15, 20, 25});
    CHECK(parse_int_list("10..26:5") == std::vector<std::int64_t>{10, 15, 20, 25});
    CHECK(parse_int_list("5..3") == std::vector<std::int64_t>{5, 4, 3});
    CHECK(parse_int_list("1,4..5,9") == std::vector<std::int64_t>{1, 4, 5, 9});
    CHECK_THROWS_AS(parse_int_list("1..5:0"), ConfigError);
    CHECK_THROWS_AS(parse_int_list("1..5:-1"), ConfigError);
    CHECK_THROWS_AS(parse_int_list("x"), ConfigError);
    CHECK_THROWS_AS(parse_int_list("1,,2"), ConfigError);
    CHECK_THROWS_AS(parse_int_list("3a"), ConfigError);
}

TEST_CASE("csv writer and parser") {
    CsvWriter w("demo", 2, {"a", "b"});
    w.cell(1).cell("x,y");
    w.end_row();
    w.cell(std::numeric_limits<double>::infinity()).cell("say \"hi\"");
    w.end_row();
    CHECK(w.text().rfind("#schema=demo;version=2\na,b\n", 0) == 0);
    const auto t = parse_csv(w.text());
    CHECK(t.schema == "demo");
    CHECK(t.version == 2);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1] == "x,y");
    CHECK(t.rows[1][0] == "inf");
    CHECK(t.rows[1][1] == "say \"hi\"");
    CHECK(t.column("b") == 1);
    CHECK_THROWS_AS(w.end_row(), UsageError);
    CHECK_THROWS_AS(parse_csv("a,b\n1,2\n"), IoError);

    CsvWriter d("d", 1, {"v"});
    d.cell(0.1);
    d.end_row();
    CHECK(std::stod(parse_csv(d.text()).rows[0][0]) == 0.1);
}

TEST_CASE("ppm round trip") {
    Tensor<float> img({3, 4, 5});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i % 256) / 255.0f;
    const std::string enc = encode_ppm(img);
    CHECK(enc.rfind("P6\n5 4\n255\n", 0) == 0);
    CHECK(enc.size() == std::string("P6\n5 4\n255\n").size() + 60);
    const auto back = decode_ppm(std::span(reinterpret_cast<const unsigned char*>(enc.data()), enc.size()));
    CHECK(max_abs_diff(back, img) < 1e-6);
    CHECK_THROWS_AS(encode_ppm(Tensor<float>({2, 4, 4})), UsageError);
}

TEST_CASE("config JSON round trips and rejects unknown fields") {
    TrainConfig t = tiny_train();
    t.ema_decay = 0.99;
    CHECK(train_config_from_json(to_json(t)) == t);

    ExperimentConfig e;
    e.kind = ExperimentKind::SweepTStart;
    e.checkpoint = "c.bin";
    e.seed = 4;
    e.samples = 7;
    e.intervention = SegmentKind::BlockZero;
    e.magnitude = 2;
    e.t_starts = {10, 20};
    CHECK(experiment_config_from_json(to_json(e)) == e);
    e.seeds = {9, 3};
    CHECK(experiment_config_from_json(to_json(e)) == e);

    ExperimentConfig s;
    s.checkpoint = "c.bin";
    s.strategy = fig10_strategy(4);
    CHECK(experiment_config_from_json(to_json(s)) == s);

    Json bad = to_json(e);
    bad["t_strat"] = 3;
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
    Json no_seed = to_json(t);
    no_seed.erase("seed");
    CHECK_THROWS_AS(train_config_from_json(no_seed), ConfigError);
    CHECK_THROWS_AS(parse_json_text("{", "x"), ConfigError);
}

TEST_CASE("checkpoint round trip and layout") {
    Checkpoint c;
    c.unet = tiny_train().unet;
    c.data = tiny_train().data;
    c.train_seed = 42;
    c.step = 17;
    c.params = init_unet_params<float>(c.unet, 9);
    const auto bytes = encode_checkpoint(c);
    CHECK(decode_checkpoint(bytes) == c);

    // Header: magic, version, config length, config text; first record follows.
    CHECK(std::memcmp(bytes.data(), "DDPMSCPL", 8) == 0);
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 8, 4);
    CHECK(version == 1);
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + 12, 8);
    const std::string text(reinterpret_cast<const char*>(bytes.data() + 20), len);
    CHECK(Json::parse(text).at("step") == 17);
    std::uint32_t name_len;
    std::memcpy(&name_len, bytes.data() + 20 + len, 4);
    const std::string first_name(reinterpret_cast<const char*>(bytes.data() + 24 + len), name_len);
    CHECK(first_name == c.params.begin()->first);
    std::uint64_t trailer;
    std::memcpy(&trailer, bytes.data() + bytes.size() - 8, 8);
    CHECK(trailer == fnv1a64(std::span(bytes).first(bytes.size() - 8)));

    // Payload size: header + records + trailer.
    std::size_t expected = 8 + 4 + 8 + len + 8;
    for (const auto& [name, t] : c.params) expected += 4 + name.size() + 4 + 8 * t.rank() + 4 * t.numel();
    CHECK(bytes.size() == expected);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 1;
    CHECK_THROWS_AS(decode_checkpoint(flipped), IoError);
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 3)), IoError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), IoError);

    TempDir tmp;
    save_checkpoint(tmp.path / "c.bin", c);
    CHECK(load_checkpoint(tmp.path / "c.bin") == c);
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "missing.bin"), IoError);
}

TEST_CASE("output directories are sealed by a manifest") {
    TempDir tmp;
    {
        OutputDir d(tmp.path / "ok");
        d.write_text("a.csv", "x\n");
        d.write_text("sub/b.txt", "y\n");
        d.commit();
    }
    CHECK(verify_manifest(tmp.path / "ok").empty());
    CHECK(read_manifest(tmp.path / "ok").size() == 2);

    write_text_atomic(tmp.path / "ok" / "a.csv", "changed\n");
    CHECK(verify_manifest(tmp.path / "ok").size() == 1);
    write_text_atomic(tmp.path / "ok" / "a.csv", "x\n");
    write_text_atomic(tmp.path / "ok" / "stray.txt", "z\n");
    CHECK(verify_manifest(tmp.path / "ok").size() == 1);

    {
        OutputDir d(tmp.path / "abandoned");
        d.write_text("a.csv", "x\n");
        d.write_text("images/b.ppm", "y\n");
    }
    CHECK_FALSE(fs::exists(tmp.path / "abandoned"));

    fs::create_directories(tmp.path / "existing");
    {
        OutputDir d(tmp.path / "existing");
        d.write_text("images/b.ppm", "y\n");
    }
    CHECK(fs::exists(tmp.path / "existing"));
    CHECK(fs::is_empty(tmp.path / "existing"));

    CHECK_THROWS_AS(OutputDir(tmp.path / "ok"), IoError);
    CHECK_FALSE(verify_manifest(tmp.path / "existing").empty());
}

TEST_CASE("training: one step moves parameters, runs repeat exactly") {
    TrainConfig cfg = tiny_train();
    cfg.steps = 1;
    const auto init = init_unet_params<float>(cfg.unet, cfg.seed);
    const auto r = train_model(cfg);
    CHECK_FALSE(r.checkpoint.params == init);
    CHECK(r.losses.size() == 1);
    CHECK(std::isfinite(r.final_loss));

    cfg.steps = 4;
    const auto a = train_model(cfg), b = train_model(cfg);
    CHECK(loss_csv(a.losses) == loss_csv(b.losses));
    CHECK(a.checkpoint == b.checkpoint);
    cfg.seed = 4;
    CHECK(loss_csv(train_model(cfg).losses) != loss_csv(a.losses));
}

TEST_CASE("training writes byte-identical directories") {
    TempDir tmp;
    TrainConfig cfg = tiny_train();
    cfg.checkpoint_every = 2;
    train_to_dir(cfg, tmp.path / "a");
    train_to_dir(cfg, tmp.path / "b");
    for (const char* f : {"loss.csv", "checkpoint.bin", "config.json", "manifest.sha256"})
        CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    CHECK(verify_manifest(tmp.path / "a").empty());
    CHECK(parse_csv(slurp(tmp.path / "a" / "loss.csv")).rows.size() == 3);
    CHECK(load_checkpoint(tmp.path / "a" / "checkpoint.bin").step == 3);
}

TEST_CASE("a non-finite loss aborts training and keeps the last good checkpoint") {
    TempDir tmp;
    TrainConfig cfg = tiny_train();
    cfg.steps = 6;
    cfg.checkpoint_every = 2;
    TrainHooks hooks;
    Checkpoint last;
    int saved = 0;
    hooks.on_checkpoint = [&](const Checkpoint& c) {
        last = c;
        ++saved;
    };
    hooks.before_step = [](int step, ParamStore<float>& p) {
        if (step == 4) p.mut(p.begin()->first)[0] = std::numeric_limits<float>::quiet_NaN();
    };
    CHECK_THROWS_AS(train_model(cfg, hooks), TrainingDiverged);
    CHECK(saved == 1);
    CHECK(last.step == 2);
    CHECK(last.params.begin()->second.all_finite());
}

TEST_CASE("training beats the zero predictor on a small config") {
    TrainConfig cfg = tiny_train();
    cfg.data.side = 8;
    cfg.unet = default_toy_unet(cfg.data, 100);
    cfg.unet.levels = 2;
    cfg.unet.channel_mult = {1, 2};
    cfg.unet.base_channels = 16;
    cfg.unet.time_embed_dim = 32;
    cfg.steps = 300;
    cfg.batch = 16;
    cfg.lr = 2e-3;
    cfg.warmup = 20;
    const auto r = train_model(cfg);
    MESSAGE("final loss " << r.final_loss << " vs zero predictor " << r.final_zero_loss);
    CHECK(r.final_zero_loss == doctest::Approx(1.0).epsilon(0.1));
    CHECK(r.final_loss * 2.0 <= r.final_zero_loss);
}

TEST_CASE("experiment outputs, reruns and manifest") {
    TempDir tmp;
    const auto trained = train_model(tiny_train());
    const fs::path ck = tmp.path / "ck.bin";
    save_checkpoint(ck, trained.checkpoint);

    SUBCASE("empty strategy: identical pairs, no savings") {
        ExperimentConfig e;
        e.kind = ExperimentKind::RunStrategy;
        e.checkpoint = ck.string();
        e.seed = 1;
        e.samples = 3;
        e.image_dumps = 1;
        e.strategy = Strategy{};
        e.strategy->name = "empty";
        const auto r = run_experiment_to_dir(e, tmp.path / "empty", 1);
        const auto samples = parse_csv(slurp(tmp.path / "empty" / "samples.csv"));
        REQUIRE(samples.rows.size() == 3);
        for (const auto& row : samples.rows) {
            CHECK(row[samples.column("ssim")] == "1");
            CHECK(row[samples.column("psnr")] == "inf");
        }
        const auto cost = parse_csv(slurp(tmp.path / "empty" / "cost.csv"));
        CHECK(std::stod(cost.rows[0][cost.column("savings_fraction")]) == 0.0);
        CHECK(r.cost->savings_fraction == 0.0);
        CHECK(fs::exists(tmp.path / "empty" / "images" / "1_baseline.ppm"));
        CHECK(fs::exists(tmp.path / "empty" / "images" / "1_empty.ppm"));
        CHECK(slurp(tmp.path / "empty" / "images" / "1_baseline.ppm") == slurp(tmp.path / "empty" / "images" / "1_empty.ppm"));
        CHECK(verify_manifest(tmp.path / "empty").empty());
    }

    SUBCASE("two-seed sweep point: aggregate is the mean of the rows") {
        ExperimentConfig e;
        e.kind = ExperimentKind::SweepTStart;
        e.checkpoint = ck.string();
        e.seed = 5;
        e.samples = 2;
        e.intervention = SegmentKind::TimeSkip;
        e.n = 5;
        e.t_starts = {60};
        run_experiment_to_dir(e, tmp.path / "sweep", 1);
        const auto s = parse_csv(slurp(tmp.path / "sweep" / "samples.csv"));
        const auto a = parse_csv(slurp(tmp.path / "sweep" / "aggregate.csv"));
        REQUIRE(s.rows.size() == 2);
        REQUIRE(a.rows.size() == 1);
        const double s0 = std::stod(s.rows[0][s.column("ssim")]), s1 = std::stod(s.rows[1][s.column("ssim")]);
        CHECK(std::stod(a.rows[0][a.column("ssim_mean")]) == doctest::Approx((s0 + s1) / 2).epsilon(1e-15));
        CHECK(s.header == std::vector<std::string>{"point", "seed", "class_id", "t_start", "n", "kind", "magnitude",
                                                   "ssim", "psnr", "descriptor"});
        CHECK(s.rows[0][s.column("t_start")] == "60");
        CHECK(s.rows[0][s.column("kind")] == "time_skip");
        CHECK(fs::exists(tmp.path / "sweep" / "phases.csv"));
    }

    SUBCASE("fig10 histogram mass, rerun from the embedded config") {
        ExperimentConfig e;
        e.kind = ExperimentKind::RunStrategy;
        e.checkpoint = ck.string();
        e.seed = 8;
        e.samples = 6;
        e.image_dumps = 2;
        e.strategy = fig10_strategy(4);
        run_experiment_to_dir(e, tmp.path / "fig10", 1);
        const auto h = parse_csv(slurp(tmp.path / "fig10" / "histogram.csv"));
        CHECK(h.rows.size() == 20);
        std::int64_t mass = 0;
        for (const auto& row : h.rows) mass += std::stoll(row[h.column("count")]);
        CHECK(mass == 6);

        const std::string text = slurp(tmp.path / "fig10" / "config.json");
        const auto again = experiment_config_from_json(parse_json_text(text, "config"));
        run_experiment_to_dir(again, tmp.path / "fig10b", 2, text);
        for (const auto& entry : read_manifest(tmp.path / "fig10"))
            CHECK(slurp(tmp.path / "fig10" / entry.path) == slurp(tmp.path / "fig10b" / entry.path));
        CHECK(slurp(tmp.path / "fig10" / kManifestName) == slurp(tmp.path / "fig10b" / kManifestName));

        write_report(tmp.path / "fig10", tmp.path / "report");
        CHECK(slurp(tmp.path / "report" / "report.md").find("Cost") != std::string::npos);
        write_text_atomic(tmp.path / "fig10" / "samples.csv", "tampered");
        CHECK_THROWS_AS(write_report(tmp.path / "fig10", tmp.path / "report2"), IoError);
    }

    SUBCASE("window and relax outputs") {
        ExperimentConfig e;
        e.kind = ExperimentKind::MaxWindow;
        e.checkpoint = ck.string();
        e.seed = 2;
        e.samples = 2;
        e.nb = 1;
        e.t_start = 30;
        e.n_max = 3;
        e.threshold = 0.0;
        const auto w = run_experiment_to_dir(e, tmp.path / "window", 1);
        CHECK(w.window->n == 3);
        CHECK(parse_csv(slurp(tmp.path / "window" / "window.csv")).rows[0][3] == "3");

        e.kind = ExperimentKind::CutRelaxCut;
        e.n = 2;
        e.r_values = {1, 2};
        const auto r = run_experiment_to_dir(e, tmp.path / "relax", 1);
        REQUIRE(r.relax->r);
        CHECK(*r.relax->r == 1);
        CHECK(verify_manifest(tmp.path / "relax").empty());
    }

    SUBCASE("failures leave nothing behind") {
        ExperimentConfig e;
        e.kind = ExperimentKind::RunStrategy;
        e.checkpoint = (tmp.path / "nope.bin").string();
        e.seed = 1;
        e.samples = 1;
        e.strategy = Strategy{};
        CHECK_THROWS_AS(run_experiment_to_dir(e, tmp.path / "fail", 1), IoError);
        CHECK_FALSE(fs::exists(tmp.path / "fail"));

        e.checkpoint = ck.string();
        e.strategy->segments = {{150, 2, SegmentKind::TimeSkip, 0}};
        CHECK_THROWS_AS(run_experiment_to_dir(e, tmp.path / "fail", 1), ConfigError);
        CHECK_FALSE(fs::exists(tmp.path / "fail"));
    }
}

TEST_CASE("gen-data directory") {
    TempDir tmp;
    GenDataConfig g;
    g.data.side = 8;
    g.count = 12;
    gen_data_to_dir(g, tmp.path / "d");
    const auto labels = parse_csv(slurp(tmp.path / "d" / "labels.csv"));
    REQUIRE(labels.rows.size() == 12);
    CHECK(labels.rows[11][labels.column("label")] == "1");
    const auto img = decode_ppm(read_file(tmp.path / "d" / labels.rows[3][labels.column("file")]));
    CHECK(max_abs_diff(img, to_unit_range(toy_image(g.data, 3))) <= 0.5 / 255 + 1e-6);
    CHECK(verify_manifest(tmp.path / "d").empty());
}
