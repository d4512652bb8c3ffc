#include "diffscope/experiment.hpp"
#include "diffscope/io.hpp"
#include "diffscope/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace diffscope;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> from_numpy(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_numpy(const Tensor<float>& t) {
    FloatArray out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

SsimWindow window_of(const std::string& s) {
    if (s == "gaussian11") return SsimWindow::Gaussian11;
    if (s == "uniform7") return SsimWindow::Uniform7;
    throw ConfigError("unknown ssim window: " + s);
}

py::dict cost_dict(const CostReport& r) {
    py::dict d;
    d["nfe_baseline"] = r.nfe_baseline;
    d["nfe_strategy"] = r.nfe_strategy;
    d["nfe_saving_fraction"] = r.nfe_saving_fraction();
    d["flops_baseline"] = r.flops_baseline;
    d["flops_strategy"] = r.flops_strategy;
    d["savings_fraction"] = r.savings_fraction;
    d["nfe_saved_early_stop"] = r.nfe_saved_early_stop;
    d["nfe_saved_time_skip"] = r.nfe_saved_time_skip;
    d["flops_saved_early_stop"] = r.flops_saved_early_stop;
    d["flops_saved_time_skip"] = r.flops_saved_time_skip;
    d["flops_saved_masks"] = r.flops_saved_masks;
    return d;
}

// A loaded checkpoint plus the denoiser bound to its parameters.
class Model {
public:
    explicit Model(const std::filesystem::path& path)
        : ck_(load_checkpoint(path)), schedule_(ck_.schedule.make()), denoiser_(unet_denoiser(ck_.params, ck_.unet)) {}

    FloatArray generate(std::uint64_t seed, int class_id, const std::optional<std::string>& strategy) const {
        const Strategy s = strategy ? strategy_from_json(*strategy) : Strategy{};
        GenerateOptions opts;
        opts.snapshot_stride = 0;
        opts.keep_eps = false;
        opts.keep_x0 = false;
        Trajectory tr;
        {
            py::gil_scoped_release release;
            tr = diffscope::generate(denoiser_, schedule_, s, {seed, class_id}, opts);
        }
        return to_numpy(tr.image.reshaped(denoiser_.sample_shape));
    }

    py::dict cost(const std::string& strategy) const {
        return cost_dict(strategy_cost(strategy_from_json(strategy), schedule_.T, ck_.unet));
    }

    std::uint64_t flops(int ns, int nb) const { return count_flops(ck_.unet, {ns, nb}); }
    int step() const { return ck_.step; }
    int levels() const { return ck_.unet.levels; }
    int timesteps() const { return schedule_.T; }
    int num_classes() const { return ck_.unet.num_classes; }
    std::string unet_config() const { return dump_config(to_json(ck_.unet)); }

private:
    Checkpoint ck_;
    NoiseSchedule schedule_;
    Denoiser denoiser_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bindings for the diffscope library";
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "toy_images",
        [](std::int64_t count, std::uint64_t seed, int side, int classes) {
            ToySpec spec;
            spec.seed = seed;
            spec.side = side;
            spec.classes = classes;
            const auto ds = gen_dataset(spec, count);
            return py::make_tuple(to_numpy(ds.images), ds.labels);
        },
        py::arg("count"), py::arg("seed"), py::arg("side") = 32, py::arg("classes") = 10,
        "Procedural toy images [N, C, H, W] in [-1, 1] and their class labels.");
    m.def("class_name", &class_name, py::arg("class_id"));

    m.def(
        "ssim",
        [](const FloatArray& a, const FloatArray& b, const std::string& window, bool per_channel) {
            SsimParams p;
            p.window = window_of(window);
            p.per_channel = per_channel;
            return ssim(from_numpy(a), from_numpy(b), p);
        },
        py::arg("a"), py::arg("b"), py::arg("window") = "gaussian11", py::arg("per_channel") = false,
        "Mean SSIM of two [C, H, W] images with values in [0, 1].");
    m.def(
        "psnr", [](const FloatArray& a, const FloatArray& b, double max_val) { return psnr(from_numpy(a), from_numpy(b), max_val); },
        py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
    m.def(
        "to_unit_range", [](const FloatArray& x) { return to_numpy(to_unit_range(from_numpy(x))); }, py::arg("x"),
        "Maps [-1, 1] model images onto [0, 1].");

    m.def(
        "builtin_strategy", [](const std::string& name, int levels) { return strategy_to_json(builtin_strategy(name, levels)); },
        py::arg("name"), py::arg("levels") = 4, "Strategy JSON of a built-in strategy.");
    m.def(
        "validate_strategy",
        [](const std::string& text, int T, int levels) { return validate_strategy(strategy_from_json(text), T, levels); },
        py::arg("strategy"), py::arg("T") = 100, py::arg("levels") = 4);
    m.def(
        "strategy_cost",
        [](const std::string& text, int T, const std::optional<std::string>& unet_config) {
            const UnetConfig cfg =
                unet_config ? unet_config_from_json(parse_json_text(*unet_config, "unet config")) : default_toy_unet();
            return cost_dict(strategy_cost(strategy_from_json(text), T, cfg));
        },
        py::arg("strategy"), py::arg("T") = 100, py::arg("unet_config") = std::nullopt);

    py::class_<Model>(m, "Model")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def("generate", &Model::generate, py::arg("seed"), py::arg("class_id") = 0, py::arg("strategy") = std::nullopt,
             "Final image [C, H, W] in [-1, 1]; `strategy` is strategy JSON.")
        .def("cost", &Model::cost, py::arg("strategy"))
        .def("flops", &Model::flops, py::arg("ns") = 0, py::arg("nb") = 0)
        .def_property_readonly("step", &Model::step)
        .def_property_readonly("levels", &Model::levels)
        .def_property_readonly("T", &Model::timesteps)
        .def_property_readonly("num_classes", &Model::num_classes)
        .def_property_readonly("unet_config", &Model::unet_config);

    m.def(
        "train",
        [](const std::string& config, const std::filesystem::path& out) {
            const auto cfg = train_config_from_json(parse_json_text(config, "train config"));
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train_to_dir(cfg, out, config);
            }
            py::dict d;
            d["final_loss"] = r.final_loss;
            d["final_zero_loss"] = r.final_zero_loss;
            d["steps"] = cfg.steps;
            return d;
        },
        py::arg("config"), py::arg("out"), "Trains from a JSON config into a new output directory.");
    m.def(
        "run_experiment",
        [](const std::string& config, const std::filesystem::path& out, int workers) {
            const auto cfg = experiment_config_from_json(parse_json_text(config, "experiment config"));
            py::gil_scoped_release release;
            run_experiment_to_dir(cfg, out, workers, config);
        },
        py::arg("config"), py::arg("out"), py::arg("workers") = 1,
        "Runs an experiment from a JSON config into a new output directory.");
    m.def(
        "gen_data",
        [](const std::string& config, const std::filesystem::path& out) {
            gen_data_to_dir(gen_data_config_from_json(parse_json_text(config, "gen-data config")), out, config);
        },
        py::arg("config"), py::arg("out"));
    m.def("write_report", &write_report, py::arg("run_dir"), py::arg("out"));
    m.def("verify_manifest", &verify_manifest, py::arg("dir"), "Problems found in a sealed directory; empty when it verifies.");
}
