#include "diffscope/unet.hpp"

#include <cmath>
#include <sstream>

namespace diffscope {

namespace {

constexpr double kNormEps = 1e-5;
constexpr ops::ConvGeometry kSame{1, 1};
constexpr ops::ConvGeometry kDown{2, 1};   // 3x3, stride 2
constexpr ops::ConvGeometry kUp{2, 1};     // 4x4, stride 2: exact doubling
constexpr int kUpKernel = 4;

std::string lvl(const char* side, int l) { return std::string(side) + std::to_string(l); }

template <typename T>
struct Forward {
    Tape<T>& tape;
    const ParamStore<T>& params;
    const UnetConfig& cfg;
    const ActivationHook<T>* hook;

    Var p(const std::string& name) { return tape.param(params, name); }

    void notify(SiteKind kind, int level, Var v) {
        if (hook && *hook) (*hook)(ActivationSite{kind, level}, tape, v);
    }

    Var conv(const std::string& prefix, Var x, ops::ConvGeometry g) {
        return tape.conv2d(x, p(prefix + ".w"), p(prefix + ".b"), g);
    }

    Var norm_act(const std::string& prefix, Var x) {
        const auto c = tape.value(x).dim(1);
        return tape.silu(tape.group_norm(x, ops::default_groups(c), p(prefix + ".g"), p(prefix + ".b"), kNormEps));
    }

    // {group_norm -> silu -> conv} x 2, time embedding added after the first conv.
    Var block(const std::string& prefix, Var x, Var temb_act) {
        Var h = conv(prefix + ".conv1", norm_act(prefix + ".norm1", x), kSame);
        Var offset = tape.linear(temb_act, p(prefix + ".temb.w"), p(prefix + ".temb.b"));
        h = tape.add_channel_offset(h, offset);
        return conv(prefix + ".conv2", norm_act(prefix + ".norm2", h), kSame);
    }

    Var time_embedding(std::span<const int> timesteps, std::span<const int> classes) {
        const auto batch = static_cast<std::int64_t>(timesteps.size());
        Var sin = tape.constant(sinusoidal_embedding<T>(timesteps, cfg.sinusoid_dim(), cfg.max_timestep));
        Var e = tape.linear(sin, p("temb.fc1.w"), p("temb.fc1.b"));
        e = tape.linear(tape.silu(e), p("temb.fc2.w"), p("temb.fc2.b"));
        if (cfg.num_classes > 0) {
            if (static_cast<std::int64_t>(classes.size()) != batch) {
                throw UsageError("conditional model needs one class label per sample");
            }
            std::vector<std::int64_t> rows(classes.begin(), classes.end());
            for (auto r : rows) {
                if (r < 0 || r >= cfg.num_classes) throw UsageError("class label " + std::to_string(r) + " out of range");
            }
            e = tape.add(e, tape.gather_rows(p("class_embed"), std::move(rows)));
        } else if (!classes.empty()) {
            throw UsageError("unconditional model given class labels");
        }
        return tape.silu(e);
    }

    Var decoder_level(int l, Var below, Var skip, Var temb_act) {
        notify(SiteKind::Skip, l, skip);
        Var h = block(lvl("dec", l), tape.concat_channels(below, skip), temb_act);
        if (l > 1) {
            h = tape.conv_transpose2d(h, p(lvl("dec", l) + ".up.w"), p(lvl("dec", l) + ".up.b"), kUp);
        }
        notify(SiteKind::DecoderOut, l, h);
        return h;
    }

    template <bool kIntervene>
    Var run(Var x, std::span<const int> timesteps, std::span<const int> classes, InterventionMask mask) {
        const auto& xv = tape.value(x);
        if (xv.rank() != 4 || xv.dim(1) != cfg.image_channels || xv.dim(2) != cfg.image_side ||
            xv.dim(3) != cfg.image_side) {
            throw UsageError("unet input " + shape_str(xv.shape()) + " does not match the configured image");
        }
        if (static_cast<std::int64_t>(timesteps.size()) != xv.dim(0)) {
            throw UsageError("need one time step per batch element");
        }
        if constexpr (kIntervene) mask.validate(cfg);
        const auto batch = xv.dim(0);  // xv dangles once the tape grows
        const int D = cfg.levels;
        const int nb = kIntervene ? mask.nb : 0;
        const int ns = kIntervene ? mask.ns : 0;

        Var temb = time_embedding(timesteps, classes);

        std::vector<Var> skips(static_cast<std::size_t>(D + 1));
        Var h = conv("stem", x, kSame);
        for (int l = 1; l <= D - nb; ++l) {
            if (l > 1) h = conv(lvl("enc", l) + ".down", h, kDown);
            h = block(lvl("enc", l), h, temb);
            notify(SiteKind::EncoderOut, l, h);
            skips[static_cast<std::size_t>(l)] = h;
        }

        int top_live = D;
        if (nb == 0) {
            h = block("mid", h, temb);
            notify(SiteKind::Bottleneck, 0, h);
        } else {
            // Output of decoder level D - nb + 1 is a zero map; everything feeding only it is skipped.
            const int l = D - nb;
            h = tape.constant(Tensor<T>(Shape{batch, cfg.channels(l), cfg.side(l), cfg.side(l)}));
            notify(SiteKind::DecoderOut, l + 1, h);
            top_live = l;
        }

        for (int l = top_live; l >= 1; --l) {
            Var skip = skips[static_cast<std::size_t>(l)];
            if (l <= ns) skip = tape.constant(Tensor<T>(tape.value(skip).shape()));
            h = decoder_level(l, h, skip, temb);
        }
        h = conv("out.conv", norm_act("out.norm", h), kSame);
        return h;
    }
};

template <typename T>
struct Initializer {
    ParamStore<T>& store;
    std::mt19937_64 rng;

    Tensor<T> normal(Shape shape, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data()) v = T(dist(rng));
        return t;
    }

    void conv(const std::string& name, int cin, int cout, int k) {
        store.add(name + ".w", normal(Shape{cout, cin, k, k}, std::sqrt(2.0 / double(cin * k * k))));
        store.add(name + ".b", Tensor<T>(Shape{cout}));
    }

    void conv_transpose(const std::string& name, int cin, int cout, int k, int stride) {
        // Each output pixel sees about cin * k * k / stride^2 inputs.
        const double fan_in = double(cin * k * k) / double(stride * stride);
        store.add(name + ".w", normal(Shape{cin, cout, k, k}, std::sqrt(2.0 / fan_in)));
        store.add(name + ".b", Tensor<T>(Shape{cout}));
    }

    void linear(const std::string& name, int in, int out) {
        store.add(name + ".w", normal(Shape{out, in}, std::sqrt(2.0 / double(in))));
        store.add(name + ".b", Tensor<T>(Shape{out}));
    }

    void norm(const std::string& name, int c) {
        store.add(name + ".g", Tensor<T>(Shape{c}, T(1)));
        store.add(name + ".b", Tensor<T>(Shape{c}));
    }

    void block(const std::string& prefix, int cin, int cout, int temb) {
        norm(prefix + ".norm1", cin);
        conv(prefix + ".conv1", cin, cout, 3);
        linear(prefix + ".temb", temb, cout);
        norm(prefix + ".norm2", cout);
        conv(prefix + ".conv2", cout, cout, 3);
    }
};

}  // namespace

void UnetConfig::validate() const {
    if (levels < 2) throw ConfigError("unet needs at least 2 levels");
    if (static_cast<int>(channel_mult.size()) != levels) {
        throw ConfigError("channel_mult has " + std::to_string(channel_mult.size()) + " entries for " +
                          std::to_string(levels) + " levels");
    }
    if (base_channels <= 0 || time_embed_dim <= 0 || image_channels <= 0 || image_side <= 0) {
        throw ConfigError("unet sizes must be positive");
    }
    if (blocks_per_level != 1) throw ConfigError("only one block per level is supported");
    if (num_classes < 0) throw ConfigError("num_classes must be non-negative");
    if (max_timestep < 1) throw ConfigError("max_timestep must be positive");
    if (image_side % (1 << (levels - 1)) != 0) {
        throw ConfigError("image side " + std::to_string(image_side) + " not divisible by 2^(levels-1)");
    }
    for (int l = 1; l <= levels; ++l) {
        if (channel_mult[static_cast<std::size_t>(l - 1)] <= 0) throw ConfigError("channel_mult must be positive");
        for (int c : {channels(l), 2 * channels(l)}) {
            if (c % ops::default_groups(c) != 0) {
                throw ConfigError("channel count " + std::to_string(c) + " not divisible by its group count");
            }
        }
    }
}

int UnetConfig::channels(int level) const {
    return base_channels * channel_mult.at(static_cast<std::size_t>(level - 1));
}

int UnetConfig::side(int level) const { return image_side >> (level - 1); }

int UnetConfig::sinusoid_dim() const { return std::max(2, (time_embed_dim / 4) / 2 * 2); }

void InterventionMask::validate(const UnetConfig& cfg) const {
    if (ns < 0 || ns > cfg.levels - 1) {
        throw ConfigError("ns=" + std::to_string(ns) + " outside [0, " + std::to_string(cfg.levels - 1) + "]");
    }
    if (nb < 0 || nb > cfg.levels - 1) {
        throw ConfigError("nb=" + std::to_string(nb) + " outside [0, " + std::to_string(cfg.levels - 1) + "]");
    }
}

std::string InterventionMask::str() const {
    std::ostringstream os;
    os << "ns" << ns << "_nb" << nb;
    return os.str();
}

template <typename T>
ParamStore<T> init_unet_params(const UnetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    Initializer<T> init{store, std::mt19937_64(seed)};
    const int temb = cfg.time_embed_dim;
    init.linear("temb.fc1", cfg.sinusoid_dim(), temb);
    init.linear("temb.fc2", temb, temb);
    if (cfg.num_classes > 0) store.add("class_embed", init.normal(Shape{cfg.num_classes, temb}, 1.0));
    init.conv("stem", cfg.image_channels, cfg.channels(1), 3);
    for (int l = 1; l <= cfg.levels; ++l) {
        const int cin = l == 1 ? cfg.channels(1) : cfg.channels(l - 1);
        if (l > 1) init.conv(lvl("enc", l) + ".down", cin, cin, 3);
        init.block(lvl("enc", l), cin, cfg.channels(l), temb);
    }
    init.block("mid", cfg.channels(cfg.levels), cfg.channels(cfg.levels), temb);
    for (int l = cfg.levels; l >= 1; --l) {
        init.block(lvl("dec", l), 2 * cfg.channels(l), cfg.channels(l), temb);
        if (l > 1) init.conv_transpose(lvl("dec", l) + ".up", cfg.channels(l), cfg.channels(l - 1), kUpKernel, 2);
    }
    init.norm("out.norm", cfg.channels(1));
    init.conv("out.conv", cfg.channels(1), cfg.image_channels, 3);
    return store;
}

template <typename T>
Tensor<T> sinusoidal_embedding(std::span<const int> timesteps, int dim, int max_timestep) {
    const int half = dim / 2;
    const double scale = 1000.0 / double(max_timestep);
    Tensor<T> out(Shape{static_cast<std::int64_t>(timesteps.size()), dim});
    for (std::size_t n = 0; n < timesteps.size(); ++n) {
        const double t = double(timesteps[n]) * scale;
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
            out[n * dim + i] = T(std::sin(t * freq));
            out[n * dim + half + i] = T(std::cos(t * freq));
        }
    }
    return out;
}

template <typename T>
Var unet_forward(Tape<T>& tape, const ParamStore<T>& params, const UnetConfig& cfg, Var x,
                 std::span<const int> timesteps, std::span<const int> classes, InterventionMask mask,
                 const ActivationHook<T>* hook) {
    Forward<T> f{tape, params, cfg, hook};
    return f.template run<true>(x, timesteps, classes, mask);
}

template <typename T>
Var unet_forward_plain(Tape<T>& tape, const ParamStore<T>& params, const UnetConfig& cfg, Var x,
                       std::span<const int> timesteps, std::span<const int> classes, const ActivationHook<T>* hook) {
    Forward<T> f{tape, params, cfg, hook};
    return f.template run<false>(x, timesteps, classes, InterventionMask{});
}

template <typename T>
Tensor<T> unet_predict(const ParamStore<T>& params, const UnetConfig& cfg, const Tensor<T>& x,
                       std::span<const int> timesteps, std::span<const int> classes, InterventionMask mask,
                       const ActivationHook<T>* hook) {
    Tape<T> tape(false);
    Var in = tape.constant(x);
    Var out = unet_forward(tape, params, cfg, in, timesteps, classes, mask, hook);
    return tape.value(out);
}

std::uint64_t count_flops(const UnetConfig& cfg, InterventionMask mask) {
    cfg.validate();
    mask.validate(cfg);
    using U = std::uint64_t;
    const U temb = static_cast<U>(cfg.time_embed_dim);
    auto conv = [](U cin, U cout, U k, U out_side) { return cin * cout * k * k * out_side * out_side; };
    auto block = [&](U cin, U cout, U side) { return conv(cin, cout, 3, side) + temb * cout + conv(cout, cout, 3, side); };
    auto ch = [&](int l) { return static_cast<U>(cfg.channels(l)); };
    auto sd = [&](int l) { return static_cast<U>(cfg.side(l)); };
    const int D = cfg.levels;

    U total = static_cast<U>(cfg.sinusoid_dim()) * temb + temb * temb;
    total += conv(static_cast<U>(cfg.image_channels), ch(1), 3, sd(1));
    for (int l = 1; l <= D - mask.nb; ++l) {
        const U cin = l == 1 ? ch(1) : ch(l - 1);
        if (l > 1) total += conv(cin, cin, 3, sd(l));
        total += block(cin, ch(l), sd(l));
    }
    const int top_live = mask.nb == 0 ? D : D - mask.nb;
    if (mask.nb == 0) total += block(ch(D), ch(D), sd(D));
    for (int l = top_live; l >= 1; --l) {
        total += block(2 * ch(l), ch(l), sd(l));
        // Transposed conv: every input position spreads to k*k outputs per channel pair.
        if (l > 1) total += ch(l) * ch(l - 1) * U(kUpKernel * kUpKernel) * sd(l) * sd(l);
    }
    total += conv(ch(1), static_cast<U>(cfg.image_channels), 3, sd(1));
    return total;
}

template ParamStore<float> init_unet_params(const UnetConfig&, std::uint64_t);
template ParamStore<double> init_unet_params(const UnetConfig&, std::uint64_t);
template Tensor<float> sinusoidal_embedding(std::span<const int>, int, int);
template Tensor<double> sinusoidal_embedding(std::span<const int>, int, int);
template Var unet_forward(Tape<float>&, const ParamStore<float>&, const UnetConfig&, Var, std::span<const int>,
                          std::span<const int>, InterventionMask, const ActivationHook<float>*);
template Var unet_forward(Tape<double>&, const ParamStore<double>&, const UnetConfig&, Var, std::span<const int>,
                          std::span<const int>, InterventionMask, const ActivationHook<double>*);
template Var unet_forward_plain(Tape<float>&, const ParamStore<float>&, const UnetConfig&, Var,
                                std::span<const int>, std::span<const int>, const ActivationHook<float>*);
template Var unet_forward_plain(Tape<double>&, const ParamStore<double>&, const UnetConfig&, Var,
                                std::span<const int>, std::span<const int>, const ActivationHook<double>*);
template Tensor<float> unet_predict(const ParamStore<float>&, const UnetConfig&, const Tensor<float>&,
                                    std::span<const int>, std::span<const int>, InterventionMask,
                                    const ActivationHook<float>*);
template Tensor<double> unet_predict(const ParamStore<double>&, const UnetConfig&, const Tensor<double>&,
                                     std::span<const int>, std::span<const int>, InterventionMask,
                                     const ActivationHook<double>*);

}  // namespace diffscope
