#include "diffscope/dataset.hpp"

#include "diffscope/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace diffscope {

namespace {

constexpr std::uint64_t kDatasetStream = 3;
constexpr int kSupersample = 4;

using Rgb = std::array<double, 3>;

// Foreground colours per palette; a background is picked from the opposite temperature, darker.
constexpr std::array<Rgb, 3> kWarm{{{0.95, 0.35, 0.20}, {0.98, 0.70, 0.15}, {0.85, 0.20, 0.45}}};
constexpr std::array<Rgb, 3> kCool{{{0.20, 0.55, 0.95}, {0.25, 0.85, 0.70}, {0.55, 0.35, 0.90}}};

struct Placement {
    double cx, cy, r, angle;
};

// Point (x, y) relative to the centre, rotated into the shape frame, in units of the radius.
bool inside(ToyShape shape, double x, double y) {
    switch (shape) {
        case ToyShape::Circle:
            return x * x + y * y <= 1.0;
        case ToyShape::Square:
            return std::abs(x) <= 0.8 && std::abs(y) <= 0.8;
        case ToyShape::Triangle: {
            // Equilateral, apex up, inscribed in the unit circle.
            const double k = std::sqrt(3.0);
            return y >= -0.5 && y <= 1.0 - k * std::abs(x);
        }
        case ToyShape::Cross:
            return (std::abs(x) <= 0.3 && std::abs(y) <= 1.0) || (std::abs(y) <= 0.3 && std::abs(x) <= 1.0);
        case ToyShape::Ring: {
            const double d = x * x + y * y;
            return d <= 1.0 && d >= 0.5 * 0.5;
        }
    }
    return false;
}

}  // namespace

void ToySpec::validate() const {
    if (side < 4) throw ConfigError("toy side must be at least 4");
    if (channels != 1 && channels != 3) throw ConfigError("toy channels must be 1 or 3");
    if (classes < 1 || classes > kToyShapes * kToyPalettes)
        throw ConfigError("toy classes must be in [1, " + std::to_string(kToyShapes * kToyPalettes) + "]");
    if (!(position_jitter >= 0.0 && position_jitter < 0.5)) throw ConfigError("position_jitter must be in [0, 0.5)");
    if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max < 0.5))
        throw ConfigError("need 0 < scale_min <= scale_max < 0.5");
}

ToyShape class_shape(int class_id) { return static_cast<ToyShape>(class_id % kToyShapes); }
ToyPalette class_palette(int class_id) { return static_cast<ToyPalette>(class_id / kToyShapes); }

std::string class_name(int class_id) {
    static const char* shapes[] = {"circle", "square", "triangle", "cross", "ring"};
    return std::string(class_palette(class_id) == ToyPalette::Warm ? "warm_" : "cool_") + shapes[class_id % kToyShapes];
}

int toy_label(const ToySpec& spec, std::int64_t index) { return static_cast<int>(index % spec.classes); }

Tensor<float> toy_image(const ToySpec& spec, std::int64_t index) {
    spec.validate();
    if (index < 0) throw UsageError("toy_image: negative index");
    const int label = toy_label(spec, index);
    std::mt19937_64 rng(mix_key(spec.seed, kDatasetStream, static_cast<std::uint64_t>(index)));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const double side = spec.side;
    Placement p{};
    p.cx = side * (0.5 + spec.position_jitter * (2.0 * u(rng) - 1.0));
    p.cy = side * (0.5 + spec.position_jitter * (2.0 * u(rng) - 1.0));
    p.r = side * (spec.scale_min + (spec.scale_max - spec.scale_min) * u(rng));
    p.angle = (u(rng) - 0.5) * std::numbers::pi / 6.0;

    const auto& fgs = class_palette(label) == ToyPalette::Warm ? kWarm : kCool;
    const auto& bgs = class_palette(label) == ToyPalette::Warm ? kCool : kWarm;
    Rgb fg = fgs[static_cast<std::size_t>(u(rng) * 3.0) % 3];
    Rgb bg = bgs[static_cast<std::size_t>(u(rng) * 3.0) % 3];
    const double fg_gain = 0.85 + 0.15 * u(rng), bg_gain = 0.15 + 0.15 * u(rng);
    for (auto& v : fg) v *= fg_gain;
    for (auto& v : bg) v *= bg_gain;

    const ToyShape shape = class_shape(label);
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    const auto S = spec.side, C = spec.channels;
    Tensor<float> img({C, S, S});
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
            int hits = 0;
            for (int si = 0; si < kSupersample; ++si)
                for (int sj = 0; sj < kSupersample; ++sj) {
                    const double y = i + (si + 0.5) / kSupersample - p.cy;
                    const double x = j + (sj + 0.5) / kSupersample - p.cx;
                    // Image y grows downwards; flip so the triangle points up.
                    const double rx = (ca * x + sa * y) / p.r, ry = (sa * x - ca * y) / p.r;
                    hits += inside(shape, rx, ry) ? 1 : 0;
                }
            const double cover = static_cast<double>(hits) / (kSupersample * kSupersample);
            Rgb rgb;
            for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c)] = cover * fg[c] + (1.0 - cover) * bg[c];
            if (C == 1) {
                const double grey = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
                img[static_cast<std::size_t>(i * S + j)] = static_cast<float>(std::clamp(2.0 * grey - 1.0, -1.0, 1.0));
            } else {
                for (int c = 0; c < 3; ++c)
                    img[static_cast<std::size_t>((c * S + i) * S + j)] =
                        static_cast<float>(std::clamp(2.0 * rgb[static_cast<std::size_t>(c)] - 1.0, -1.0, 1.0));
            }
        }
    return img;
}

ToyDataset toy_batch(const ToySpec& spec, const std::vector<std::int64_t>& indices) {
    spec.validate();
    ToyDataset out;
    const auto n = static_cast<std::int64_t>(indices.size());
    out.images = Tensor<float>({n, spec.channels, spec.side, spec.side});
    const std::size_t per = static_cast<std::size_t>(spec.channels) * spec.side * spec.side;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto img = toy_image(spec, indices[k]);
        std::copy(img.data().begin(), img.data().end(), out.images.data().begin() + static_cast<std::ptrdiff_t>(k * per));
        out.labels.push_back(toy_label(spec, indices[k]));
    }
    return out;
}

ToyDataset gen_dataset(const ToySpec& spec, std::int64_t count) {
    if (count < 1) throw UsageError("gen_dataset: count must be at least 1");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
    return toy_batch(spec, idx);
}

}  // namespace diffscope
