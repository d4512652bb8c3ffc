#include "diffscope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace diffscope {

namespace {

struct Plane {
    std::int64_t h = 0, w = 0;
    std::vector<double> v;
};

// Accepts [C,H,W] or [1,C,H,W]; returns C,H,W.
std::array<std::int64_t, 3> image_dims(const Tensor<float>& x) {
    const auto& s = x.shape();
    if (s.size() == 3) return {s[0], s[1], s[2]};
    if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
    throw UsageError("expected a [C,H,W] or [1,C,H,W] image, got " + shape_str(s));
}

Plane channel_plane(const Tensor<float>& x, std::int64_t c) {
    auto [C, H, W] = image_dims(x);
    (void)C;
    Plane p{H, W, std::vector<double>(static_cast<std::size_t>(H * W))};
    const float* src = x.ptr() + c * H * W;
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = src[i];
    return p;
}

Plane grey_plane(const Tensor<float>& x) {
    auto [C, H, W] = image_dims(x);
    Plane p{H, W, std::vector<double>(static_cast<std::size_t>(H * W), 0.0)};
    for (std::int64_t c = 0; c < C; ++c) {
        const float* src = x.ptr() + c * H * W;
        for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] += src[i];
    }
    for (auto& v : p.v) v /= static_cast<double>(C);
    return p;
}

std::vector<double> window_1d(SsimWindow w) {
    if (w == SsimWindow::Uniform7) return std::vector<double>(7, 1.0 / 7.0);
    std::vector<double> g(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Valid-mode separable filtering.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k) {
    const auto n = static_cast<std::int64_t>(k.size());
    const std::int64_t ow = w - n + 1, oh = h - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(h * ow));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y * w + x + i)];
            rows[static_cast<std::size_t>(y * ow + x)] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>((y + i) * ow + x)];
            out[static_cast<std::size_t>(y * ow + x)] = s;
        }
    return out;
}

double ssim_plane(const Plane& a, const Plane& b, const SsimParams& p) {
    const auto k = window_1d(p.window);
    const auto n = static_cast<std::int64_t>(k.size());
    if (a.h < n || a.w < n) throw UsageError("image smaller than the SSIM window");
    const double c1 = std::pow(p.k1 * p.dynamic_range, 2), c2 = std::pow(p.k2 * p.dynamic_range, 2);

    std::vector<double> aa(a.v.size()), bb(a.v.size()), ab(a.v.size());
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        aa[i] = a.v[i] * a.v[i];
        bb[i] = b.v[i] * b.v[i];
        ab[i] = a.v[i] * b.v[i];
    }
    const auto mu_a = filter_valid(a.v, a.h, a.w, k), mu_b = filter_valid(b.v, a.h, a.w, k);
    const auto e_aa = filter_valid(aa, a.h, a.w, k), e_bb = filter_valid(bb, a.h, a.w, k),
               e_ab = filter_valid(ab, a.h, a.w, k);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
        total += ((2.0 * (ma * mb) + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

}  // namespace

Tensor<float> to_unit_range(const Tensor<float>& x) {
    Tensor<float> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = (x[i] + 1.0f) * 0.5f;
    return out;
}

double psnr(const Tensor<float>& a, const Tensor<float>& b, double max_val) {
    if (a.shape() != b.shape()) throw UsageError("psnr: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.numel() == 0) throw UsageError("psnr: empty image");
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<double> ssim_window(SsimWindow w) {
    const auto k = window_1d(w);
    std::vector<double> out(k.size() * k.size());
    for (std::size_t i = 0; i < k.size(); ++i)
        for (std::size_t j = 0; j < k.size(); ++j) out[i * k.size() + j] = k[i] * k[j];
    return out;
}

int ssim_window_size(SsimWindow w) { return w == SsimWindow::Uniform7 ? 7 : 11; }

double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimParams& params) {
    if (a.shape() != b.shape()) throw UsageError("ssim: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (!params.per_channel) return ssim_plane(grey_plane(a), grey_plane(b), params);
    const auto C = image_dims(a)[0];
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) sum += ssim_plane(channel_plane(a, c), channel_plane(b, c), params);
    return sum / static_cast<double>(C);
}

Aggregate aggregate(std::span<const double> values) {
    if (values.empty()) throw UsageError("aggregate: no values");
    Aggregate g;
    g.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    g.mean = sum / static_cast<double>(values.size());
    double sq = 0.0, ab = 0.0;
    for (double v : values) {
        sq += (v - g.mean) * (v - g.mean);
        ab += std::abs(v - g.mean);
    }
    g.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    g.mad = ab / static_cast<double>(values.size());
    g.min = *std::min_element(values.begin(), values.end());
    g.max = *std::max_element(values.begin(), values.end());
    for (double v : values) {
        const int bin = std::clamp(static_cast<int>(std::floor(v * kHistogramBins)), 0, kHistogramBins - 1);
        ++g.histogram[static_cast<std::size_t>(bin)];
    }
    return g;
}

std::size_t count_at_least(std::span<const double> values, double threshold) {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [&](double v) { return v >= threshold; }));
}

}  // namespace diffscope
