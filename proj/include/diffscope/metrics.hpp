#pragma once

#include "diffscope/tensor.hpp"

#include <array>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace diffscope {

/// Maps the model's [-1, 1] image range onto [0, 1].
Tensor<float> to_unit_range(const Tensor<float>& x);

/// 10 log10(max^2 / mse); +infinity when the images are identical.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double max_val = 1.0);

/// Renders +infinity as "inf", finite values with full precision.
std::string format_metric(double v);

enum class SsimWindow { Gaussian11, Uniform7 };

struct SsimParams {
    SsimWindow window = SsimWindow::Gaussian11;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
    /// Average per-channel SSIM instead of comparing the channel-mean grey image.
    bool per_channel = false;
};

/// Normalised 2-D window weights, row-major size x size.
std::vector<double> ssim_window(SsimWindow w);
int ssim_window_size(SsimWindow w);

/// Mean SSIM over all valid window positions. Accepts [C,H,W] or [1,C,H,W].
double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimParams& params = {});

inline constexpr int kHistogramBins = 20;

struct Aggregate {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population
    double mad = 0.0;  // mean absolute deviation about the mean
    double min = 0.0;
    double max = 0.0;
    /// Fixed-width bins over [0, 1]; values outside are clamped into the edge bins.
    std::array<std::size_t, kHistogramBins> histogram{};
};

Aggregate aggregate(std::span<const double> values);

std::size_t count_at_least(std::span<const double> values, double threshold);

}  // namespace diffscope
