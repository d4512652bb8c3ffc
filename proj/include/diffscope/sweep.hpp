#pragma once

// Paired-seed experiments: every intervened run is compared with the unintervened run of
// the same seed. Both consume the same per-step noise, so intervened runs resume from the
// baseline state at the first intervened step instead of re-running the shared prefix.

#include "diffscope/metrics.hpp"
#include "diffscope/sampler.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace diffscope {

struct Intervention {
    SegmentKind kind = SegmentKind::TimeSkip;
    int magnitude = 0;

    Segment at(int t_start, int n) const { return {t_start, n, kind, magnitude}; }
    std::string str() const;
};

struct PairMetrics {
    std::uint64_t seed = 0;
    int class_id = 0;
    int x = 0;  // the swept quantity (t_start, n or r)
    double ssim = 0.0;
    double psnr = 0.0;
};

struct SweepPoint {
    int x = 0;
    Strategy strategy;
    Aggregate ssim;
    Aggregate psnr;  // infinite values propagate: mean is +inf if any pair is identical
    std::vector<PairMetrics> pairs;
};

struct SweepCurve {
    std::string x_name;
    std::string descriptor;
    std::vector<SweepPoint> points;

    std::vector<int> xs() const;
    std::vector<double> ssim_means() const;
    std::vector<double> psnr_means() const;
};

struct SweepOptions {
    int workers = 1;
    int batch = 16;
    SsimParams ssim;
    /// Intervened images are kept for the first `keep_images` samples of every point.
    int keep_images = 0;
};

/// Intervened final images, keyed by (point index, sample index).
using ImageStore = std::map<std::pair<std::size_t, std::size_t>, Tensor<float>>;

class SweepRunner {
public:
    SweepRunner(const Denoiser& model, const NoiseSchedule& schedule, std::vector<SampleRequest> samples,
                SweepOptions opts = {});

    const std::vector<SampleRequest>& samples() const noexcept { return samples_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    /// Unintervened final image of sample i (computed on first use).
    const Tensor<float>& baseline_image(std::size_t i);
    const ImageStore& images() const noexcept { return images_; }

    /// Runs each strategy against the baselines. Points keep the given order.
    SweepCurve evaluate(const std::string& x_name, const std::string& descriptor,
                        const std::vector<std::pair<int, Strategy>>& strategies);

private:
    void ensure_baselines();

    const Denoiser& model_;
    NoiseSchedule schedule_;
    std::vector<SampleRequest> samples_;
    SweepOptions opts_;
    bool have_baselines_ = false;
    std::vector<Tensor<float>> finals_;
    std::vector<std::vector<Tensor<float>>> states_;  // states_[i][t - 1] = baseline x_t of sample i
    ImageStore images_;
};

/// One segment of `n` steps per t_start.
SweepCurve sweep_tstart(SweepRunner& runner, Intervention iv, int n, const std::vector<int>& t_starts);

struct PhaseBoundaries {
    bool determined = false;
    std::string reason;  // why the curve was rejected
    int a = 0;           // composition / transition boundary
    int b = 0;           // transition / denoising boundary
    int T = 0;
    // Phase 1 = (a, T], phase 2 = (b, a], phase 3 = [1, b].
    bool three_nonempty() const { return determined && a < T && b < a && b >= 1; }
};

/// Centred moving average; edge windows shrink to the available points.
std::vector<double> moving_average(const std::vector<double>& v, int window = 5);

PhaseBoundaries find_phase_boundaries(const SweepCurve& curve, int T);
PhaseBoundaries find_phase_boundaries(const std::vector<int>& t, const std::vector<double>& ssim,
                                      const std::vector<double>& psnr, int T);

struct WindowResult {
    int n = 0;  // largest n such that every n' <= n keeps mean SSIM >= threshold; 0 if none
    SweepCurve curve;
};

/// BlockZero(nb) for n = 1..n_max steps from t_start.
WindowResult max_window(SweepRunner& runner, int nb, int t_start, double ssim_threshold, int n_max = 0);

struct RelaxResult {
    std::optional<int> r;  // smallest probed r that keeps mean SSIM >= threshold
    SweepCurve curve;
};

/// Cut n steps, relax r steps, cut n steps again, for each r.
RelaxResult cut_relax_cut(SweepRunner& runner, int nb, int t_start, int n, const std::vector<int>& r_values,
                          double ssim_threshold);

/// Compares a single strategy against the baselines (curve with one point, x = 0).
SweepCurve run_strategy(SweepRunner& runner, const Strategy& strategy);

}  // namespace diffscope
