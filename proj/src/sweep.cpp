#include "diffscope/sweep.hpp"

#include "diffscope/parallel.hpp"

#include <cmath>
#include <cstdlib>
#include <numeric>

namespace diffscope {

int default_workers() {
    if (const char* env = std::getenv("DIFFSCOPE_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw ConfigError(std::string("DIFFSCOPE_WORKERS must be a positive integer, got '") + env + "'");
        return static_cast<int>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::string Intervention::str() const {
    if (kind == SegmentKind::TimeSkip) return "time_skip";
    return to_string(kind) + "_" + std::to_string(magnitude);
}

std::vector<int> SweepCurve::xs() const {
    std::vector<int> v;
    for (const auto& p : points) v.push_back(p.x);
    return v;
}

std::vector<double> SweepCurve::ssim_means() const {
    std::vector<double> v;
    for (const auto& p : points) v.push_back(p.ssim.mean);
    return v;
}

std::vector<double> SweepCurve::psnr_means() const {
    std::vector<double> v;
    for (const auto& p : points) v.push_back(p.psnr.mean);
    return v;
}

namespace {

int first_step(const Strategy& s) {
    int t = s.early_stop_t.value_or(1);
    for (const auto& g : s.segments) t = std::max(t, g.t_start);
    return t;
}

// Aggregate that tolerates the +inf PSNR of identical pairs.
Aggregate aggregate_psnr(const std::vector<double>& v) {
    const auto n_inf = std::count_if(v.begin(), v.end(), [](double x) { return std::isinf(x); });
    if (n_inf == 0) return aggregate(v);
    Aggregate g;
    g.count = v.size();
    const double inf = std::numeric_limits<double>::infinity();
    g.mean = inf;
    g.max = inf;
    g.min = *std::min_element(v.begin(), v.end());
    const bool all_inf = static_cast<std::size_t>(n_inf) == v.size();
    g.stddev = all_inf ? 0.0 : inf;
    g.mad = all_inf ? 0.0 : inf;
    g.histogram[kHistogramBins - 1] = v.size();
    return g;
}

}  // namespace

SweepRunner::SweepRunner(const Denoiser& model, const NoiseSchedule& schedule, std::vector<SampleRequest> samples,
                         SweepOptions opts)
    : model_(model), schedule_(schedule), samples_(std::move(samples)), opts_(opts) {
    if (samples_.empty()) throw UsageError("sweep needs at least one sample");
    if (opts_.batch < 1) throw UsageError("sweep batch must be positive");
}

void SweepRunner::ensure_baselines() {
    if (have_baselines_) return;
    const std::size_t chunk = static_cast<std::size_t>(opts_.batch);
    const std::size_t n_chunks = (samples_.size() + chunk - 1) / chunk;
    finals_.assign(samples_.size(), {});
    states_.assign(samples_.size(), {});
    GenerateOptions g;
    g.snapshot_stride = 1;
    g.keep_eps = false;
    g.keep_x0 = false;
    g.batch = opts_.batch;
    const Strategy empty;
    parallel_for(n_chunks, opts_.workers, [&](std::size_t c) {
        const std::size_t lo = c * chunk, hi = std::min(samples_.size(), lo + chunk);
        auto runs = generate_batch(model_, schedule_, empty, std::span(samples_).subspan(lo, hi - lo), g);
        for (std::size_t i = lo; i < hi; ++i) {
            auto& tr = runs[i - lo];
            states_[i].resize(static_cast<std::size_t>(schedule_.T));
            for (auto& r : tr.steps) states_[i][static_cast<std::size_t>(r.t - 1)] = std::move(*r.x_t);
            finals_[i] = std::move(tr.image);
        }
    });
    have_baselines_ = true;
}

const Tensor<float>& SweepRunner::baseline_image(std::size_t i) {
    ensure_baselines();
    return finals_.at(i);
}

SweepCurve SweepRunner::evaluate(const std::string& x_name, const std::string& descriptor,
                                 const std::vector<std::pair<int, Strategy>>& strategies) {
    for (const auto& [x, s] : strategies) require_valid(s, schedule_.T, model_.levels);
    ensure_baselines();

    const std::size_t chunk = static_cast<std::size_t>(opts_.batch);
    const std::size_t n_chunks = (samples_.size() + chunk - 1) / chunk;
    const std::size_t n_points = strategies.size();

    std::vector<std::vector<PairMetrics>> pairs(n_points, std::vector<PairMetrics>(samples_.size()));
    std::vector<std::vector<Tensor<float>>> kept(n_points);
    const std::size_t keep = std::min(samples_.size(), static_cast<std::size_t>(std::max(opts_.keep_images, 0)));
    for (auto& k : kept) k.resize(keep);

    GenerateOptions g;
    g.snapshot_stride = 0;
    g.keep_eps = false;
    g.keep_x0 = false;
    g.batch = opts_.batch;

    parallel_for(n_points * n_chunks, opts_.workers, [&](std::size_t job) {
        const std::size_t p = job / n_chunks, c = job % n_chunks;
        const std::size_t lo = c * chunk, hi = std::min(samples_.size(), lo + chunk);
        const auto& [x, strategy] = strategies[p];
        StartState start;
        start.t = first_step(strategy);
        for (std::size_t i = lo; i < hi; ++i) start.x.push_back(states_[i][static_cast<std::size_t>(start.t - 1)]);
        auto runs = generate_batch(model_, schedule_, strategy, std::span(samples_).subspan(lo, hi - lo), g, &start);
        for (std::size_t i = lo; i < hi; ++i) {
            const auto a = to_unit_range(finals_[i]);
            const auto b = to_unit_range(runs[i - lo].image);
            pairs[p][i] = {samples_[i].seed, samples_[i].class_id, x, ssim(a, b, opts_.ssim), psnr(a, b, 1.0)};
            if (i < keep) kept[p][i] = std::move(runs[i - lo].image);
        }
    });

    SweepCurve curve;
    curve.x_name = x_name;
    curve.descriptor = descriptor;
    for (std::size_t p = 0; p < n_points; ++p) {
        SweepPoint pt;
        pt.x = strategies[p].first;
        pt.strategy = strategies[p].second;
        std::vector<double> s, q;
        for (const auto& m : pairs[p]) {
            s.push_back(m.ssim);
            q.push_back(m.psnr);
        }
        pt.ssim = aggregate(s);
        pt.psnr = aggregate_psnr(q);
        pt.pairs = std::move(pairs[p]);
        curve.points.push_back(std::move(pt));
        for (std::size_t i = 0; i < keep; ++i) images_[{p, i}] = std::move(kept[p][i]);
    }
    return curve;
}

SweepCurve sweep_tstart(SweepRunner& runner, Intervention iv, int n, const std::vector<int>& t_starts) {
    if (n < 1) throw UsageError("sweep_tstart: n must be positive");
    std::vector<std::pair<int, Strategy>> jobs;
    for (int t : t_starts) {
        Strategy s;
        s.name = iv.str() + "_n" + std::to_string(n) + "_t" + std::to_string(t);
        s.segments.push_back(iv.at(t, n));
        jobs.emplace_back(t, std::move(s));
    }
    return runner.evaluate("t_start", iv.str() + "_n" + std::to_string(n), jobs);
}

std::vector<double> moving_average(const std::vector<double>& v, int window) {
    if (window < 1 || window % 2 == 0) throw UsageError("moving_average needs an odd positive window");
    const auto half = static_cast<std::ptrdiff_t>(window / 2);
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    std::vector<double> out(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - half), hi = std::min(n - 1, i + half);
        double s = 0.0;
        for (auto j = lo; j <= hi; ++j) s += v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

PhaseBoundaries find_phase_boundaries(const SweepCurve& curve, int T) {
    return find_phase_boundaries(curve.xs(), curve.ssim_means(), curve.psnr_means(), T);
}

PhaseBoundaries find_phase_boundaries(const std::vector<int>& t, const std::vector<double>& ssim_in,
                                      const std::vector<double>& psnr_in, int T) {
    constexpr int kWindow = 5;
    constexpr std::size_t kPlateau = 5;
    constexpr double kMinContrast = 0.05;

    PhaseBoundaries res;
    res.T = T;
    if (t.size() != ssim_in.size() || t.size() != psnr_in.size()) throw UsageError("phase curve columns differ in length");
    if (t.size() < 3 * kPlateau) {
        res.reason = "curve too short";
        return res;
    }
    for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i] <= t[i - 1]) throw UsageError("phase curve must be sorted by increasing t_start");
    for (double v : ssim_in)
        if (!std::isfinite(v)) {
            res.reason = "non-finite SSIM";
            return res;
        }

    const auto s = moving_average(ssim_in, kWindow);
    const std::size_t n = s.size();
    const double plateau = std::accumulate(s.end() - kPlateau, s.end(), 0.0) / kPlateau;
    const double low_t = std::accumulate(s.begin(), s.begin() + kPlateau, 0.0) / kPlateau;
    const double hi = *std::max_element(s.begin(), s.end());
    if (hi - plateau < kMinContrast) {
        res.reason = "no SSIM rise above the large-t plateau";
        return res;
    }
    if (low_t <= plateau) {
        res.reason = "SSIM is not higher at small t than at large t";
        return res;
    }

    // Largest t still above the half-height line, then follow the local tangent back down to the plateau.
    const double half = plateau + 0.5 * (hi - plateau);
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (s[i] >= half) c = i;
    double a = t[c];
    if (c >= 2 && c + 2 < n) {
        const double dt = static_cast<double>(t[c + 2] - t[c - 2]);
        const double slope = (s[c - 2] - s[c + 2]) / dt;
        if (slope > 0.0) a = t[c] + (s[c] - plateau) / slope;
    }
    res.a = static_cast<int>(std::lround(std::clamp(a, static_cast<double>(t[c]), static_cast<double>(t.back()))));

    // Transition / denoising boundary: PSNR minimum below a. Identical pairs (inf) never qualify.
    std::vector<double> q(psnr_in);
    const double big = std::numeric_limits<double>::max();
    for (auto& v : q)
        if (!std::isfinite(v)) v = big;
    const auto qs = moving_average(q, kWindow);
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
        if (t[i] >= res.a || qs[i] >= big / kWindow) continue;
        if (!best || qs[i] < qs[*best]) best = i;
    }
    if (!best) {
        res.reason = "no finite PSNR below the first boundary";
        return res;
    }
    res.b = t[*best];
    res.determined = true;
    return res;
}

WindowResult max_window(SweepRunner& runner, int nb, int t_start, double ssim_threshold, int n_max) {
    if (!(ssim_threshold >= 0.0 && ssim_threshold <= 1.0)) throw UsageError("SSIM threshold must lie in [0, 1]");
    if (n_max == 0) n_max = t_start - 1;
    if (n_max < 1 || t_start - n_max < 1) throw UsageError("max_window needs 1 <= n_max <= t_start - 1");
    const Intervention iv{SegmentKind::BlockZero, nb};
    std::vector<std::pair<int, Strategy>> jobs;
    for (int n = 1; n <= n_max; ++n) {
        Strategy s;
        s.name = iv.str() + "_n" + std::to_string(n);
        s.segments.push_back(iv.at(t_start, n));
        jobs.emplace_back(n, std::move(s));
    }
    WindowResult r;
    r.curve = runner.evaluate("n", iv.str() + "_t" + std::to_string(t_start), jobs);
    for (const auto& p : r.curve.points) {
        if (p.ssim.mean < ssim_threshold) break;
        r.n = p.x;
    }
    return r;
}

RelaxResult cut_relax_cut(SweepRunner& runner, int nb, int t_start, int n, const std::vector<int>& r_values,
                          double ssim_threshold) {
    if (!(ssim_threshold >= 0.0 && ssim_threshold <= 1.0)) throw UsageError("SSIM threshold must lie in [0, 1]");
    if (r_values.empty()) throw UsageError("cut_relax_cut needs at least one r");
    const Intervention iv{SegmentKind::BlockZero, nb};
    std::vector<std::pair<int, Strategy>> jobs;
    for (int r : r_values) {
        if (r < 0) throw UsageError("relaxation length must be non-negative");
        Strategy s;
        s.name = iv.str() + "_n" + std::to_string(n) + "_r" + std::to_string(r);
        s.segments = {iv.at(t_start, n), iv.at(t_start - n - r, n)};
        jobs.emplace_back(r, std::move(s));
    }
    RelaxResult res;
    res.curve = runner.evaluate("r", iv.str() + "_n" + std::to_string(n) + "_t" + std::to_string(t_start), jobs);
    for (const auto& p : res.curve.points)
        if (p.ssim.mean >= ssim_threshold && (!res.r || p.x < *res.r)) res.r = p.x;
    return res;
}

SweepCurve run_strategy(SweepRunner& runner, const Strategy& strategy) {
    return runner.evaluate("strategy", strategy.name, {{0, strategy}});
}

}  // namespace diffscope
