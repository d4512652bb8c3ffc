#include "diffscope/schedule.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace diffscope {

double SigmaMode::effective_eta() const {
    switch (kind) {
    case SigmaKind::Ancestral: return 1.0;
    case SigmaKind::Deterministic: return 0.0;
    case SigmaKind::Scaled: return eta;
    }
    return 0.0;
}

std::string SigmaMode::str() const {
    switch (kind) {
    case SigmaKind::Ancestral: return "ancestral";
    case SigmaKind::Deterministic: return "deterministic";
    case SigmaKind::Scaled: {
        std::ostringstream os;
        os.precision(17);
        os << "scaled:" << eta;
        return os.str();
    }
    }
    return "?";
}

double NoiseSchedule::beta(int t) const {
    check_step(t);
    return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_step(t);
    return alpha_bars[static_cast<std::size_t>(t - 1)];
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > T) throw UsageError("time step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

double NoiseSchedule::sigma(int t, int t_next) const {
    if (t_next < 0 || t_next >= t) throw UsageError("sigma needs 0 <= t_next < t");
    const double eta = sigma_mode.effective_eta();
    if (eta == 0.0) return 0.0;
    const double a = alpha_bar(t), an = alpha_bar(t_next);
    // Generalised posterior scale; for t_next = t - 1 this is (1 - a_{t-1}) / (1 - a_t) * beta_t.
    const double var = (1.0 - an) / (1.0 - a) * (1.0 - a / an);
    return eta * std::sqrt(std::max(var, 0.0));
}

NoiseSchedule make_schedule(ScheduleKind kind, int T, SigmaMode sigma) {
    if (T < 2) throw ConfigError("schedule needs T >= 2, got " + std::to_string(T));
    if (sigma.kind == SigmaKind::Scaled && !(sigma.eta >= 0.0)) throw ConfigError("eta must be non-negative");
    NoiseSchedule s;
    s.kind = kind;
    s.T = T;
    s.sigma_mode = sigma;
    s.betas.resize(static_cast<std::size_t>(T));
    if (kind == ScheduleKind::Linear) {
        const double scale = 1000.0 / T;
        const double lo = 1e-4 * scale, hi = 0.02 * scale;
        for (int i = 0; i < T; ++i) s.betas[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (T - 1);
    } else {
        constexpr double off = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / T + off) / (1.0 + off) * std::numbers::pi / 2.0);
            return c * c;
        };
        for (int t = 1; t <= T; ++t)
            s.betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    }
    s.alpha_bars.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double b = s.betas[static_cast<std::size_t>(i)];
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta outside (0, 1); T too small for this schedule");
        prod *= 1.0 - b;
        s.alpha_bars[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw ConfigError("unknown schedule kind '" + s + "'");
}

SigmaMode parse_sigma_mode(const std::string& s) {
    if (s == "ancestral") return SigmaMode::ancestral();
    if (s == "deterministic") return SigmaMode::deterministic();
    if (s.rfind("scaled:", 0) == 0) {
        std::size_t pos = 0;
        const double eta = std::stod(s.substr(7), &pos);
        if (pos != s.size() - 7) throw ConfigError("bad eta in '" + s + "'");
        return SigmaMode::scaled(eta);
    }
    throw ConfigError("unknown sigma mode '" + s + "'");
}

}  // namespace diffscope
