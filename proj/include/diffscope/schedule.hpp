#pragma once

#include "diffscope/tensor.hpp"

#include <string>
#include <vector>

namespace diffscope {

/// Raised when a sampling step would need a negative noise variance.
class ScheduleError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

enum class ScheduleKind { Linear, Cosine };
enum class SigmaKind { Ancestral, Deterministic, Scaled };

struct SigmaMode {
    SigmaKind kind = SigmaKind::Ancestral;
    double eta = 1.0;  // only read for Scaled

    static SigmaMode ancestral() { return {SigmaKind::Ancestral, 1.0}; }
    static SigmaMode deterministic() { return {SigmaKind::Deterministic, 0.0}; }
    static SigmaMode scaled(double eta) { return {SigmaKind::Scaled, eta}; }
    double effective_eta() const;
    std::string str() const;

    friend bool operator==(const SigmaMode&, const SigmaMode&) = default;
};

/// Step indices run 1..T; index 0 is the clean image with alpha_bar(0) = 1.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::Linear;
    int T = 0;
    std::vector<double> betas;       // betas[t-1] = beta_t
    std::vector<double> alpha_bars;  // alpha_bars[t-1] = prod_{s<=t} (1 - beta_s)
    SigmaMode sigma_mode;
    /// Clamp x0 estimates to the image range [-1, 1].
    bool clip_x0 = true;

    double beta(int t) const;
    double alpha_bar(int t) const;
    /// Noise scale for a (possibly multi-step) transition t -> t_next.
    /// For t_next = t - 1 under ancestral mode this is the DDPM posterior variance.
    double sigma(int t, int t_next) const;
    void check_step(int t) const;

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

NoiseSchedule make_schedule(ScheduleKind kind, int T, SigmaMode sigma = SigmaMode::ancestral());

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& s);
SigmaMode parse_sigma_mode(const std::string& s);

}  // namespace diffscope
