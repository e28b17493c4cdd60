#pragma once

#include <string>
#include <vector>

namespace idcloak {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

// Cumulative signal coefficients: alpha_bar[0] = 1, strictly decreasing to
// alpha_bar[T] > 0.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::linear;
    std::vector<double> alpha_bar;

    double operator[](int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
    void check_timestep(int t, int lo = 0) const;
};

// Linear: betas evenly spaced on [0.85/T, 12/T] (the latent-diffusion
// 0.00085..0.012 range rescaled to T steps), capped at 0.999. Cosine: the squared-cosine curve
// with offset 0.008, betas capped at 0.999.
NoiseSchedule make_schedule(int T, ScheduleKind kind);

} // namespace idcloak
