#include "idcloak/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace idcloak {

namespace {
constexpr double kMaxBeta = 0.999;
constexpr double kCosineOffset = 0.008;

double cosine_curve(double t, double T) {
    const double phase = (t / T + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0;
    const double c = std::cos(phase);
    return c * c;
}
} // namespace

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::linear ? "linear" : "cosine";
}

void NoiseSchedule::check_timestep(int t, int lo) const {
    if (t < lo || t > T) {
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                                    ", " + std::to_string(T) + "]");
    }
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T <= 0) throw std::invalid_argument("schedule needs T >= 1, got " + std::to_string(T));
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;

    if (kind == ScheduleKind::linear) {
        const double lo = 0.85 / T;
        const double hi = 12.0 / T;
        for (int t = 1; t <= T; ++t) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
            const double beta = std::min(lo + (hi - lo) * frac, kMaxBeta);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
    } else {
        const double f0 = cosine_curve(0.0, T);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double cur = cosine_curve(t, T) / f0;
            const double beta = std::min(1.0 - cur / prev, kMaxBeta);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
            prev = cur;
        }
    }
    return s;
}

} // namespace idcloak
