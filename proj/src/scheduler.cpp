#include "lvo/scheduler.hpp"

#include <cmath>
#include <stdexcept>

namespace lvo {

std::string to_string(ScheduleKind kind) {
    switch (kind) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::ScaledLinear: return "scaled_linear";
    }
    return "linear";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "scaled_linear") return ScheduleKind::ScaledLinear;
    throw std::invalid_argument("unknown schedule kind '" + s + "' (expected linear or scaled_linear)");
}

void SchedulerTable::check_timestep(int t) const {
    if (!valid_timestep(t)) {
        throw std::out_of_range("time-step " + std::to_string(t) + " outside [0, " + std::to_string(num_steps) + ")");
    }
}

SchedulerTable build_scheduler(int num_steps, ScheduleKind kind, double beta_start, double beta_end) {
    if (num_steps < 1) throw std::invalid_argument("scheduler needs at least one time-step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_end < beta_start)
        throw std::invalid_argument("scheduler betas must satisfy 0 < beta_start <= beta_end < 1");
    SchedulerTable s;
    s.num_steps = num_steps;
    s.kind = kind;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(num_steps);
    s.alpha_bar.resize(num_steps);
    for (int i = 0; i < num_steps; ++i) {
        const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
        if (kind == ScheduleKind::Linear) {
            s.betas[i] = beta_start + frac * (beta_end - beta_start);
        } else {
            const double r = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
            s.betas[i] = r * r;
        }
    }
    double prod = 1.0;
    for (int i = 0; i < num_steps; ++i) {
        prod *= 1.0 - s.betas[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

int scaled_min_separation(int num_steps) {
    const long v = std::lround(100.0 * num_steps / 1000.0);
    return static_cast<int>(v < 1 ? 1 : v);
}

LatentGrid inject_schedule_noise(const LatentGrid& z, int t, const SchedulerTable& s, std::span<const double> eps) {
    s.check_timestep(t);
    if (eps.size() != z.size()) throw std::invalid_argument("noise sample size does not match latent");
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    LatentGrid out = z;
    Tensor& v = out.tensor();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * v[i] + b * eps[i];
    return out;
}

LatentGrid inject_schedule_noise(const LatentGrid& z, int t, const SchedulerTable& s, Rng& rng) {
    s.check_timestep(t);
    std::vector<double> eps(z.size());
    for (double& e : eps) e = rng.normal();
    return inject_schedule_noise(z, t, s, eps);
}

} // namespace lvo
