#pragma once

#include "lvo/rng.hpp"
#include "lvo/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace lvo {

enum class ScheduleKind { Linear, ScaledLinear };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

/// DDPM noise schedule. Time-steps are 0-based: t = 0 is the least noisy.
struct SchedulerTable {
    int num_steps = 0;
    ScheduleKind kind = ScheduleKind::Linear;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::vector<double> betas;
    std::vector<double> alpha_bar;

    bool valid_timestep(int t) const { return t >= 0 && t < num_steps; }
    void check_timestep(int t) const;
};

/// Builds cumulative products alpha_bar[t] = prod_{i <= t} (1 - beta_i).
SchedulerTable build_scheduler(int num_steps, ScheduleKind kind = ScheduleKind::Linear, double beta_start = 1e-4,
                               double beta_end = 0.02);

/// Minimum peak separation matched to the schedule length (100 steps at T = 1000).
int scaled_min_separation(int num_steps);

/// sqrt(alpha_bar[t]) * z + sqrt(1 - alpha_bar[t]) * eps, with a fresh standard-normal eps.
LatentGrid inject_schedule_noise(const LatentGrid& z, int t, const SchedulerTable& s, Rng& rng);
/// Same with caller-provided eps (same element count as z).
LatentGrid inject_schedule_noise(const LatentGrid& z, int t, const SchedulerTable& s, std::span<const double> eps);

} // namespace lvo
