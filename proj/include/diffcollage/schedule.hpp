#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "diffcollage/core.hpp"

namespace dc {

enum class ScheduleKind {
    LinearVe,    ///< sigma(t) = t on [sigma_min, sigma_max]
    GeometricVe, ///< sigma(t) = sigma_min * (sigma_max / sigma_min)^t on [0, 1]
};

std::string_view to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view name);

/// Variance-exploding noise schedule: q(u_t | u_0) = N(u_0, sigma(t)^2 I).
class NoiseSchedule {
public:
    NoiseSchedule(ScheduleKind kind, double sigma_min, double sigma_max);

    static NoiseSchedule linear(double sigma_min, double sigma_max)
    {
        return {ScheduleKind::LinearVe, sigma_min, sigma_max};
    }
    static NoiseSchedule geometric(double sigma_min, double sigma_max)
    {
        return {ScheduleKind::GeometricVe, sigma_min, sigma_max};
    }

    ScheduleKind kind() const noexcept { return kind_; }
    double sigma_min() const noexcept { return sigma_min_; }
    double sigma_max() const noexcept { return sigma_max_; }

    double t_min() const noexcept;
    double t_max() const noexcept;

    /// Throws DomainError when t is outside [t_min, t_max].
    double sigma(double t) const;
    double sigma_dot(double t) const;

    /// Inverse of sigma(). Throws DomainError outside [sigma_min, sigma_max].
    double time_of_sigma(double sigma) const;

    bool operator==(const NoiseSchedule&) const = default;

private:
    void check_domain(double t) const;

    ScheduleKind kind_;
    double sigma_min_;
    double sigma_max_;
};

/// Strictly decreasing times t_K > ... > t_0.
struct TimeGrid {
    std::vector<double> times;

    std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
};

/// Karras-style grid: sigma_k = (smax^(1/rho) + k/K (smin^(1/rho) - smax^(1/rho)))^rho,
/// mapped back to time through the schedule inverse. Endpoints are exact.
TimeGrid karras_grid(const NoiseSchedule& schedule, int steps, double rho = 7.0);

} // namespace dc
