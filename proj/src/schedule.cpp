#include "diffcollage/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diffcollage/core.hpp"

namespace dc {

std::string_view to_string(ScheduleKind kind)
{
    switch (kind) {
    case ScheduleKind::LinearVe:
        return "linear-ve";
    case ScheduleKind::GeometricVe:
        return "geometric-ve";
    }
    return "unknown";
}

ScheduleKind schedule_kind_from_string(std::string_view name)
{
    if (name == "linear-ve") {
        return ScheduleKind::LinearVe;
    }
    if (name == "geometric-ve") {
        return ScheduleKind::GeometricVe;
    }
    throw InvalidArgument("unknown schedule kind '" + std::string(name) + "' (expected linear-ve or geometric-ve)");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, double sigma_min, double sigma_max)
    : kind_(kind), sigma_min_(sigma_min), sigma_max_(sigma_max)
{
    if (!(std::isfinite(sigma_min) && std::isfinite(sigma_max) && sigma_min > 0.0 && sigma_min < sigma_max)) {
        std::ostringstream msg;
        msg << "noise schedule needs 0 < sigma_min < sigma_max < inf, got sigma_min=" << sigma_min
            << " sigma_max=" << sigma_max;
        throw InvalidArgument(msg.str());
    }
}

double NoiseSchedule::t_min() const noexcept
{
    return kind_ == ScheduleKind::LinearVe ? sigma_min_ : 0.0;
}

double NoiseSchedule::t_max() const noexcept
{
    return kind_ == ScheduleKind::LinearVe ? sigma_max_ : 1.0;
}

void NoiseSchedule::check_domain(double t) const
{
    if (!(t >= t_min() && t <= t_max())) {
        std::ostringstream msg;
        msg << "t=" << t << " outside " << to_string(kind_) << " domain [" << t_min() << ", " << t_max() << "]";
        throw DomainError(msg.str());
    }
}

double NoiseSchedule::sigma(double t) const
{
    check_domain(t);
    if (kind_ == ScheduleKind::LinearVe) {
        return t;
    }
    return sigma_min_ * std::pow(sigma_max_ / sigma_min_, t);
}

double NoiseSchedule::sigma_dot(double t) const
{
    check_domain(t);
    if (kind_ == ScheduleKind::LinearVe) {
        return 1.0;
    }
    return sigma(t) * std::log(sigma_max_ / sigma_min_);
}

double NoiseSchedule::time_of_sigma(double s) const
{
    if (!(s >= sigma_min_ && s <= sigma_max_)) {
        std::ostringstream msg;
        msg << "sigma=" << s << " outside [" << sigma_min_ << ", " << sigma_max_ << "]";
        throw DomainError(msg.str());
    }
    if (kind_ == ScheduleKind::LinearVe) {
        return s;
    }
    return std::log(s / sigma_min_) / std::log(sigma_max_ / sigma_min_);
}

TimeGrid karras_grid(const NoiseSchedule& schedule, int steps, double rho)
{
    if (steps < 1) {
        throw InvalidArgument("karras_grid needs at least one step, got " + std::to_string(steps));
    }
    if (!(rho > 0.0)) {
        throw InvalidArgument("karras_grid needs rho > 0");
    }
    const double lo = std::pow(schedule.sigma_min(), 1.0 / rho);
    const double hi = std::pow(schedule.sigma_max(), 1.0 / rho);
    TimeGrid grid;
    grid.times.resize(static_cast<std::size_t>(steps) + 1);
    grid.times.front() = schedule.t_max();
    grid.times.back() = schedule.t_min();
    for (int k = 1; k < steps; ++k) {
        const double frac = static_cast<double>(k) / steps;
        double s = std::pow(hi + frac * (lo - hi), rho);
        s = std::clamp(s, schedule.sigma_min(), schedule.sigma_max());
        grid.times[static_cast<std::size_t>(k)] = schedule.time_of_sigma(s);
    }
    for (std::size_t k = 1; k < grid.times.size(); ++k) {
        if (!(grid.times[k] < grid.times[k - 1])) {
            throw NumericError("karras_grid produced a non-decreasing step at k=" + std::to_string(k)
                               + "; reduce the step count or widen the sigma range");
        }
    }
    return grid;
}

} // namespace dc
