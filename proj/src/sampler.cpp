#include "diffcollage/sampler.hpp"

#include <cmath>

#include "diffcollage/parallel.hpp"
#include "diffcollage/rng.hpp"

namespace dc {

namespace {

constexpr std::uint64_t kPriorStream = 0x707269;  // "pri"
constexpr std::uint64_t kNoiseStream = 0x6e6f69;  // "noi"

void check_config(const NoiseSchedule& schedule, const SamplerConfig& config)
{
    const auto& times = config.grid.times;
    if (times.size() < 2) {
        throw InvalidArgument("sampler: time grid needs at least two points");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] < times[k - 1])) {
            throw InvalidArgument("sampler: time grid must be strictly decreasing");
        }
    }
    if (times.front() > schedule.t_max() || times.back() < schedule.t_min()) {
        throw InvalidArgument("sampler: time grid leaves the schedule domain");
    }
    if (config.eta < 0.0) {
        throw InvalidArgument("sampler: eta must be >= 0");
    }
    if (config.method != SamplerMethod::EulerMaruyama && config.eta != 0.0) {
        throw InvalidArgument("sampler: eta must be 0 for " + std::string(to_string(config.method)));
    }
}

void check_state(const Vector& u, std::size_t step)
{
    if (!u.allFinite()) {
        throw NumericError("sampler: non-finite state at step " + std::to_string(step));
    }
}

} // namespace

std::string_view to_string(SamplerMethod method)
{
    switch (method) {
    case SamplerMethod::EulerOde:
        return "euler-ode";
    case SamplerMethod::EulerMaruyama:
        return "euler-maruyama";
    case SamplerMethod::Heun:
        return "heun";
    }
    return "unknown";
}

SamplerMethod sampler_method_from_string(std::string_view name)
{
    if (name == "euler-ode" || name == "euler") {
        return SamplerMethod::EulerOde;
    }
    if (name == "euler-maruyama") {
        return SamplerMethod::EulerMaruyama;
    }
    if (name == "heun") {
        return SamplerMethod::Heun;
    }
    throw InvalidArgument("unknown sampler method '" + std::string(name) + "'");
}

Vector sample_prior(std::size_t dim, const NoiseSchedule& schedule, double t_start, std::uint64_t seed)
{
    if (dim == 0) {
        throw InvalidArgument("sample_prior: dim must be >= 1");
    }
    const double sigma = schedule.sigma(t_start);
    const CounterRng rng(derive_seed(seed, {kPriorStream}));
    Vector u(static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < dim; ++k) {
        u(static_cast<Eigen::Index>(k)) = sigma * rng.normal(k);
    }
    return u;
}

Vector integrate(const JointScore& score, Vector u, const NoiseSchedule& schedule, const SamplerConfig& config,
                 SamplerStats* stats)
{
    check_config(schedule, config);
    if (static_cast<std::size_t>(u.size()) != score.dim()) {
        throw InvalidArgument("sampler: state length does not match the score dimension");
    }
    SamplerStats local;
    const auto& times = config.grid.times;
    const std::size_t steps = times.size() - 1;

    // times[k] runs from t_K (k = 0) down to t_0 (k = steps); step k moves times[k] -> times[k + 1].
    for (std::size_t k = 0; k < steps; ++k) {
        const double t_cur = times[k];
        const double t_next = times[k + 1];
        const double dt = t_cur - t_next;  // positive backward step
        const double sigma = schedule.sigma(t_cur);
        const double rate = schedule.sigma_dot(t_cur) * sigma;

        const Vector s = score.score(u, t_cur);
        ++local.step_calls;

        switch (config.method) {
        case SamplerMethod::EulerOde:
            u += rate * dt * s;
            break;
        case SamplerMethod::EulerMaruyama: {
            const double eta = config.eta;
            u += (1.0 + eta * eta) * rate * dt * s;
            if (eta > 0.0) {
                const CounterRng rng(derive_seed(config.seed, {kNoiseStream, k}));
                const double scale = eta * std::sqrt(2.0 * rate * dt);
                for (Eigen::Index c = 0; c < u.size(); ++c) {
                    u(c) += scale * rng.normal(static_cast<std::uint64_t>(c));
                }
            }
            break;
        }
        case SamplerMethod::Heun: {
            Vector predicted = u + rate * dt * s;
            if (k + 1 < steps) {
                check_state(predicted, k);
                const double rate_next = schedule.sigma_dot(t_next) * schedule.sigma(t_next);
                const Vector s_next = score.score(predicted, t_next);
                ++local.step_calls;
                u += 0.5 * dt * (rate * s + rate_next * s_next);
            } else {
                u = std::move(predicted);
            }
            break;
        }
        }
        check_state(u, k);
    }

    if (config.final_denoise) {
        const double t0 = times.back();
        const double sigma = schedule.sigma(t0);
        u += sigma * sigma * score.score(u, t0);
        ++local.denoise_calls;
        check_state(u, steps);
    }
    if (stats != nullptr) {
        *stats += local;
    }
    return u;
}

Vector sample(const JointScore& score, const NoiseSchedule& schedule, const SamplerConfig& config, SamplerStats* stats)
{
    check_config(schedule, config);
    Vector u = sample_prior(score.dim(), schedule, config.grid.times.front(), config.seed);
    return integrate(score, std::move(u), schedule, config, stats);
}

std::uint64_t batch_member_seed(std::uint64_t seed, std::size_t index)
{
    return derive_seed(seed, {0x62617463, index});
}

std::vector<Vector> sample_batch(const JointScore& score, const NoiseSchedule& schedule, const SamplerConfig& config,
                                 std::size_t count, WorkerPool* pool, SamplerStats* stats)
{
    check_config(schedule, config);
    std::vector<Vector> out(count);
    std::vector<SamplerStats> member_stats(count);
    for_each_index(pool, count, [&](std::size_t i) {
        SamplerConfig member = config;
        member.seed = batch_member_seed(config.seed, i);
        out[i] = sample(score, schedule, member, &member_stats[i]);
    });
    if (stats != nullptr) {
        for (const auto& s : member_stats) {
            *stats += s;
        }
    }
    return out;
}

} // namespace dc
