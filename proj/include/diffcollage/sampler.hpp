#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "diffcollage/collage.hpp"
#include "diffcollage/schedule.hpp"

namespace dc {

class WorkerPool;

enum class SamplerMethod {
    EulerOde,       ///< probability-flow Euler
    EulerMaruyama,  ///< reverse SDE with noise level eta
    Heun,           ///< Euler predictor + trapezoidal corrector
};

std::string_view to_string(SamplerMethod method);
SamplerMethod sampler_method_from_string(std::string_view name);

struct SamplerConfig {
    TimeGrid grid;
    double eta = 0.0;
    SamplerMethod method = SamplerMethod::EulerOde;
    std::uint64_t seed = 0;
    /// Jump to the posterior mean u + sigma^2 s(u) at the last grid point.
    bool final_denoise = true;
};

struct SamplerStats {
    std::size_t step_calls = 0;     ///< score calls made by the integrator (K, or 2K-1 for Heun)
    std::size_t denoise_calls = 0;  ///< score calls made by the final denoising jump

    std::size_t total() const noexcept { return step_calls + denoise_calls; }
    SamplerStats& operator+=(const SamplerStats& o) noexcept
    {
        step_calls += o.step_calls;
        denoise_calls += o.denoise_calls;
        return *this;
    }
};

/// i.i.d. N(0, sigma(t_start)^2) per coordinate; coordinate k uses counter k of a
/// generator keyed by the seed.
Vector sample_prior(std::size_t dim, const NoiseSchedule& schedule, double t_start, std::uint64_t seed);

/// Integrates from `start` (a state at grid.times[0]) down the grid.
Vector integrate(const JointScore& score, Vector start, const NoiseSchedule& schedule, const SamplerConfig& config,
                 SamplerStats* stats = nullptr);

/// Prior draw followed by integrate().
Vector sample(const JointScore& score, const NoiseSchedule& schedule, const SamplerConfig& config,
              SamplerStats* stats = nullptr);

/// Sample i uses seed derive_seed(config.seed, {i}). Members may run concurrently;
/// output does not depend on the worker count.
std::vector<Vector> sample_batch(const JointScore& score, const NoiseSchedule& schedule, const SamplerConfig& config,
                                 std::size_t count, WorkerPool* pool = nullptr, SamplerStats* stats = nullptr);

/// Seed used by sample_batch for member `index`.
std::uint64_t batch_member_seed(std::uint64_t seed, std::size_t index);

} // namespace dc
