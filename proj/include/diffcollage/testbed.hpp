#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "diffcollage/collage.hpp"
#include "diffcollage/graph.hpp"
#include "diffcollage/scoremodel.hpp"

namespace dc {

/// Stationary discretized OU process: cov[i][j] = scale^2 exp(-|i - j| / length).
Matrix ou_covariance(std::size_t n, double length, double scale = 1.0);

/// Exponential kernel on explicit 1D positions.
Matrix kernel_covariance_1d(const std::vector<double>& positions, double length, double scale = 1.0);

/// Separable exponential kernel on a row-major height x width image.
Matrix grid_covariance(std::size_t height, std::size_t width, double length, double scale = 1.0);

/// Exponential kernel on a ring of n points (circular distance).
Matrix ring_covariance(std::size_t n, double length, double scale = 1.0);

/// count draws of N(mean, cov). Draw i uses generator key derive_seed(seed, {i}),
/// coordinate k counter k, so draws are independent of evaluation order.
std::vector<Vector> sample_gaussian(const Vector& mean, const Matrix& cov, std::size_t count, std::uint64_t seed);

/// Random SPD matrix A A^T / dim + min_eig I.
Matrix random_spd(std::size_t dim, std::uint64_t seed, double min_eig = 0.5);

/// Joint Gaussian whose precision is a sum of random SPD blocks, one per factor,
/// plus `ridge` on the diagonal. Markov with respect to the graph's factors.
struct JointGaussian {
    Vector mean;
    Matrix covariance;
    Matrix precision;
};
JointGaussian random_factor_gaussian(const FactorGraph& graph, std::uint64_t seed, double coupling = 1.0,
                                     double ridge = 1.0);

/// Wraps a score model with an artificial per-call cost.
class BusyScoreModel final : public ScoreModel {
public:
    enum class Mode { Spin, Sleep };

    BusyScoreModel(ScoreModelPtr inner, std::chrono::microseconds cost, Mode mode = Mode::Spin);

    const NoiseSchedule& schedule() const override { return inner_->schedule(); }
    bool accepts_width(std::size_t width) const override { return inner_->accepts_width(width); }
    Vector score(const Vector& u, double t, const Vector& condition = {}) const override;

private:
    ScoreModelPtr inner_;
    std::chrono::microseconds cost_;
    Mode mode_;
};

} // namespace dc
