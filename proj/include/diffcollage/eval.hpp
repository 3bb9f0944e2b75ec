#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffcollage/core.hpp"

namespace dc {

struct GaussianFit {
    Vector mean;
    Matrix covariance;
    std::size_t count = 0;
};

struct MetricReport {
    std::string name;
    double value = 0.0;
    nlohmann::ordered_json details = nlohmann::ordered_json::object();
};

/// Sample mean and unbiased (n - 1) covariance, symmetrized.
GaussianFit fit_gaussian(std::span<const Vector> samples);

struct SymmetricEigen {
    Vector values;
    Matrix vectors;  ///< columns are eigenvectors
    int sweeps = 0;
};

/// Cyclic Jacobi rotations. Stops when the off-diagonal Frobenius norm falls
/// below tol * ||A||_F; throws NumericError after max_sweeps.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, int max_sweeps = 100, double tol = 1e-12);

/// Square root of a symmetric PSD matrix (negative eigenvalues clamped to 0).
Matrix sqrt_psd(const Matrix& symmetric);

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2); 0 for identical fits.
double frechet_gaussian(const GaussianFit& a, const GaussianFit& b);

/// Produces `count` short reference samples from `seed`.
using ReferenceSampler = std::function<std::vector<Vector>(std::size_t count, std::uint64_t seed)>;

/// One uniformly placed contiguous crop of length crop_len per long sample,
/// compared against reference samples by Frechet distance of Gaussian fits.
MetricReport fd_plus(std::span<const Vector> long_samples, std::span<const Vector> reference, std::size_t crop_len,
                     std::uint64_t seed);
MetricReport fd_plus(std::span<const Vector> long_samples, const ReferenceSampler& reference_sampler,
                     std::size_t crop_len, std::size_t count, std::uint64_t seed);

/// Crops used by fd_plus (exposed for tests and the CLI).
std::vector<Vector> random_crops(std::span<const Vector> long_samples, std::size_t crop_len, std::uint64_t seed);

/// Mean squared first difference across `boundaries` (u[b] - u[b-1]) divided by
/// the same quantity at all other positions. 1.0 means no visible seam.
MetricReport seam_statistic(std::span<const Vector> samples, const std::vector<std::size_t>& boundaries);

struct DriftProfile {
    std::vector<MetricReport> blocks;  ///< one "block_<i>" report per block; value = mean variance
    std::vector<double> means;
    std::vector<double> variances;
    double spread = 0.0;        ///< (max - min) / mean of the per-block variances
    double kendall_tau = 0.0;   ///< trend of variance against block index
    MetricReport summary;
};

/// blocks[b] holds the samples of block b (one vector per sample).
DriftProfile drift_profile(const std::vector<std::vector<Vector>>& blocks);

/// Kendall rank correlation between index order and values (tau-a).
double kendall_tau(std::span<const double> values);

/// CSV "name,value,details" with details as compact JSON.
std::string reports_to_csv(const std::vector<MetricReport>& reports);
nlohmann::ordered_json reports_to_json(const std::vector<MetricReport>& reports);

} // namespace dc
