#include "diffcollage/testbed.hpp"

#include <cmath>
#include <thread>

#include <time.h>

#include "diffcollage/rng.hpp"

namespace dc {

namespace {

double thread_cpu_seconds()
{
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

} // namespace

Matrix ou_covariance(std::size_t n, double length, double scale)
{
    std::vector<double> positions(n);
    for (std::size_t i = 0; i < n; ++i) {
        positions[i] = static_cast<double>(i);
    }
    return kernel_covariance_1d(positions, length, scale);
}

Matrix kernel_covariance_1d(const std::vector<double>& positions, double length, double scale)
{
    if (!(length > 0.0) || !(scale > 0.0)) {
        throw InvalidArgument("kernel covariance: length and scale must be > 0");
    }
    const auto n = static_cast<Eigen::Index>(positions.size());
    Matrix cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            cov(i, j) = scale * scale * std::exp(-std::abs(positions[i] - positions[j]) / length);
        }
    }
    return cov;
}

Matrix grid_covariance(std::size_t height, std::size_t width, double length, double scale)
{
    const Matrix rows = ou_covariance(height, length);
    const Matrix cols = ou_covariance(width, length);
    const auto n = static_cast<Eigen::Index>(height * width);
    const auto w = static_cast<Eigen::Index>(width);
    Matrix cov(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            cov(a, b) = scale * scale * rows(a / w, b / w) * cols(a % w, b % w);
        }
    }
    return cov;
}

Matrix ring_covariance(std::size_t n, double length, double scale)
{
    if (!(length > 0.0) || !(scale > 0.0)) {
        throw InvalidArgument("ring covariance: length and scale must be > 0");
    }
    const auto m = static_cast<Eigen::Index>(n);
    Matrix cov(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            const auto d = std::abs(i - j);
            const auto circ = std::min(d, m - d);
            cov(i, j) = scale * scale * std::exp(-static_cast<double>(circ) / length);
        }
    }
    // exp(-d) on a circle is not always PD; a small ridge keeps it usable
    cov.diagonal().array() += 1e-3 * scale * scale;
    return cov;
}

std::vector<Vector> sample_gaussian(const Vector& mean, const Matrix& cov, std::size_t count, std::uint64_t seed)
{
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
        throw InvalidArgument("sample_gaussian: covariance does not match the mean");
    }
    const Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw NumericError("sample_gaussian: covariance is not positive definite");
    }
    const Matrix lower = llt.matrixL();
    std::vector<Vector> out(count);
    Vector z(mean.size());
    for (std::size_t i = 0; i < count; ++i) {
        const CounterRng rng(derive_seed(seed, {i}));
        for (Eigen::Index k = 0; k < z.size(); ++k) {
            z(k) = rng.normal(static_cast<std::uint64_t>(k));
        }
        out[i] = mean + lower * z;
    }
    return out;
}

Matrix random_spd(std::size_t dim, std::uint64_t seed, double min_eig)
{
    const auto n = static_cast<Eigen::Index>(dim);
    const CounterRng rng(derive_seed(seed, {0x737064}));
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            a(i, j) = rng.normal(static_cast<std::uint64_t>(i * n + j));
        }
    }
    Matrix spd = a * a.transpose() / static_cast<double>(dim);
    spd.diagonal().array() += min_eig;
    return spd;
}

JointGaussian random_factor_gaussian(const FactorGraph& graph, std::uint64_t seed, double coupling, double ridge)
{
    const auto n = static_cast<Eigen::Index>(graph.total_dim());
    JointGaussian g;
    g.precision = ridge * Matrix::Identity(n, n);
    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        const auto& coords = graph.factors()[j];
        const Matrix block = coupling * random_spd(coords.size(), derive_seed(seed, {j}), 0.1);
        for (std::size_t a = 0; a < coords.size(); ++a) {
            for (std::size_t b = 0; b < coords.size(); ++b) {
                g.precision(static_cast<Eigen::Index>(coords[a]), static_cast<Eigen::Index>(coords[b])) +=
                    block(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
        }
    }
    g.covariance = g.precision.llt().solve(Matrix::Identity(n, n));
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
    const CounterRng rng(derive_seed(seed, {0x6d65616e}));
    g.mean.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        g.mean(k) = rng.normal(static_cast<std::uint64_t>(k));
    }
    return g;
}

BusyScoreModel::BusyScoreModel(ScoreModelPtr inner, std::chrono::microseconds cost, Mode mode)
    : inner_(std::move(inner)), cost_(cost), mode_(mode)
{
    if (!inner_) {
        throw InvalidArgument("busy score model: null inner model");
    }
}

Vector BusyScoreModel::score(const Vector& u, double t, const Vector& condition) const
{
    if (mode_ == Mode::Sleep) {
        std::this_thread::sleep_for(cost_);
    } else {
        // Spin on this thread's CPU clock so the cost is real work, not wall time.
        const double budget = std::chrono::duration<double>(cost_).count();
        const double start = thread_cpu_seconds();
        volatile double sink = 0.0;
        while (thread_cpu_seconds() - start < budget) {
            for (int k = 0; k < 64; ++k) {
                sink = sink + 1e-9;
            }
        }
    }
    return inner_->score(u, t, condition);
}

} // namespace dc
