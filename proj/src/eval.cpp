#include "diffcollage/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diffcollage/rng.hpp"

namespace dc {

GaussianFit fit_gaussian(std::span<const Vector> samples)
{
    if (samples.size() < 2) {
        throw InvalidArgument("fit_gaussian: need at least 2 samples, got " + std::to_string(samples.size()));
    }
    const auto d = samples.front().size();
    GaussianFit fit{Vector::Zero(d), Matrix::Zero(d, d), samples.size()};
    for (const auto& s : samples) {
        if (s.size() != d) {
            throw InvalidArgument("fit_gaussian: samples differ in dimension");
        }
        fit.mean += s;
    }
    fit.mean /= static_cast<double>(samples.size());
    for (const auto& s : samples) {
        const Vector c = s - fit.mean;
        fit.covariance.selfadjointView<Eigen::Lower>().rankUpdate(c);
    }
    fit.covariance = fit.covariance.selfadjointView<Eigen::Lower>();
    fit.covariance /= static_cast<double>(samples.size() - 1);
    return fit;
}

SymmetricEigen jacobi_eigen(const Matrix& symmetric, int max_sweeps, double tol)
{
    if (symmetric.rows() != symmetric.cols()) {
        throw InvalidArgument("jacobi_eigen: matrix is not square");
    }
    const Eigen::Index n = symmetric.rows();
    Matrix a = 0.5 * (symmetric + symmetric.transpose());
    Matrix v = Matrix::Identity(n, n);
    const double scale = a.norm();
    auto off_norm = [&] {
        double s = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                s += 2.0 * a(p, q) * a(p, q);
            }
        }
        return std::sqrt(s);
    };
    int sweep = 0;
    while (off_norm() > tol * scale) {
        if (sweep == max_sweeps) {
            throw NumericError("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) + " sweeps");
        }
        ++sweep;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    return {a.diagonal(), v, sweep};
}

Matrix sqrt_psd(const Matrix& symmetric)
{
    const auto eig = jacobi_eigen(symmetric);
    const Vector root = eig.values.cwiseMax(0.0).cwiseSqrt();
    return eig.vectors * root.asDiagonal() * eig.vectors.transpose();
}

double frechet_gaussian(const GaussianFit& a, const GaussianFit& b)
{
    if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows()) {
        throw InvalidArgument("frechet_gaussian: fits differ in dimension");
    }
    if (a.mean == b.mean && a.covariance == b.covariance) {
        return 0.0;
    }
    const Matrix root_a = sqrt_psd(a.covariance);
    const Matrix inner = root_a * b.covariance * root_a;
    const auto eig = jacobi_eigen(0.5 * (inner + inner.transpose()));
    const double cross = eig.values.cwiseMax(0.0).cwiseSqrt().sum();
    const double d2 = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    return std::max(d2, 0.0);
}

std::vector<Vector> random_crops(std::span<const Vector> long_samples, std::size_t crop_len, std::uint64_t seed)
{
    if (crop_len == 0) {
        throw InvalidArgument("fd_plus: crop_len must be >= 1");
    }
    RngStream rng(derive_seed(seed, {0x63726f70}));
    std::vector<Vector> crops;
    crops.reserve(long_samples.size());
    for (const auto& s : long_samples) {
        const auto len = static_cast<std::size_t>(s.size());
        if (crop_len > len) {
            throw InvalidArgument("fd_plus: crop_len " + std::to_string(crop_len) + " exceeds sample length "
                                  + std::to_string(len));
        }
        const auto offset = static_cast<Eigen::Index>(rng.below(len - crop_len + 1));
        crops.push_back(s.segment(offset, static_cast<Eigen::Index>(crop_len)));
    }
    return crops;
}

MetricReport fd_plus(std::span<const Vector> long_samples, std::span<const Vector> reference, std::size_t crop_len,
                     std::uint64_t seed)
{
    const auto crops = random_crops(long_samples, crop_len, seed);
    const auto fit_crops = fit_gaussian(crops);
    const auto fit_ref = fit_gaussian(reference);
    MetricReport report{"fd_plus", frechet_gaussian(fit_crops, fit_ref)};
    report.details["crop_len"] = crop_len;
    report.details["crops"] = crops.size();
    report.details["reference"] = reference.size();
    report.details["seed"] = seed;
    return report;
}

MetricReport fd_plus(std::span<const Vector> long_samples, const ReferenceSampler& reference_sampler,
                     std::size_t crop_len, std::size_t count, std::uint64_t seed)
{
    const auto reference = reference_sampler(count, derive_seed(seed, {0x726566}));
    return fd_plus(long_samples, reference, crop_len, seed);
}

MetricReport seam_statistic(std::span<const Vector> samples, const std::vector<std::size_t>& boundaries)
{
    if (samples.empty()) {
        throw InvalidArgument("seam_statistic: no samples");
    }
    const auto len = static_cast<std::size_t>(samples.front().size());
    std::vector<bool> is_boundary(len, false);
    for (std::size_t b : boundaries) {
        if (b == 0 || b >= len) {
            throw InvalidArgument("seam_statistic: boundary " + std::to_string(b) + " is not interior");
        }
        is_boundary[b] = true;
    }
    double seam_sum = 0.0;
    double rest_sum = 0.0;
    std::size_t seam_n = 0;
    std::size_t rest_n = 0;
    for (const auto& s : samples) {
        if (static_cast<std::size_t>(s.size()) != len) {
            throw InvalidArgument("seam_statistic: samples differ in length");
        }
        for (std::size_t k = 1; k < len; ++k) {
            const double d = s(static_cast<Eigen::Index>(k)) - s(static_cast<Eigen::Index>(k - 1));
            if (is_boundary[k]) {
                seam_sum += d * d;
                ++seam_n;
            } else {
                rest_sum += d * d;
                ++rest_n;
            }
        }
    }
    MetricReport report{"seam_ratio", 0.0};
    if (seam_n == 0 || rest_n == 0 || rest_sum == 0.0) {
        report.value = 1.0;
    } else {
        report.value = (seam_sum / static_cast<double>(seam_n)) / (rest_sum / static_cast<double>(rest_n));
    }
    report.details["boundaries"] = boundaries.size();
    report.details["samples"] = samples.size();
    return report;
}

double kendall_tau(std::span<const double> values)
{
    const std::size_t n = values.size();
    if (n < 2) {
        return 0.0;
    }
    double concordant = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = values[j] - values[i];
            concordant += d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        }
    }
    return concordant / (0.5 * static_cast<double>(n * (n - 1)));
}

DriftProfile drift_profile(const std::vector<std::vector<Vector>>& blocks)
{
    if (blocks.size() < 2) {
        throw InvalidArgument("drift_profile: need at least 2 blocks");
    }
    DriftProfile profile;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto fit = fit_gaussian(blocks[b]);
        const double mean = fit.mean.mean();
        const double variance = fit.covariance.diagonal().mean();
        profile.means.push_back(mean);
        profile.variances.push_back(variance);
        MetricReport r{"block_" + std::to_string(b), variance};
        r.details["mean"] = mean;
        r.details["variance"] = variance;
        r.details["samples"] = blocks[b].size();
        profile.blocks.push_back(std::move(r));
    }
    const auto [lo, hi] = std::minmax_element(profile.variances.begin(), profile.variances.end());
    double avg = 0.0;
    for (double v : profile.variances) {
        avg += v;
    }
    avg /= static_cast<double>(profile.variances.size());
    profile.spread = avg > 0.0 ? (*hi - *lo) / avg : 0.0;
    profile.kendall_tau = kendall_tau(profile.variances);
    profile.summary = {"drift_spread", profile.spread};
    profile.summary.details["kendall_tau"] = profile.kendall_tau;
    profile.summary.details["blocks"] = blocks.size();
    return profile;
}

std::string reports_to_csv(const std::vector<MetricReport>& reports)
{
    std::ostringstream out;
    out << "name,value,details\n";
    out.precision(17);
    for (const auto& r : reports) {
        std::string details = r.details.dump();
        std::string quoted;
        for (char c : details) {
            quoted += c;
            if (c == '"') {
                quoted += '"';
            }
        }
        out << r.name << ',' << r.value << ",\"" << quoted << "\"\n";
    }
    return out.str();
}

nlohmann::ordered_json reports_to_json(const std::vector<MetricReport>& reports)
{
    auto out = nlohmann::ordered_json::object();
    for (const auto& r : reports) {
        out[r.name] = {{"value", r.value}, {"details", r.details}};
    }
    return out;
}

} // namespace dc
