#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "diffcollage/collage.hpp"
#include "diffcollage/sampler.hpp"

namespace dc {

/// Linear observation map y = H u with exact adjoint and pseudoinverse.
class LinearOperator {
public:
    enum class Kind { Mask, BoxDown };

    /// Keeps the listed coordinates (sorted, unique, < in_dim).
    static LinearOperator mask(std::size_t in_dim, std::vector<std::size_t> keep);
    /// Averages non-overlapping blocks of `block` consecutive coordinates.
    static LinearOperator boxdown(std::size_t in_dim, std::size_t block);

    Kind kind() const noexcept { return kind_; }
    std::size_t in_dim() const noexcept { return in_dim_; }
    std::size_t out_dim() const noexcept { return out_dim_; }
    const std::vector<std::size_t>& kept() const noexcept { return keep_; }
    std::size_t block() const noexcept { return block_; }

    Vector apply(const Vector& u) const;
    Vector apply_transpose(const Vector& y) const;
    Vector apply_pinv(const Vector& y) const;

    /// H^+ y + (I - H^+ H) u
    Vector project(const Vector& u, const Vector& y) const;

private:
    LinearOperator(Kind kind, std::size_t in_dim, std::size_t out_dim) : kind_(kind), in_dim_(in_dim), out_dim_(out_dim) {}
    void check_in(const Vector& u) const;
    void check_out(const Vector& y) const;

    Kind kind_;
    std::size_t in_dim_;
    std::size_t out_dim_;
    std::vector<std::size_t> keep_;
    std::size_t block_ = 1;
};

enum class GuidanceMethod { Replacement, Reconstruction };
enum class LambdaSchedule { Constant, Scaled };  ///< lambda_t = lambda, or lambda / sigma_t^2
enum class GradientMode { Auto, ExactVjp, IdentityJacobian };

GuidanceMethod guidance_method_from_string(std::string_view name);
GradientMode gradient_mode_from_string(std::string_view name);
LambdaSchedule lambda_schedule_from_string(std::string_view name);
std::string_view to_string(GuidanceMethod method);

struct GuidanceConfig {
    GuidanceMethod method = GuidanceMethod::Replacement;
    LambdaSchedule lambda_schedule = LambdaSchedule::Scaled;
    double lambda = 1.0;
    GradientMode gradient_mode = GradientMode::Auto;
};

/// Replacement correction: u0_hat = u + sigma^2 s, u0_tilde = project(u0_hat, y),
/// returns (u0_tilde - u) / sigma^2.
Vector replacement_step(const JointScore& score, const Vector& u, double t, const LinearOperator& op, const Vector& y,
                        const NoiseSchedule& schedule);

/// Reconstruction correction: s - lambda_t * grad_u ||H u0_hat(u) - y||^2.
/// The gradient goes through the score Jacobian (ExactVjp) or treats
/// d u0_hat / d u as the identity (IdentityJacobian).
Vector reconstruction_score(const JointScore& score, const Vector& u, double t, const LinearOperator& op,
                            const Vector& y, const GuidanceConfig& cfg, const NoiseSchedule& schedule);

/// grad_u ||H u0_hat(u) - y||^2 alone, with the same mode semantics.
Vector reconstruction_gradient(const JointScore& score, const Vector& u, double t, const LinearOperator& op,
                               const Vector& y, GradientMode mode, const NoiseSchedule& schedule);

/// JointScore that applies replacement or reconstruction guidance to a base score.
class GuidedScore final : public JointScore {
public:
    GuidedScore(const JointScore& base, LinearOperator op, Vector y, GuidanceConfig cfg, NoiseSchedule schedule);

    std::size_t dim() const override { return base_.dim(); }
    Vector score(const Vector& u, double t) const override;

private:
    const JointScore& base_;
    LinearOperator op_;
    Vector y_;
    GuidanceConfig cfg_;
    NoiseSchedule schedule_;
};

struct OutpaintResult {
    Vector content;
    std::vector<Vector> blocks;
    std::vector<std::size_t> block_calls;  ///< integrator score calls per block
    std::size_t sequential_calls = 0;      ///< sum of block_calls
};

/// Baseline: generate block 1 unconditionally, then each next block with its
/// leading `overlap` coordinates observed (equal to the trailing `overlap`
/// coordinates of the previous block). Output length L F - (L - 1) V.
OutpaintResult autoregressive_outpaint(const ScoreModelPtr& base_model, std::size_t block_width,
                                       std::size_t num_blocks, std::size_t overlap, const GuidanceConfig& guidance,
                                       const NoiseSchedule& schedule, const SamplerConfig& sampler);

/// Spherical interpolation of directions with linearly interpolated norms.
Vector slerp(const Vector& a, const Vector& b, double tau);

} // namespace dc
