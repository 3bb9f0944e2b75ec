#include "diffcollage/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "diffcollage/rng.hpp"

namespace dc {

LinearOperator LinearOperator::mask(std::size_t in_dim, std::vector<std::size_t> keep)
{
    if (in_dim == 0) {
        throw InvalidArgument("mask operator: in_dim must be >= 1");
    }
    for (std::size_t k = 0; k < keep.size(); ++k) {
        if (keep[k] >= in_dim || (k > 0 && keep[k] <= keep[k - 1])) {
            throw InvalidArgument("mask operator: kept coordinates must be sorted, unique and < in_dim");
        }
    }
    LinearOperator op(Kind::Mask, in_dim, keep.size());
    op.keep_ = std::move(keep);
    return op;
}

LinearOperator LinearOperator::boxdown(std::size_t in_dim, std::size_t block)
{
    if (block == 0 || in_dim == 0 || in_dim % block != 0) {
        throw InvalidArgument("boxdown operator: in_dim " + std::to_string(in_dim) + " not divisible by block "
                              + std::to_string(block));
    }
    LinearOperator op(Kind::BoxDown, in_dim, in_dim / block);
    op.block_ = block;
    return op;
}

void LinearOperator::check_in(const Vector& u) const
{
    if (static_cast<std::size_t>(u.size()) != in_dim_) {
        throw InvalidArgument("linear operator: expected input of length " + std::to_string(in_dim_) + ", got "
                              + std::to_string(u.size()));
    }
}

void LinearOperator::check_out(const Vector& y) const
{
    if (static_cast<std::size_t>(y.size()) != out_dim_) {
        throw InvalidArgument("linear operator: expected observation of length " + std::to_string(out_dim_)
                              + ", got " + std::to_string(y.size()));
    }
}

Vector LinearOperator::apply(const Vector& u) const
{
    check_in(u);
    Vector y(static_cast<Eigen::Index>(out_dim_));
    if (kind_ == Kind::Mask) {
        for (std::size_t k = 0; k < keep_.size(); ++k) {
            y(static_cast<Eigen::Index>(k)) = u(static_cast<Eigen::Index>(keep_[k]));
        }
    } else {
        const auto b = static_cast<Eigen::Index>(block_);
        for (Eigen::Index k = 0; k < y.size(); ++k) {
            y(k) = u.segment(k * b, b).mean();
        }
    }
    return y;
}

Vector LinearOperator::apply_transpose(const Vector& y) const
{
    check_out(y);
    Vector u = Vector::Zero(static_cast<Eigen::Index>(in_dim_));
    if (kind_ == Kind::Mask) {
        for (std::size_t k = 0; k < keep_.size(); ++k) {
            u(static_cast<Eigen::Index>(keep_[k])) = y(static_cast<Eigen::Index>(k));
        }
    } else {
        const auto b = static_cast<Eigen::Index>(block_);
        for (Eigen::Index k = 0; k < y.size(); ++k) {
            u.segment(k * b, b).setConstant(y(k) / static_cast<double>(b));
        }
    }
    return u;
}

Vector LinearOperator::apply_pinv(const Vector& y) const
{
    if (kind_ == Kind::Mask) {
        return apply_transpose(y);
    }
    check_out(y);
    Vector u(static_cast<Eigen::Index>(in_dim_));
    const auto b = static_cast<Eigen::Index>(block_);
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        u.segment(k * b, b).setConstant(y(k));
    }
    return u;
}

Vector LinearOperator::project(const Vector& u, const Vector& y) const
{
    check_in(u);
    check_out(y);
    if (kind_ == Kind::Mask) {
        Vector out = u;
        for (std::size_t k = 0; k < keep_.size(); ++k) {
            out(static_cast<Eigen::Index>(keep_[k])) = y(static_cast<Eigen::Index>(k));
        }
        return out;
    }
    return apply_pinv(y) + u - apply_pinv(apply(u));
}

GuidanceMethod guidance_method_from_string(std::string_view name)
{
    if (name == "replacement") {
        return GuidanceMethod::Replacement;
    }
    if (name == "reconstruction") {
        return GuidanceMethod::Reconstruction;
    }
    throw InvalidArgument("unknown guidance method '" + std::string(name) + "'");
}

std::string_view to_string(GuidanceMethod method)
{
    return method == GuidanceMethod::Replacement ? "replacement" : "reconstruction";
}

GradientMode gradient_mode_from_string(std::string_view name)
{
    if (name == "auto") {
        return GradientMode::Auto;
    }
    if (name == "exact-vjp") {
        return GradientMode::ExactVjp;
    }
    if (name == "identity-jacobian") {
        return GradientMode::IdentityJacobian;
    }
    throw InvalidArgument("unknown gradient mode '" + std::string(name) + "'");
}

LambdaSchedule lambda_schedule_from_string(std::string_view name)
{
    if (name == "constant") {
        return LambdaSchedule::Constant;
    }
    if (name == "scaled") {
        return LambdaSchedule::Scaled;
    }
    throw InvalidArgument("unknown lambda schedule '" + std::string(name) + "'");
}

Vector replacement_step(const JointScore& score, const Vector& u, double t, const LinearOperator& op, const Vector& y,
                        const NoiseSchedule& schedule)
{
    const double sigma = schedule.sigma(t);
    const double var = sigma * sigma;
    const Vector denoised = u + var * score.score(u, t);
    const Vector projected = op.project(denoised, y);
    return (projected - u) / var;
}

namespace {

Vector residual_gradient(const JointScore& score, const Vector& u, const Vector& s, double t, const LinearOperator& op,
                         const Vector& y, GradientMode mode, double var)
{
    const Vector denoised = u + var * s;
    const Vector g = op.apply_transpose(op.apply(denoised) - y);
    if (mode == GradientMode::Auto) {
        mode = score.supports_vjp() ? GradientMode::ExactVjp : GradientMode::IdentityJacobian;
    }
    if (mode == GradientMode::IdentityJacobian) {
        return 2.0 * g;
    }
    if (!score.supports_vjp()) {
        throw CapabilityError("reconstruction guidance: exact-vjp requested but the score has no VJP");
    }
    // d u0_hat / d u = I + sigma^2 J_s
    return 2.0 * (g + var * score.score_vjp(u, t, g));
}

} // namespace

Vector reconstruction_gradient(const JointScore& score, const Vector& u, double t, const LinearOperator& op,
                               const Vector& y, GradientMode mode, const NoiseSchedule& schedule)
{
    const double sigma = schedule.sigma(t);
    return residual_gradient(score, u, score.score(u, t), t, op, y, mode, sigma * sigma);
}

Vector reconstruction_score(const JointScore& score, const Vector& u, double t, const LinearOperator& op,
                            const Vector& y, const GuidanceConfig& cfg, const NoiseSchedule& schedule)
{
    if (!(cfg.lambda > 0.0)) {
        throw InvalidArgument("reconstruction guidance: lambda must be > 0");
    }
    const double sigma = schedule.sigma(t);
    const double var = sigma * sigma;
    const double lambda_t = cfg.lambda_schedule == LambdaSchedule::Scaled ? cfg.lambda / var : cfg.lambda;
    const Vector s = score.score(u, t);
    // Descends the residual ||H u0_hat - y||^2.
    return s - lambda_t * residual_gradient(score, u, s, t, op, y, cfg.gradient_mode, var);
}

GuidedScore::GuidedScore(const JointScore& base, LinearOperator op, Vector y, GuidanceConfig cfg, NoiseSchedule schedule)
    : base_(base), op_(std::move(op)), y_(std::move(y)), cfg_(cfg), schedule_(schedule)
{
    if (op_.in_dim() != base_.dim() || static_cast<std::size_t>(y_.size()) != op_.out_dim()) {
        throw InvalidArgument("guided score: operator/observation dimensions do not match the score");
    }
}

Vector GuidedScore::score(const Vector& u, double t) const
{
    if (cfg_.method == GuidanceMethod::Replacement) {
        return replacement_step(base_, u, t, op_, y_, schedule_);
    }
    return reconstruction_score(base_, u, t, op_, y_, cfg_, schedule_);
}

OutpaintResult autoregressive_outpaint(const ScoreModelPtr& base_model, std::size_t block_width,
                                       std::size_t num_blocks, std::size_t overlap, const GuidanceConfig& guidance,
                                       const NoiseSchedule& schedule, const SamplerConfig& sampler)
{
    if (num_blocks < 1) {
        throw InvalidArgument("autoregressive_outpaint: need at least one block");
    }
    if (overlap < 1 || overlap >= block_width) {
        throw InvalidArgument("autoregressive_outpaint: overlap must satisfy 1 <= V < F");
    }
    const ModelScore block_score(base_model, block_width);
    std::vector<std::size_t> leading(overlap);
    for (std::size_t k = 0; k < overlap; ++k) {
        leading[k] = k;
    }
    const LinearOperator op = LinearOperator::mask(block_width, leading);
    const auto f = static_cast<Eigen::Index>(block_width);
    const auto v = static_cast<Eigen::Index>(overlap);

    OutpaintResult result;
    result.content.resize(static_cast<Eigen::Index>(num_blocks * block_width - (num_blocks - 1) * overlap));
    Eigen::Index cursor = 0;
    for (std::size_t b = 0; b < num_blocks; ++b) {
        SamplerConfig cfg = sampler;
        cfg.seed = derive_seed(sampler.seed, {0x61726f, b});
        SamplerStats stats;
        Vector block;
        if (b == 0) {
            block = sample(block_score, schedule, cfg, &stats);
            result.content.head(f) = block;
            cursor = f;
        } else {
            const Vector y = result.blocks.back().tail(v);
            const GuidedScore guided(block_score, op, y, guidance, schedule);
            block = sample(guided, schedule, cfg, &stats);
            result.content.segment(cursor, f - v) = block.tail(f - v);
            cursor += f - v;
        }
        result.blocks.push_back(std::move(block));
        result.block_calls.push_back(stats.step_calls);
        result.sequential_calls += stats.step_calls;
    }
    return result;
}

Vector slerp(const Vector& a, const Vector& b, double tau)
{
    if (a.size() != b.size()) {
        throw InvalidArgument("slerp: vectors differ in length");
    }
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw InvalidArgument("slerp: tau must lie in [0, 1]");
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw InvalidArgument("slerp: zero vector");
    }
    const Vector ua = a / na;
    const Vector ub = b / nb;
    const double cos_angle = std::clamp(ua.dot(ub), -1.0, 1.0);
    const double angle = std::acos(cos_angle);
    const double norm = (1.0 - tau) * na + tau * nb;
    if (angle < 1e-7) {
        return (1.0 - tau) * a + tau * b;
    }
    const double s = std::sin(angle);
    if (s < 1e-12) {
        throw InvalidArgument("slerp: antipodal directions have no unique great circle");
    }
    const Vector dir = (std::sin((1.0 - tau) * angle) / s) * ua + (std::sin(tau * angle) / s) * ub;
    return norm * dir;
}

} // namespace dc
