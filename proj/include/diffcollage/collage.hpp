#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <vector>

#include "diffcollage/core.hpp"
#include "diffcollage/graph.hpp"
#include "diffcollage/scoremodel.hpp"

namespace dc {

class WorkerPool;

/// Score of the full joint content at diffusion time t.
class JointScore {
public:
    virtual ~JointScore() = default;

    virtual std::size_t dim() const = 0;
    virtual Vector score(const Vector& u, double t) const = 0;

    virtual bool supports_vjp() const { return false; }
    /// (d score / d u)^T * cotangent
    virtual Vector score_vjp(const Vector& u, double t, const Vector& cotangent) const;
};

/// Wraps a plain callable. No VJP.
class FunctionScore final : public JointScore {
public:
    using Fn = std::function<Vector(const Vector&, double)>;
    FunctionScore(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

    std::size_t dim() const override { return dim_; }
    Vector score(const Vector& u, double t) const override { return fn_(u, t); }

private:
    std::size_t dim_;
    Fn fn_;
};

/// A single node-level model applied to the whole vector (a regular diffusion model).
class ModelScore final : public JointScore {
public:
    ModelScore(ScoreModelPtr model, std::size_t dim, Vector condition = {});

    std::size_t dim() const override { return dim_; }
    Vector score(const Vector& u, double t) const override;
    bool supports_vjp() const override { return model_->supports_vjp(); }
    Vector score_vjp(const Vector& u, double t, const Vector& cotangent) const override;

private:
    ScoreModelPtr model_;
    std::size_t dim_;
    Vector condition_;
};

/// out[k] = u[coords[k]]
Vector gather(const Vector& u, const CoordSet& coords);
/// target[coords[k]] += coeff * values[k]
void scatter_add(Vector& target, const CoordSet& coords, const Vector& values, double coeff);

struct NodeBinding {
    NodeRef node;
    ScoreModelPtr model;
    Vector condition;  ///< empty = null condition
};

/// Joint score assembled from per-node marginal scores:
///   s(u, t) = sum_j s_fj(u[f_j], t) + sum_i (1 - d_i) s_xi(u[x_i], t).
///
/// Node evaluations run concurrently on the optional pool; each lands in its
/// own buffer and the reduction always runs factors first then variables, each
/// in ascending index order, so results are bit-identical for any worker count.
class ComposedScore final : public JointScore {
public:
    /// Throws InvalidArgument if the graph is invalid, a needed node is unbound,
    /// a zero-coefficient node is bound, or a model rejects its node width.
    ComposedScore(FactorGraph graph, std::vector<NodeBinding> bindings, WorkerPool* pool = nullptr);

    std::size_t dim() const override { return graph_.total_dim(); }
    Vector score(const Vector& u, double t) const override;
    bool supports_vjp() const override;
    Vector score_vjp(const Vector& u, double t, const Vector& cotangent) const override;

    const FactorGraph& graph() const noexcept { return graph_; }
    const BetheCoefficients& coefficients() const noexcept { return coeffs_; }
    const std::vector<NodeBinding>& bindings() const noexcept { return bindings_; }

    void set_pool(WorkerPool* pool) noexcept { pool_ = pool; }

    /// Number of score() calls (parallel rounds) and node evaluations so far.
    std::size_t rounds() const noexcept { return counters_->rounds.load(); }
    std::size_t node_evaluations() const noexcept { return counters_->node_evals.load(); }
    void reset_counters() noexcept;

private:
    struct Counters {
        std::atomic<std::size_t> rounds{0};
        std::atomic<std::size_t> node_evals{0};
    };

    FactorGraph graph_;
    BetheCoefficients coeffs_;
    std::vector<NodeBinding> bindings_;  // sorted: factors ascending, then variables ascending
    WorkerPool* pool_ = nullptr;
    std::shared_ptr<Counters> counters_ = std::make_shared<Counters>();
};

/// Nodes whose Bethe coefficient is non-zero, factors first then variables.
std::vector<NodeRef> bound_nodes(const FactorGraph& graph);

/// Binds an analytic Gaussian score to every non-zero-coefficient node.
std::vector<NodeBinding> bind_gaussian_marginals(const FactorGraph& graph,
                                                 const std::vector<GaussianMarginal>& marginals,
                                                 const NoiseSchedule& schedule);

/// Binds one shared model to every non-zero-coefficient node.
std::vector<NodeBinding> bind_shared_model(const FactorGraph& graph, const ScoreModelPtr& model);

/// Gaussian implied by composing Gaussian marginals: the composed score is
/// exactly -precision * u + shift.
struct BetheGaussian {
    Matrix precision;
    Vector shift;
    bool proper = false;  ///< precision is positive definite

    /// Throws NumericError("improper Bethe Gaussian") when !proper.
    Matrix covariance() const;
    Vector mean() const;
};

/// Assembles sum_node coeff * lift((Sigma_node + sigma^2 I)^{-1}) and the matching
/// shift. Marginals for zero-coefficient nodes may be present and are ignored.
BetheGaussian bethe_gaussian(const FactorGraph& graph, const std::vector<GaussianMarginal>& marginals, double sigma);

/// Same, with sigma = schedule.sigma(t).
BetheGaussian composed_gaussian_oracle(const FactorGraph& graph, const std::vector<GaussianMarginal>& marginals,
                                       const NoiseSchedule& schedule, double t);

} // namespace dc
