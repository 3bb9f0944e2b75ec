#include "diffcollage/collage.hpp"

#include <algorithm>
#include <map>

#include "diffcollage/parallel.hpp"

namespace dc {

Vector JointScore::score_vjp(const Vector&, double, const Vector&) const
{
    throw CapabilityError("this joint score does not provide vector-Jacobian products");
}

ModelScore::ModelScore(ScoreModelPtr model, std::size_t dim, Vector condition)
    : model_(std::move(model)), dim_(dim), condition_(std::move(condition))
{
    if (!model_ || !model_->accepts_width(dim_)) {
        throw InvalidArgument("model does not accept width " + std::to_string(dim_));
    }
}

Vector ModelScore::score(const Vector& u, double t) const
{
    return model_->score(u, t, condition_);
}

Vector ModelScore::score_vjp(const Vector& u, double t, const Vector& cotangent) const
{
    return model_->score_vjp(u, t, condition_, cotangent);
}

Vector gather(const Vector& u, const CoordSet& coords)
{
    Vector out(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) {
        if (coords[k] >= static_cast<std::size_t>(u.size())) {
            throw InvalidArgument("gather: coordinate " + std::to_string(coords[k]) + " out of range for length "
                                  + std::to_string(u.size()));
        }
        out(static_cast<Eigen::Index>(k)) = u(static_cast<Eigen::Index>(coords[k]));
    }
    return out;
}

void scatter_add(Vector& target, const CoordSet& coords, const Vector& values, double coeff)
{
    if (static_cast<std::size_t>(values.size()) != coords.size()) {
        throw InvalidArgument("scatter_add: " + std::to_string(values.size()) + " values for "
                              + std::to_string(coords.size()) + " coordinates");
    }
    if (coeff == 0.0) {
        return;
    }
    for (std::size_t k = 0; k < coords.size(); ++k) {
        if (coords[k] >= static_cast<std::size_t>(target.size())) {
            throw InvalidArgument("scatter_add: coordinate " + std::to_string(coords[k]) + " out of range");
        }
        target(static_cast<Eigen::Index>(coords[k])) += coeff * values(static_cast<Eigen::Index>(k));
    }
}

std::vector<NodeRef> bound_nodes(const FactorGraph& graph)
{
    std::vector<NodeRef> nodes;
    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        nodes.push_back(NodeRef::factor(j));
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        if (graph.degree(i) != 1) {
            nodes.push_back(NodeRef::variable(i));
        }
    }
    return nodes;
}

ComposedScore::ComposedScore(FactorGraph graph, std::vector<NodeBinding> bindings, WorkerPool* pool)
    : graph_(std::move(graph)), coeffs_(bethe_coefficients(graph_)), bindings_(std::move(bindings)), pool_(pool)
{
    const auto report = validate(graph_);
    if (!report.empty()) {
        throw InvalidArgument("composed score: invalid factor graph:\n" + format_report(report));
    }
    std::sort(bindings_.begin(), bindings_.end(),
              [](const NodeBinding& a, const NodeBinding& b) { return a.node < b.node; });
    for (std::size_t k = 1; k < bindings_.size(); ++k) {
        if (bindings_[k].node == bindings_[k - 1].node) {
            throw InvalidArgument("composed score: duplicate binding for " + to_string(bindings_[k].node));
        }
    }
    const auto needed = bound_nodes(graph_);
    for (const auto& b : bindings_) {
        graph_.coords(b.node);  // range check
        if (coeffs_.coeff(b.node) == 0.0) {
            throw InvalidArgument("composed score: " + to_string(b.node) + " has coefficient 0 and must not be bound");
        }
        if (!b.model) {
            throw InvalidArgument("composed score: null model for " + to_string(b.node));
        }
        if (!b.model->accepts_width(graph_.coords(b.node).size())) {
            throw InvalidArgument("composed score: model for " + to_string(b.node) + " does not accept width "
                                  + std::to_string(graph_.coords(b.node).size()));
        }
    }
    for (const auto& node : needed) {
        const bool found = std::any_of(bindings_.begin(), bindings_.end(),
                                       [&](const NodeBinding& b) { return b.node == node; });
        if (!found) {
            throw InvalidArgument("composed score: no model bound to " + to_string(node));
        }
    }
}

namespace {

template <typename Fn>
Vector evaluate_node(const NodeBinding& binding, Fn&& fn)
{
    try {
        return fn();
    } catch (const NumericError& e) {
        throw NumericError(to_string(binding.node) + ": " + e.what());
    } catch (const DomainError& e) {
        throw DomainError(to_string(binding.node) + ": " + e.what());
    } catch (const CapabilityError& e) {
        throw CapabilityError(to_string(binding.node) + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(to_string(binding.node) + ": " + e.what());
    }
}

} // namespace

Vector ComposedScore::score(const Vector& u, double t) const
{
    if (static_cast<std::size_t>(u.size()) != dim()) {
        throw InvalidArgument("composed score: input length " + std::to_string(u.size()) + " != total_dim "
                              + std::to_string(dim()));
    }
    std::vector<Vector> partial(bindings_.size());
    for_each_index(pool_, bindings_.size(), [&](std::size_t k) {
        const auto& b = bindings_[k];
        partial[k] = evaluate_node(b, [&] { return b.model->score(gather(u, graph_.coords(b.node)), t, b.condition); });
    });
    Vector out = Vector::Zero(u.size());
    for (std::size_t k = 0; k < bindings_.size(); ++k) {
        scatter_add(out, graph_.coords(bindings_[k].node), partial[k], coeffs_.coeff(bindings_[k].node));
    }
    counters_->rounds.fetch_add(1);
    counters_->node_evals.fetch_add(bindings_.size());
    return out;
}

bool ComposedScore::supports_vjp() const
{
    return std::all_of(bindings_.begin(), bindings_.end(), [](const NodeBinding& b) { return b.model->supports_vjp(); });
}

Vector ComposedScore::score_vjp(const Vector& u, double t, const Vector& cotangent) const
{
    if (static_cast<std::size_t>(u.size()) != dim() || static_cast<std::size_t>(cotangent.size()) != dim()) {
        throw InvalidArgument("composed score: vjp dimension mismatch");
    }
    std::vector<Vector> partial(bindings_.size());
    for_each_index(pool_, bindings_.size(), [&](std::size_t k) {
        const auto& b = bindings_[k];
        const auto& coords = graph_.coords(b.node);
        partial[k] = evaluate_node(
            b, [&] { return b.model->score_vjp(gather(u, coords), t, b.condition, gather(cotangent, coords)); });
    });
    Vector out = Vector::Zero(u.size());
    for (std::size_t k = 0; k < bindings_.size(); ++k) {
        scatter_add(out, graph_.coords(bindings_[k].node), partial[k], coeffs_.coeff(bindings_[k].node));
    }
    return out;
}

void ComposedScore::reset_counters() noexcept
{
    counters_->rounds = 0;
    counters_->node_evals = 0;
}

std::vector<NodeBinding> bind_gaussian_marginals(const FactorGraph& graph,
                                                 const std::vector<GaussianMarginal>& marginals,
                                                 const NoiseSchedule& schedule)
{
    std::map<NodeRef, const GaussianMarginal*> by_node;
    for (const auto& m : marginals) {
        by_node[m.node] = &m;
    }
    std::vector<NodeBinding> out;
    for (const auto& node : bound_nodes(graph)) {
        auto it = by_node.find(node);
        if (it == by_node.end()) {
            throw InvalidArgument("no Gaussian marginal for " + to_string(node));
        }
        out.push_back({node, std::make_shared<GaussianScoreModel>(it->second->mean, it->second->covariance, schedule), {}});
    }
    return out;
}

std::vector<NodeBinding> bind_shared_model(const FactorGraph& graph, const ScoreModelPtr& model)
{
    std::vector<NodeBinding> out;
    for (const auto& node : bound_nodes(graph)) {
        out.push_back({node, model, {}});
    }
    return out;
}

Matrix BetheGaussian::covariance() const
{
    if (!proper) {
        throw NumericError("improper Bethe Gaussian: composed precision is not positive definite");
    }
    return precision.llt().solve(Matrix::Identity(precision.rows(), precision.cols()));
}

Vector BetheGaussian::mean() const
{
    if (!proper) {
        throw NumericError("improper Bethe Gaussian: composed precision is not positive definite");
    }
    return precision.llt().solve(shift);
}

BetheGaussian bethe_gaussian(const FactorGraph& graph, const std::vector<GaussianMarginal>& marginals, double sigma)
{
    std::map<NodeRef, const GaussianMarginal*> by_node;
    for (const auto& m : marginals) {
        by_node[m.node] = &m;
    }
    const auto coeffs = bethe_coefficients(graph);
    const auto n = static_cast<Eigen::Index>(graph.total_dim());
    BetheGaussian out{Matrix::Zero(n, n), Vector::Zero(n), false};
    for (const auto& node : bound_nodes(graph)) {
        auto it = by_node.find(node);
        if (it == by_node.end()) {
            throw InvalidArgument("bethe_gaussian: no marginal for " + to_string(node));
        }
        const auto& coords = graph.coords(node);
        const auto k = static_cast<Eigen::Index>(coords.size());
        if (it->second->covariance.rows() != k || it->second->mean.size() != k) {
            throw InvalidArgument("bethe_gaussian: marginal for " + to_string(node) + " has wrong dimension");
        }
        Matrix noised = it->second->covariance;
        noised.diagonal().array() += sigma * sigma;
        const Eigen::LLT<Matrix> llt(noised);
        if (llt.info() != Eigen::Success) {
            throw NumericError("bethe_gaussian: marginal covariance of " + to_string(node) + " is not PD");
        }
        const Matrix precision = llt.solve(Matrix::Identity(k, k));
        const Vector h = precision * it->second->mean;
        const double c = coeffs.coeff(node);
        for (Eigen::Index a = 0; a < k; ++a) {
            const auto ga = static_cast<Eigen::Index>(coords[static_cast<std::size_t>(a)]);
            out.shift(ga) += c * h(a);
            for (Eigen::Index b = 0; b < k; ++b) {
                out.precision(ga, static_cast<Eigen::Index>(coords[static_cast<std::size_t>(b)])) += c * precision(a, b);
            }
        }
    }
    out.precision = 0.5 * (out.precision + out.precision.transpose()).eval();
    out.proper = Eigen::LLT<Matrix>(out.precision).info() == Eigen::Success;
    return out;
}

BetheGaussian composed_gaussian_oracle(const FactorGraph& graph, const std::vector<GaussianMarginal>& marginals,
                                       const NoiseSchedule& schedule, double t)
{
    return bethe_gaussian(graph, marginals, schedule.sigma(t));
}

} // namespace dc
