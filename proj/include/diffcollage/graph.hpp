#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "diffcollage/core.hpp"

namespace dc {

/// Sorted, duplicate-free list of joint-coordinate indices.
using CoordSet = std::vector<std::size_t>;

enum class NodeKind { Factor, Variable };

struct NodeRef {
    NodeKind kind = NodeKind::Factor;
    std::size_t index = 0;

    static NodeRef factor(std::size_t i) { return {NodeKind::Factor, i}; }
    static NodeRef variable(std::size_t i) { return {NodeKind::Variable, i}; }

    auto operator<=>(const NodeRef&) const = default;
};

std::string to_string(NodeRef node);
/// Parses "factor 3" / "variable 0" (also "f3", "v0").
NodeRef node_ref_from_string(const std::string& text);

struct JointLayout {
    std::size_t total_dim = 0;
    /// Rendering hint only: {N} for 1D, {H, W} for 2D, {6, F, F} for cubemaps.
    std::vector<std::size_t> shape;
};

/// Bipartite factor graph over the coordinates of one joint content vector.
///
/// A valid graph lists variable i under factor j iff variables[i] is a subset
/// of factors[j]; validate() checks this along with coverage and degrees.
class FactorGraph {
public:
    FactorGraph() = default;
    /// Derives the edge lists from coordinate containment.
    FactorGraph(JointLayout layout, std::vector<CoordSet> factors, std::vector<CoordSet> variables);
    /// Uses explicit edges (edges[j] = variables adjacent to factor j). Not validated here.
    FactorGraph(JointLayout layout, std::vector<CoordSet> factors, std::vector<CoordSet> variables,
                std::vector<std::vector<std::size_t>> edges);

    const JointLayout& layout() const noexcept { return layout_; }
    std::size_t total_dim() const noexcept { return layout_.total_dim; }
    std::size_t num_factors() const noexcept { return factors_.size(); }
    std::size_t num_variables() const noexcept { return variables_.size(); }

    const std::vector<CoordSet>& factors() const noexcept { return factors_; }
    const std::vector<CoordSet>& variables() const noexcept { return variables_; }
    const CoordSet& coords(NodeRef node) const;

    /// Variables adjacent to factor j.
    const std::vector<std::size_t>& factor_edges(std::size_t j) const { return edges_.at(j); }
    /// Factors adjacent to variable i.
    const std::vector<std::size_t>& variable_edges(std::size_t i) const { return variable_edges_.at(i); }
    std::size_t degree(std::size_t variable) const { return variable_edges_.at(variable).size(); }

    /// Optional opaque condition tags, resolved when binding models.
    std::vector<std::string> factor_tags;
    std::vector<std::string> variable_tags;

private:
    JointLayout layout_;
    std::vector<CoordSet> factors_;
    std::vector<CoordSet> variables_;
    std::vector<std::vector<std::size_t>> edges_;
    std::vector<std::vector<std::size_t>> variable_edges_;
};

struct Violation {
    std::string kind;  ///< "factor", "variable", "coordinate" or "graph"
    std::size_t index = 0;
    std::string rule;
    std::string detail;
};

/// One line per violation: "<kind> <index>: <rule>: <detail>".
std::string format_report(const std::vector<Violation>& report);

/// Checks containment/edge consistency, coverage, sortedness, degrees and the
/// per-coordinate Bethe sum rule. Empty result means valid.
std::vector<Violation> validate(const FactorGraph& graph);

struct BetheCoefficients {
    std::vector<double> factor_coeffs;    ///< all 1
    std::vector<double> variable_coeffs;  ///< 1 - d_i

    double coeff(NodeRef node) const;
};

BetheCoefficients bethe_coefficients(const FactorGraph& graph);

/// For each coordinate c: (#factors containing c) + sum over variables containing c of (1 - d_i).
std::vector<double> coefficient_sums(const FactorGraph& graph);

bool is_acyclic(const FactorGraph& graph);

/// Linear chain of m factors of length F overlapping by V. Variables are the
/// m-1 interior overlaps plus a degree-1 leaf at each end, ordered left leaf,
/// interior left to right, right leaf.
FactorGraph build_chain(std::size_t num_factors, std::size_t factor_len, std::size_t overlap);

/// Ring of N = m (F - V) coordinates; variable i is the overlap of factors i and i+1 (mod m).
FactorGraph build_cycle(std::size_t num_factors, std::size_t factor_len, std::size_t overlap);

/// 2D patch lattice over a row-major image.
///
/// rows == 1 or cols == 1: a horizontal (vertical) chain of P x P patches with
/// stride P - V, overlaps P x V, and leaf strips at both ends.
///
/// Otherwise: rows x cols "main" patches tile a (rows P) x (cols P) image and
/// (rows-1)(cols-1) "bridge" patches are centered on the interior corners where
/// four main patches meet. Each bridge shares one V x V quadrant with each of
/// its four diagonal neighbours, so every overlap belongs to exactly two
/// factors. This needs V = P / 2; smaller overlaps leave uncovered pixels and
/// larger ones create triple overlaps, both rejected.
FactorGraph build_grid(std::size_t rows, std::size_t cols, std::size_t patch, std::size_t overlap);

/// Cubemap with faces ordered F, B, L, R, U, D (face_dim^2 coordinates each).
/// Factors {F,B,L,R}, {F,B,U,D}, {L,R,U,D}; variables {L,R}, {U,D}, {F,B}.
FactorGraph build_cubemap(std::size_t face_dim);

enum class CubeFace { F = 0, B, L, R, U, D };

struct GaussianMarginal {
    NodeRef node;
    Vector mean;
    Matrix covariance;
};

/// Entropy of N(., cov): 0.5 ln((2 pi e)^k det cov). Throws NumericError if cov is not PD.
double gaussian_entropy(const Matrix& covariance);

/// sum_j H(f_j) + sum_i (1 - d_i) H(x_i). Needs one marginal per node.
double bethe_entropy(const FactorGraph& graph, const std::vector<GaussianMarginal>& marginals);

/// Marginals of N(mean, cov) restricted to every node of the graph (factors first, then variables).
std::vector<GaussianMarginal> marginals_from_joint(const FactorGraph& graph, const Vector& mean, const Matrix& cov);

} // namespace dc
