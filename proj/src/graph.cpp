#include "diffcollage/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dc {

namespace {

bool is_subset(const CoordSet& inner, const CoordSet& outer)
{
    return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

CoordSet interval(std::size_t begin, std::size_t end)
{
    CoordSet out(end - begin);
    std::iota(out.begin(), out.end(), begin);
    return out;
}

/// Pixels of the rectangle rows [r0, r1) x cols [c0, c1) in a row-major image of width `width`.
CoordSet rect(std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1, std::size_t width)
{
    CoordSet out;
    out.reserve((r1 - r0) * (c1 - c0));
    for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
            out.push_back(r * width + c);
        }
    }
    return out;
}

struct Span1d {
    std::size_t begin;
    std::size_t end;
};

struct ChainSpans {
    std::size_t length = 0;
    std::vector<Span1d> factors;
    std::vector<Span1d> variables;
};

ChainSpans chain_spans(std::size_t m, std::size_t f, std::size_t v)
{
    if (m < 1) {
        throw InvalidArgument("chain needs at least one factor");
    }
    if (f < 2) {
        throw InvalidArgument("chain factor length must be >= 2, got " + std::to_string(f));
    }
    if (v < 1 || v >= f) {
        throw InvalidArgument("chain overlap must satisfy 1 <= V < F, got V=" + std::to_string(v)
                              + " F=" + std::to_string(f));
    }
    const std::size_t stride = f - v;
    ChainSpans spans;
    spans.length = m * f - (m - 1) * v;
    for (std::size_t j = 0; j < m; ++j) {
        spans.factors.push_back({j * stride, j * stride + f});
    }
    spans.variables.push_back({0, stride});
    for (std::size_t j = 0; j + 1 < m; ++j) {
        spans.variables.push_back({(j + 1) * stride, (j + 1) * stride + v});
    }
    spans.variables.push_back({(m - 1) * stride + v, spans.length});
    return spans;
}

void require_degree_two(const FactorGraph& graph, const char* builder)
{
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        if (graph.degree(i) != 2) {
            throw InvalidArgument(std::string(builder) + ": overlap geometry gives variable " + std::to_string(i)
                                  + " degree " + std::to_string(graph.degree(i)) + " (expected 2)");
        }
    }
}

} // namespace

std::string to_string(NodeRef node)
{
    return (node.kind == NodeKind::Factor ? "factor " : "variable ") + std::to_string(node.index);
}

NodeRef node_ref_from_string(const std::string& text)
{
    std::string kind;
    std::string rest;
    const auto space = text.find(' ');
    if (space != std::string::npos) {
        kind = text.substr(0, space);
        rest = text.substr(space + 1);
    } else if (!text.empty()) {
        kind = text.substr(0, 1);
        rest = text.substr(1);
    }
    NodeRef node;
    if (kind == "factor" || kind == "f") {
        node.kind = NodeKind::Factor;
    } else if (kind == "variable" || kind == "v") {
        node.kind = NodeKind::Variable;
    } else {
        throw InvalidArgument("cannot parse node reference '" + text + "'");
    }
    if (rest.empty() || !std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw InvalidArgument("cannot parse node index in '" + text + "'");
    }
    node.index = std::stoul(rest);
    return node;
}

FactorGraph::FactorGraph(JointLayout layout, std::vector<CoordSet> factors, std::vector<CoordSet> variables)
    : layout_(std::move(layout)), factors_(std::move(factors)), variables_(std::move(variables))
{
    edges_.resize(factors_.size());
    variable_edges_.resize(variables_.size());
    for (std::size_t j = 0; j < factors_.size(); ++j) {
        for (std::size_t i = 0; i < variables_.size(); ++i) {
            if (is_subset(variables_[i], factors_[j])) {
                edges_[j].push_back(i);
                variable_edges_[i].push_back(j);
            }
        }
    }
}

FactorGraph::FactorGraph(JointLayout layout, std::vector<CoordSet> factors, std::vector<CoordSet> variables,
                         std::vector<std::vector<std::size_t>> edges)
    : layout_(std::move(layout)), factors_(std::move(factors)), variables_(std::move(variables)),
      edges_(std::move(edges))
{
    if (edges_.size() != factors_.size()) {
        throw InvalidArgument("edge list count " + std::to_string(edges_.size()) + " != factor count "
                              + std::to_string(factors_.size()));
    }
    variable_edges_.resize(variables_.size());
    for (std::size_t j = 0; j < edges_.size(); ++j) {
        std::sort(edges_[j].begin(), edges_[j].end());
        edges_[j].erase(std::unique(edges_[j].begin(), edges_[j].end()), edges_[j].end());
        for (std::size_t i : edges_[j]) {
            if (i >= variables_.size()) {
                throw InvalidArgument("factor " + std::to_string(j) + " lists unknown variable " + std::to_string(i));
            }
            variable_edges_[i].push_back(j);
        }
    }
}

const CoordSet& FactorGraph::coords(NodeRef node) const
{
    const auto& list = node.kind == NodeKind::Factor ? factors_ : variables_;
    if (node.index >= list.size()) {
        throw InvalidArgument("no such node: " + to_string(node));
    }
    return list[node.index];
}

std::string format_report(const std::vector<Violation>& report)
{
    std::ostringstream out;
    for (const auto& v : report) {
        out << v.kind << ' ' << v.index << ": " << v.rule << ": " << v.detail << '\n';
    }
    return out.str();
}

std::vector<Violation> validate(const FactorGraph& graph)
{
    std::vector<Violation> report;
    const std::size_t n = graph.total_dim();
    if (n == 0) {
        report.push_back({"graph", 0, "layout", "total_dim must be >= 1"});
        return report;
    }
    const auto& shape = graph.layout().shape;
    if (!shape.empty()) {
        const std::size_t product =
            std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
        if (product != n) {
            report.push_back({"graph", 0, "layout",
                              "shape product " + std::to_string(product) + " != total_dim " + std::to_string(n)});
        }
    }

    auto check_set = [&](const char* kind, std::size_t idx, const CoordSet& set) {
        if (set.empty()) {
            report.push_back({kind, idx, "empty", "coordinate set is empty"});
        }
        for (std::size_t k = 0; k < set.size(); ++k) {
            if (set[k] >= n) {
                report.push_back({kind, idx, "range",
                                  "coordinate " + std::to_string(set[k]) + " >= total_dim " + std::to_string(n)});
            }
            if (k > 0 && set[k] <= set[k - 1]) {
                report.push_back({kind, idx, "sorted",
                                  "coordinates not strictly ascending at position " + std::to_string(k)});
            }
        }
    };
    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        check_set("factor", j, graph.factors()[j]);
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        check_set("variable", i, graph.variables()[i]);
    }

    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        const auto& listed = graph.factor_edges(j);
        for (std::size_t i = 0; i < graph.num_variables(); ++i) {
            const bool is_listed = std::binary_search(listed.begin(), listed.end(), i);
            const bool contained = is_subset(graph.variables()[i], graph.factors()[j]);
            if (is_listed && !contained) {
                report.push_back({"factor", j, "subset",
                                  "variable " + std::to_string(i) + " is listed but not contained"});
            } else if (!is_listed && contained) {
                report.push_back({"factor", j, "edge",
                                  "variable " + std::to_string(i) + " is contained but not listed"});
            }
        }
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        if (graph.degree(i) == 0) {
            report.push_back({"variable", i, "degree", "no incident factor"});
        }
    }

    std::vector<int> factor_count(n, 0);
    for (const auto& f : graph.factors()) {
        for (std::size_t c : f) {
            if (c < n) {
                ++factor_count[c];
            }
        }
    }
    std::vector<std::size_t> uncovered;
    for (std::size_t c = 0; c < n; ++c) {
        if (factor_count[c] == 0) {
            uncovered.push_back(c);
        }
    }
    for (std::size_t c : uncovered) {
        report.push_back({"coordinate", c, "coverage", "not covered by any factor"});
    }

    const auto sums = coefficient_sums(graph);
    for (std::size_t c = 0; c < n; ++c) {
        if (factor_count[c] > 0 && sums[c] != 1.0) {
            std::ostringstream detail;
            detail << "coefficient sum " << sums[c] << " != 1";
            report.push_back({"coordinate", c, "sum-rule", detail.str()});
        }
    }
    return report;
}

double BetheCoefficients::coeff(NodeRef node) const
{
    return node.kind == NodeKind::Factor ? factor_coeffs.at(node.index) : variable_coeffs.at(node.index);
}

BetheCoefficients bethe_coefficients(const FactorGraph& graph)
{
    BetheCoefficients out;
    out.factor_coeffs.assign(graph.num_factors(), 1.0);
    out.variable_coeffs.resize(graph.num_variables());
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        out.variable_coeffs[i] = 1.0 - static_cast<double>(graph.degree(i));
    }
    return out;
}

std::vector<double> coefficient_sums(const FactorGraph& graph)
{
    const std::size_t n = graph.total_dim();
    std::vector<double> sums(n, 0.0);
    for (const auto& f : graph.factors()) {
        for (std::size_t c : f) {
            if (c < n) {
                sums[c] += 1.0;
            }
        }
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        const double coeff = 1.0 - static_cast<double>(graph.degree(i));
        for (std::size_t c : graph.variables()[i]) {
            if (c < n) {
                sums[c] += coeff;
            }
        }
    }
    return sums;
}

bool is_acyclic(const FactorGraph& graph)
{
    const std::size_t m = graph.num_factors();
    std::vector<std::size_t> parent(m + graph.num_variables());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i : graph.factor_edges(j)) {
            const std::size_t a = find(j);
            const std::size_t b = find(m + i);
            if (a == b) {
                return false;
            }
            parent[a] = b;
        }
    }
    return true;
}

FactorGraph build_chain(std::size_t num_factors, std::size_t factor_len, std::size_t overlap)
{
    const ChainSpans spans = chain_spans(num_factors, factor_len, overlap);
    std::vector<CoordSet> factors;
    std::vector<CoordSet> variables;
    for (const auto& s : spans.factors) {
        factors.push_back(interval(s.begin, s.end));
    }
    for (const auto& s : spans.variables) {
        variables.push_back(interval(s.begin, s.end));
    }
    return FactorGraph({spans.length, {spans.length}}, std::move(factors), std::move(variables));
}

FactorGraph build_cycle(std::size_t num_factors, std::size_t factor_len, std::size_t overlap)
{
    const std::size_t m = num_factors;
    if (m < 2) {
        throw InvalidArgument("cycle needs at least two factors");
    }
    if (factor_len < 2 || overlap < 1 || overlap >= factor_len) {
        throw InvalidArgument("cycle needs F >= 2 and 1 <= V < F");
    }
    const std::size_t stride = factor_len - overlap;
    const std::size_t n = m * stride;
    if (n < factor_len) {
        throw InvalidArgument("cycle of " + std::to_string(m) + " factors with stride " + std::to_string(stride)
                              + " has ring size " + std::to_string(n) + " < factor length "
                              + std::to_string(factor_len) + " (a factor would wrap onto itself)");
    }
    auto ring_interval = [n](std::size_t begin, std::size_t len) {
        CoordSet out;
        for (std::size_t k = 0; k < len; ++k) {
            out.push_back((begin + k) % n);
        }
        std::sort(out.begin(), out.end());
        return out;
    };
    std::vector<CoordSet> factors;
    std::vector<CoordSet> variables;
    for (std::size_t j = 0; j < m; ++j) {
        factors.push_back(ring_interval(j * stride, factor_len));
    }
    for (std::size_t j = 0; j < m; ++j) {
        variables.push_back(ring_interval((j + 1) * stride, overlap));
    }
    FactorGraph graph({n, {n}}, std::move(factors), std::move(variables));
    require_degree_two(graph, "build_cycle");
    return graph;
}

FactorGraph build_grid(std::size_t rows, std::size_t cols, std::size_t patch, std::size_t overlap)
{
    if (rows < 1 || cols < 1) {
        throw InvalidArgument("grid needs rows >= 1 and cols >= 1");
    }
    if (patch < 2 || overlap < 1 || overlap >= patch) {
        throw InvalidArgument("grid needs P >= 2 and 1 <= V < P");
    }
    if (rows == 1 || cols == 1) {
        const bool horizontal = rows == 1;
        const ChainSpans spans = chain_spans(horizontal ? cols : rows, patch, overlap);
        const std::size_t height = horizontal ? patch : spans.length;
        const std::size_t width = horizontal ? spans.length : patch;
        auto strip = [&](const Span1d& s) {
            return horizontal ? rect(0, patch, s.begin, s.end, width) : rect(s.begin, s.end, 0, patch, width);
        };
        std::vector<CoordSet> factors;
        std::vector<CoordSet> variables;
        for (const auto& s : spans.factors) {
            factors.push_back(strip(s));
        }
        for (const auto& s : spans.variables) {
            variables.push_back(strip(s));
        }
        return FactorGraph({height * width, {height, width}}, std::move(factors), std::move(variables));
    }

    if (2 * overlap < patch) {
        throw InvalidArgument("grid overlap V=" + std::to_string(overlap) + " < P/2 leaves pixels covered by no factor");
    }
    if (2 * overlap > patch) {
        throw InvalidArgument("grid overlap V=" + std::to_string(overlap)
                              + " > P/2 makes overlap regions shared by more than two factors");
    }
    const std::size_t half = overlap;
    const std::size_t height = rows * patch;
    const std::size_t width = cols * patch;
    std::vector<CoordSet> factors;
    std::vector<CoordSet> variables;
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = 0; b < cols; ++b) {
            factors.push_back(rect(a * patch, (a + 1) * patch, b * patch, (b + 1) * patch, width));
        }
    }
    for (std::size_t a = 0; a + 1 < rows; ++a) {
        for (std::size_t b = 0; b + 1 < cols; ++b) {
            const std::size_t r0 = a * patch + half;
            const std::size_t c0 = b * patch + half;
            factors.push_back(rect(r0, r0 + patch, c0, c0 + patch, width));
            // Quadrants shared with the four surrounding main patches: TL, TR, BL, BR.
            for (std::size_t qr = 0; qr < 2; ++qr) {
                for (std::size_t qc = 0; qc < 2; ++qc) {
                    const std::size_t rr = r0 + qr * half;
                    const std::size_t cc = c0 + qc * half;
                    variables.push_back(rect(rr, rr + half, cc, cc + half, width));
                }
            }
        }
    }
    FactorGraph graph({height * width, {height, width}}, std::move(factors), std::move(variables));
    require_degree_two(graph, "build_grid");
    return graph;
}

FactorGraph build_cubemap(std::size_t face_dim)
{
    if (face_dim < 1) {
        throw InvalidArgument("cubemap face_dim must be >= 1");
    }
    const std::size_t face = face_dim * face_dim;
    auto faces = [face](std::initializer_list<CubeFace> list) {
        CoordSet out;
        for (CubeFace f : list) {
            const std::size_t base = static_cast<std::size_t>(f) * face;
            for (std::size_t k = 0; k < face; ++k) {
                out.push_back(base + k);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    };
    using enum CubeFace;
    std::vector<CoordSet> factors{faces({F, B, L, R}), faces({F, B, U, D}), faces({L, R, U, D})};
    std::vector<CoordSet> variables{faces({L, R}), faces({U, D}), faces({F, B})};
    return FactorGraph({6 * face, {6, face_dim, face_dim}}, std::move(factors), std::move(variables));
}

double gaussian_entropy(const Matrix& covariance)
{
    const Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success) {
        throw NumericError("covariance is not positive definite");
    }
    const Matrix& l = llt.matrixL();
    double logdet = 0.0;
    for (Eigen::Index k = 0; k < l.rows(); ++k) {
        logdet += 2.0 * std::log(l(k, k));
    }
    const double k = static_cast<double>(covariance.rows());
    return 0.5 * (k * std::log(2.0 * std::numbers::pi * std::numbers::e) + logdet);
}

double bethe_entropy(const FactorGraph& graph, const std::vector<GaussianMarginal>& marginals)
{
    std::map<NodeRef, const GaussianMarginal*> by_node;
    for (const auto& m : marginals) {
        by_node[m.node] = &m;
    }
    const auto coeffs = bethe_coefficients(graph);
    double total = 0.0;
    auto add = [&](NodeRef node) {
        auto it = by_node.find(node);
        if (it == by_node.end()) {
            throw InvalidArgument("bethe_entropy: missing marginal for " + to_string(node));
        }
        const auto size = static_cast<Eigen::Index>(graph.coords(node).size());
        if (it->second->covariance.rows() != size || it->second->covariance.cols() != size) {
            throw InvalidArgument("bethe_entropy: marginal for " + to_string(node) + " has wrong dimension");
        }
        const double c = coeffs.coeff(node);
        if (c != 0.0) {
            total += c * gaussian_entropy(it->second->covariance);
        }
    };
    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        add(NodeRef::factor(j));
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        add(NodeRef::variable(i));
    }
    return total;
}

std::vector<GaussianMarginal> marginals_from_joint(const FactorGraph& graph, const Vector& mean, const Matrix& cov)
{
    std::vector<GaussianMarginal> out;
    auto restrict_to = [&](NodeRef node) {
        const auto& set = graph.coords(node);
        const auto k = static_cast<Eigen::Index>(set.size());
        GaussianMarginal m{node, Vector(k), Matrix(k, k)};
        for (Eigen::Index a = 0; a < k; ++a) {
            m.mean(a) = mean(static_cast<Eigen::Index>(set[static_cast<std::size_t>(a)]));
            for (Eigen::Index b = 0; b < k; ++b) {
                m.covariance(a, b) = cov(static_cast<Eigen::Index>(set[static_cast<std::size_t>(a)]),
                                         static_cast<Eigen::Index>(set[static_cast<std::size_t>(b)]));
            }
        }
        out.push_back(std::move(m));
    };
    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        restrict_to(NodeRef::factor(j));
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        restrict_to(NodeRef::variable(i));
    }
    return out;
}

} // namespace dc
