#include <memory>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "diffcollage/collage.hpp"
#include "diffcollage/conditioning.hpp"
#include "diffcollage/eval.hpp"
#include "diffcollage/graph.hpp"
#include "diffcollage/parallel.hpp"
#include "diffcollage/sampler.hpp"
#include "diffcollage/schedule.hpp"
#include "diffcollage/testbed.hpp"

namespace py = pybind11;
using namespace dc;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix stack(const std::vector<Vector>& rows)
{
    if (rows.empty()) {
        return {};
    }
    RowMatrix out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return out;
}

std::vector<Vector> unstack(const RowMatrix& m)
{
    std::vector<Vector> rows;
    rows.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows.emplace_back(m.row(i).transpose());
    }
    return rows;
}

/// Composed score over analytic Gaussian node marginals, with its own pool.
class GaussianCollage {
public:
    GaussianCollage(const FactorGraph& graph, const Vector& mean, const Matrix& cov, const NoiseSchedule& schedule,
                    std::size_t workers)
        : schedule_(schedule), pool_(std::make_unique<WorkerPool>(workers)),
          marginals_(marginals_from_joint(graph, mean, cov)),
          score_(graph, bind_gaussian_marginals(graph, marginals_, schedule), pool_.get())
    {
    }

    Vector score(const Vector& u, double t) const { return score_.score(u, t); }

    RowMatrix sample(std::size_t count, const std::string& method, int steps, std::uint64_t seed, double eta,
                     double rho) const
    {
        SamplerConfig cfg;
        cfg.grid = karras_grid(schedule_, steps, rho);
        cfg.method = sampler_method_from_string(method);
        cfg.eta = eta;
        cfg.seed = seed;
        return stack(sample_batch(score_, schedule_, cfg, count, pool_.get()));
    }

    Matrix bethe_covariance(double sigma) const { return bethe_gaussian(score_.graph(), marginals_, sigma).covariance(); }

    std::size_t rounds() const { return score_.rounds(); }
    std::size_t node_evaluations() const { return score_.node_evaluations(); }

private:
    NoiseSchedule schedule_;
    std::unique_ptr<WorkerPool> pool_;
    std::vector<GaussianMarginal> marginals_;
    ComposedScore score_;
};

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Factor-graph composition of diffusion scores";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_static("linear", &NoiseSchedule::linear, py::arg("sigma_min"), py::arg("sigma_max"))
        .def_static("geometric", &NoiseSchedule::geometric, py::arg("sigma_min"), py::arg("sigma_max"))
        .def_property_readonly("sigma_min", &NoiseSchedule::sigma_min)
        .def_property_readonly("sigma_max", &NoiseSchedule::sigma_max)
        .def_property_readonly("t_min", &NoiseSchedule::t_min)
        .def_property_readonly("t_max", &NoiseSchedule::t_max)
        .def_property_readonly("kind", [](const NoiseSchedule& s) { return std::string(to_string(s.kind())); })
        .def("sigma", &NoiseSchedule::sigma)
        .def("sigma_dot", &NoiseSchedule::sigma_dot)
        .def("time_of_sigma", &NoiseSchedule::time_of_sigma);

    m.def("karras_grid", [](const NoiseSchedule& s, int steps, double rho) { return karras_grid(s, steps, rho).times; },
          py::arg("schedule"), py::arg("steps"), py::arg("rho") = 7.0);

    py::class_<FactorGraph>(m, "FactorGraph")
        .def(py::init([](std::size_t total_dim, std::vector<CoordSet> factors, std::vector<CoordSet> variables) {
                 return FactorGraph(JointLayout{total_dim, {total_dim}}, std::move(factors), std::move(variables));
             }),
             py::arg("total_dim"), py::arg("factors"), py::arg("variables"))
        .def_property_readonly("total_dim", &FactorGraph::total_dim)
        .def_property_readonly("shape", [](const FactorGraph& g) { return g.layout().shape; })
        .def_property_readonly("factors", &FactorGraph::factors)
        .def_property_readonly("variables", &FactorGraph::variables)
        .def("degree", &FactorGraph::degree)
        .def("validate", [](const FactorGraph& g) {
            std::vector<std::string> lines;
            for (const auto& v : validate(g)) {
                lines.push_back(format_report({v}));
            }
            return lines;
        })
        .def("is_acyclic", [](const FactorGraph& g) { return is_acyclic(g); })
        .def("bethe_coefficients", [](const FactorGraph& g) {
            const auto c = bethe_coefficients(g);
            return py::make_tuple(c.factor_coeffs, c.variable_coeffs);
        })
        .def("coefficient_sums", [](const FactorGraph& g) { return coefficient_sums(g); });

    m.def("build_chain", &build_chain, py::arg("num_factors"), py::arg("factor_len"), py::arg("overlap"));
    m.def("build_cycle", &build_cycle, py::arg("num_factors"), py::arg("factor_len"), py::arg("overlap"));
    m.def("build_grid", &build_grid, py::arg("rows"), py::arg("cols"), py::arg("patch"), py::arg("overlap"));
    m.def("build_cubemap", &build_cubemap, py::arg("face_dim"));

    m.def("ou_covariance", &ou_covariance, py::arg("n"), py::arg("length"), py::arg("scale") = 1.0);
    m.def("ring_covariance", &ring_covariance, py::arg("n"), py::arg("length"), py::arg("scale") = 1.0);
    m.def("sample_gaussian",
          [](const Vector& mean, const Matrix& cov, std::size_t count, std::uint64_t seed) {
              return stack(sample_gaussian(mean, cov, count, seed));
          },
          py::arg("mean"), py::arg("cov"), py::arg("count"), py::arg("seed"));

    py::class_<GaussianCollage>(m, "GaussianCollage")
        .def(py::init<const FactorGraph&, const Vector&, const Matrix&, const NoiseSchedule&, std::size_t>(),
             py::arg("graph"), py::arg("mean"), py::arg("cov"), py::arg("schedule"), py::arg("workers") = 1)
        .def("score", &GaussianCollage::score, py::arg("u"), py::arg("t"))
        .def("sample", &GaussianCollage::sample, py::arg("count"), py::arg("method") = "heun", py::arg("steps") = 25,
             py::arg("seed") = 0, py::arg("eta") = 0.0, py::arg("rho") = 7.0, py::call_guard<py::gil_scoped_release>())
        .def("bethe_covariance", &GaussianCollage::bethe_covariance, py::arg("sigma") = 0.0)
        .def_property_readonly("rounds", &GaussianCollage::rounds)
        .def_property_readonly("node_evaluations", &GaussianCollage::node_evaluations);

    py::class_<LinearOperator>(m, "LinearOperator")
        .def_static("mask", &LinearOperator::mask, py::arg("in_dim"), py::arg("keep"))
        .def_static("boxdown", &LinearOperator::boxdown, py::arg("in_dim"), py::arg("block"))
        .def_property_readonly("in_dim", &LinearOperator::in_dim)
        .def_property_readonly("out_dim", &LinearOperator::out_dim)
        .def("apply", &LinearOperator::apply)
        .def("apply_transpose", &LinearOperator::apply_transpose)
        .def("apply_pinv", &LinearOperator::apply_pinv)
        .def("project", &LinearOperator::project, py::arg("u"), py::arg("y"));
    m.def("slerp", &slerp, py::arg("a"), py::arg("b"), py::arg("tau"));

    m.def("frechet_gaussian",
          [](const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b, const Matrix& cov_b) {
              return frechet_gaussian(GaussianFit{mean_a, cov_a, 0}, GaussianFit{mean_b, cov_b, 0});
          },
          py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));
    m.def("fit_gaussian",
          [](const RowMatrix& samples) {
              const auto fit = fit_gaussian(unstack(samples));
              return py::make_tuple(fit.mean, fit.covariance);
          },
          py::arg("samples"));
    m.def("fd_plus",
          [](const RowMatrix& long_samples, const RowMatrix& reference, std::size_t crop_len, std::uint64_t seed) {
              return fd_plus(unstack(long_samples), unstack(reference), crop_len, seed).value;
          },
          py::arg("long_samples"), py::arg("reference"), py::arg("crop_len"), py::arg("seed") = 0);
    m.def("seam_statistic",
          [](const RowMatrix& samples, const std::vector<std::size_t>& boundaries) {
              return seam_statistic(unstack(samples), boundaries).value;
          },
          py::arg("samples"), py::arg("boundaries"));
    m.def("kendall_tau", [](const std::vector<double>& v) { return kendall_tau(v); }, py::arg("values"));
}
