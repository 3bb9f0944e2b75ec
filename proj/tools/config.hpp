#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffcollage/conditioning.hpp"
#include "diffcollage/graph.hpp"
#include "diffcollage/sampler.hpp"
#include "diffcollage/schedule.hpp"
#include "diffcollage/scoremodel.hpp"
#include "diffcollage/testbed.hpp"

namespace dc::cli {

/// Config problems (exit code 2). Message carries the field path.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct GraphSpec {
    std::string kind;  // chain | cycle | grid | cubemap | custom
    std::size_t factors = 0;
    std::size_t factor_len = 0;
    std::size_t overlap = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch = 0;
    std::size_t face_dim = 0;
    JointLayout layout;
    std::vector<CoordSet> custom_factors;
    std::vector<CoordSet> custom_variables;
};

/// Ground-truth joint Gaussian used for analytic models, training data and references.
struct DataSpec {
    std::string kind = "ou";  // ou | grid | ring | random-factor
    double length = 4.0;
    double scale = 1.0;
    std::uint64_t seed = 0;
    double coupling = 1.0;
};

struct ModelsSpec {
    std::string kind = "analytic";  // analytic | checkpoints | shared
    std::string dir;                // checkpoints: <dir>/<node>.dcm
    std::string checkpoint;         // shared
    std::map<NodeRef, Vector> conditions;
    std::optional<std::pair<Vector, Vector>> slerp;  // factor j: slerp(a, b, j / (m - 1))
};

struct TrainSpec {
    std::string mode = "per-node";  // per-node | shift-invariant
    std::vector<std::size_t> hidden{32, 32};
    std::size_t samples = 4000;
    DsmConfig dsm;
};

struct SamplerSpec {
    SamplerMethod method = SamplerMethod::Heun;
    std::size_t steps = 25;
    double rho = 7.0;
    double eta = 0.0;
    std::size_t count = 256;
    bool final_denoise = true;
};

struct ConditioningSpec {
    GuidanceConfig guidance;
    std::string op_kind = "mask";
    std::vector<std::size_t> keep;
    std::size_t block = 1;
    Vector y;
    std::string observations;  // CSV path, single row; used when y is empty
};

struct EvalSpec {
    std::size_t crop_len = 0;  // 0: factor length
    std::size_t reference_count = 4000;
    std::vector<std::size_t> seam_boundaries;  // empty: derived from the graph
};

struct BaselineSpec {
    std::vector<GuidanceMethod> methods{GuidanceMethod::Replacement};
    std::size_t count = 256;
};

struct BenchSpec {
    std::vector<std::size_t> lengths{2, 4, 8, 16};
    std::vector<std::size_t> workers{1, 2, 4, 8};
    double cost_ms = 5.0;
    std::string mode = "spin";
    std::size_t repeats = 3;
    std::size_t factor_len = 8;
    std::size_t overlap = 4;
};

struct ExperimentConfig {
    std::string source;  // path the config came from
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string output = "out";
    GraphSpec graph;
    NoiseSchedule schedule = NoiseSchedule::linear(0.01, 20.0);
    DataSpec data;
    ModelsSpec models;
    TrainSpec train;
    SamplerSpec sampler;
    std::optional<ConditioningSpec> conditioning;
    EvalSpec eval;
    BaselineSpec baseline;
    BenchSpec bench;
    nlohmann::ordered_json raw;
};

/// Parses a config file. JSON syntax errors report line and column; field
/// errors report the dotted path.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const nlohmann::ordered_json& doc, const std::string& source);

FactorGraph build_graph(const GraphSpec& spec);
JointGaussian build_testbed(const DataSpec& data, const FactorGraph& graph);

/// Checkpoint file for a node inside a checkpoint directory, e.g. "factor_0.dcm".
std::string checkpoint_name(NodeRef node);

} // namespace dc::cli
