#include "config.hpp"

#include <fstream>
#include <sstream>

namespace dc::cli {

namespace {

using Json = nlohmann::ordered_json;

// Typed field access with the dotted path in every error.
class Section {
public:
    Section(const Json& node, std::string path) : node_(node), path_(std::move(path))
    {
        if (!node_.is_object()) {
            fail("expected an object");
        }
    }

    bool has(const char* key) const { return node_.contains(key); }

    [[noreturn]] void fail(const std::string& what) const
    {
        throw ConfigError("config field '" + (path_.empty() ? std::string("<root>") : path_) + "': " + what);
    }

    std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    Section section(const char* key) const { return Section(at(key), child_path(key)); }

    const Json& at(const char* key) const
    {
        if (!node_.contains(key)) {
            throw ConfigError("config field '" + child_path(key) + "': missing");
        }
        return node_.at(key);
    }

    std::string str(const char* key, std::optional<std::string> fallback = std::nullopt) const
    {
        if (!has(key)) {
            return require(key, fallback);
        }
        const auto& v = node_.at(key);
        if (!v.is_string()) {
            field_fail(key, "expected a string");
        }
        return v.get<std::string>();
    }

    double num(const char* key, std::optional<double> fallback = std::nullopt) const
    {
        if (!has(key)) {
            return require(key, fallback);
        }
        const auto& v = node_.at(key);
        if (!v.is_number()) {
            field_fail(key, "expected a number");
        }
        return v.get<double>();
    }

    std::size_t count(const char* key, std::optional<std::size_t> fallback = std::nullopt) const
    {
        if (!has(key)) {
            return require(key, fallback);
        }
        const auto& v = node_.at(key);
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
            field_fail(key, "expected a non-negative integer");
        }
        return v.get<std::size_t>();
    }

    bool flag(const char* key, bool fallback) const
    {
        if (!has(key)) {
            return fallback;
        }
        const auto& v = node_.at(key);
        if (!v.is_boolean()) {
            field_fail(key, "expected true or false");
        }
        return v.get<bool>();
    }

    std::vector<std::size_t> counts(const char* key, std::vector<std::size_t> fallback) const
    {
        if (!has(key)) {
            return fallback;
        }
        return count_list(node_.at(key), child_path(key));
    }

    Vector vector(const char* key) const { return to_vector(at(key), child_path(key)); }

    static std::vector<std::size_t> count_list(const Json& v, const std::string& path)
    {
        if (!v.is_array()) {
            throw ConfigError("config field '" + path + "': expected an array of integers");
        }
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (!v[k].is_number_integer() || v[k].get<std::int64_t>() < 0) {
                throw ConfigError("config field '" + path + "[" + std::to_string(k)
                                  + "]': expected a non-negative integer");
            }
            out.push_back(v[k].get<std::size_t>());
        }
        return out;
    }

    static Vector to_vector(const Json& v, const std::string& path)
    {
        if (!v.is_array()) {
            throw ConfigError("config field '" + path + "': expected an array of numbers");
        }
        Vector out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (!v[k].is_number()) {
                throw ConfigError("config field '" + path + "[" + std::to_string(k) + "]': expected a number");
            }
            out(static_cast<Eigen::Index>(k)) = v[k].get<double>();
        }
        return out;
    }

    const Json& json() const noexcept { return node_; }
    const std::string& path() const noexcept { return path_; }

private:
    template <typename T>
    T require(const char* key, const std::optional<T>& fallback) const
    {
        if (!fallback) {
            throw ConfigError("config field '" + child_path(key) + "': missing");
        }
        return *fallback;
    }

    [[noreturn]] void field_fail(const char* key, const std::string& what) const
    {
        throw ConfigError("config field '" + child_path(key) + "': " + what);
    }

    const Json& node_;
    std::string path_;
};

GraphSpec parse_graph(const Section& s)
{
    GraphSpec g;
    g.kind = s.str("kind");
    if (g.kind == "chain" || g.kind == "cycle") {
        g.factors = s.count("factors");
        g.factor_len = s.count("factor_len");
        g.overlap = s.count("overlap");
    } else if (g.kind == "grid") {
        g.rows = s.count("rows");
        g.cols = s.count("cols");
        g.patch = s.count("patch");
        g.overlap = s.count("overlap");
    } else if (g.kind == "cubemap") {
        g.face_dim = s.count("face_dim");
    } else if (g.kind == "custom") {
        g.layout.total_dim = s.count("total_dim");
        g.layout.shape = s.counts("shape", {g.layout.total_dim});
        const auto& fs = s.at("factors");
        const auto& vs = s.at("variables");
        if (!fs.is_array() || !vs.is_array()) {
            s.fail("factors and variables must be arrays of coordinate lists");
        }
        for (std::size_t j = 0; j < fs.size(); ++j) {
            g.custom_factors.push_back(Section::count_list(fs[j], s.child_path("factors") + "[" + std::to_string(j) + "]"));
        }
        for (std::size_t i = 0; i < vs.size(); ++i) {
            g.custom_variables.push_back(
                Section::count_list(vs[i], s.child_path("variables") + "[" + std::to_string(i) + "]"));
        }
    } else {
        s.fail("unknown graph kind '" + g.kind + "' (chain, cycle, grid, cubemap, custom)");
    }
    return g;
}

NoiseSchedule parse_schedule(const Section& s)
{
    try {
        const auto kind = schedule_kind_from_string(s.str("kind", std::string("linear-ve")));
        return NoiseSchedule(kind, s.num("sigma_min", 0.01), s.num("sigma_max", 20.0));
    } catch (const InvalidArgument& e) {
        s.fail(e.what());
    }
}

DataSpec parse_data(const Section& s)
{
    DataSpec d;
    d.kind = s.str("kind", std::string("ou"));
    if (d.kind != "ou" && d.kind != "grid" && d.kind != "ring" && d.kind != "random-factor") {
        s.fail("unknown data kind '" + d.kind + "' (ou, grid, ring, random-factor)");
    }
    d.length = s.num("length", 4.0);
    d.scale = s.num("scale", 1.0);
    d.seed = s.count("seed", 0);
    d.coupling = s.num("coupling", 1.0);
    return d;
}

ModelsSpec parse_models(const Section& s)
{
    ModelsSpec m;
    m.kind = s.str("kind", std::string("analytic"));
    if (m.kind == "checkpoints") {
        m.dir = s.str("dir");
    } else if (m.kind == "shared") {
        m.checkpoint = s.str("checkpoint");
    } else if (m.kind != "analytic") {
        s.fail("unknown models kind '" + m.kind + "' (analytic, checkpoints, shared)");
    }
    if (s.has("conditions")) {
        const auto c = s.section("conditions");
        for (const auto& [key, value] : c.json().items()) {
            NodeRef node;
            try {
                node = node_ref_from_string(key);
            } catch (const InvalidArgument& e) {
                c.fail(e.what());
            }
            m.conditions[node] = Section::to_vector(value, c.child_path(key));
        }
    }
    if (s.has("slerp")) {
        const auto sl = s.section("slerp");
        m.slerp = std::pair{sl.vector("a"), sl.vector("b")};
    }
    return m;
}

TrainSpec parse_train(const Section& s)
{
    TrainSpec t;
    t.mode = s.str("mode", t.mode);
    if (t.mode != "per-node" && t.mode != "shift-invariant") {
        s.fail("unknown training mode '" + t.mode + "' (per-node, shift-invariant)");
    }
    t.hidden = s.counts("hidden", t.hidden);
    t.samples = s.count("samples", t.samples);
    t.dsm.iterations = s.count("iterations", t.dsm.iterations);
    t.dsm.batch_size = s.count("batch_size", t.dsm.batch_size);
    t.dsm.learning_rate = s.num("learning_rate", t.dsm.learning_rate);
    t.dsm.momentum = s.num("momentum", t.dsm.momentum);
    t.dsm.final_lr_fraction = s.num("final_lr_fraction", t.dsm.final_lr_fraction);
    t.dsm.sigma_lo = s.num("sigma_lo", 0.0);
    t.dsm.sigma_hi = s.num("sigma_hi", 0.0);
    t.dsm.log_every = s.count("log_every", 50);
    t.dsm.crop_probability = s.num("crop_probability", t.dsm.crop_probability);
    return t;
}

SamplerSpec parse_sampler(const Section& s)
{
    SamplerSpec out;
    try {
        out.method = sampler_method_from_string(s.str("method", std::string("heun")));
    } catch (const InvalidArgument& e) {
        s.fail(e.what());
    }
    out.steps = s.count("steps", out.steps);
    out.rho = s.num("rho", out.rho);
    out.eta = s.num("eta", out.method == SamplerMethod::EulerMaruyama ? 1.0 : 0.0);
    out.count = s.count("count", out.count);
    out.final_denoise = s.flag("final_denoise", true);
    return out;
}

ConditioningSpec parse_conditioning(const Section& s)
{
    ConditioningSpec c;
    try {
        c.guidance.method = guidance_method_from_string(s.str("method", std::string("replacement")));
        c.guidance.gradient_mode = gradient_mode_from_string(s.str("gradient_mode", std::string("auto")));
        c.guidance.lambda_schedule = lambda_schedule_from_string(s.str("lambda_schedule", std::string("scaled")));
    } catch (const InvalidArgument& e) {
        s.fail(e.what());
    }
    c.guidance.lambda = s.num("lambda", 1.0);
    if (c.guidance.method == GuidanceMethod::Reconstruction && !(c.guidance.lambda > 0.0)) {
        s.fail("lambda must be > 0 for reconstruction");
    }
    const auto op = s.section("operator");
    c.op_kind = op.str("kind");
    if (c.op_kind == "mask") {
        c.keep = op.counts("keep", {});
    } else if (c.op_kind == "boxdown") {
        c.block = op.count("block");
    } else {
        op.fail("unknown operator kind '" + c.op_kind + "' (mask, boxdown)");
    }
    if (s.has("y")) {
        c.y = s.vector("y");
    } else {
        c.observations = s.str("observations");
    }
    return c;
}

EvalSpec parse_eval(const Section& s)
{
    EvalSpec e;
    e.crop_len = s.count("crop_len", 0);
    e.reference_count = s.count("reference_count", e.reference_count);
    e.seam_boundaries = s.counts("seam_boundaries", {});
    return e;
}

BaselineSpec parse_baseline(const Section& s)
{
    BaselineSpec b;
    if (s.has("methods")) {
        b.methods.clear();
        const auto& list = s.at("methods");
        if (!list.is_array()) {
            s.fail("methods must be an array");
        }
        for (const auto& m : list) {
            try {
                b.methods.push_back(guidance_method_from_string(m.is_string() ? m.get<std::string>() : ""));
            } catch (const InvalidArgument& e) {
                s.fail(e.what());
            }
        }
    }
    b.count = s.count("count", b.count);
    return b;
}

BenchSpec parse_bench(const Section& s)
{
    BenchSpec b;
    b.lengths = s.counts("lengths", b.lengths);
    b.workers = s.counts("workers", b.workers);
    b.cost_ms = s.num("cost_ms", b.cost_ms);
    b.mode = s.str("mode", b.mode);
    if (b.mode != "spin" && b.mode != "sleep") {
        s.fail("mode must be 'spin' or 'sleep'");
    }
    b.repeats = s.count("repeats", b.repeats);
    b.factor_len = s.count("factor_len", b.factor_len);
    b.overlap = s.count("overlap", b.overlap);
    return b;
}

} // namespace

ExperimentConfig parse_config(const nlohmann::ordered_json& doc, const std::string& source)
{
    const Section root(doc, "");
    ExperimentConfig cfg;
    cfg.source = source;
    cfg.raw = doc;
    cfg.seed = root.count("seed", 0);
    cfg.workers = root.count("workers", 1);
    cfg.output = root.str("output", std::string("out"));
    cfg.graph = parse_graph(root.section("graph"));
    if (root.has("schedule")) {
        cfg.schedule = parse_schedule(root.section("schedule"));
    }
    if (root.has("data")) {
        cfg.data = parse_data(root.section("data"));
    }
    if (root.has("models")) {
        cfg.models = parse_models(root.section("models"));
    }
    if (root.has("train")) {
        cfg.train = parse_train(root.section("train"));
    }
    if (root.has("sampler")) {
        cfg.sampler = parse_sampler(root.section("sampler"));
    }
    if (root.has("conditioning")) {
        cfg.conditioning = parse_conditioning(root.section("conditioning"));
    }
    if (root.has("eval")) {
        cfg.eval = parse_eval(root.section("eval"));
    }
    if (root.has("baseline")) {
        cfg.baseline = parse_baseline(root.section("baseline"));
    }
    if (root.has("bench")) {
        cfg.bench = parse_bench(root.section("bench"));
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open config file '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // byte offset -> line/column
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error");
    }
    return parse_config(doc, path);
}

FactorGraph build_graph(const GraphSpec& spec)
{
    if (spec.kind == "chain") {
        return build_chain(spec.factors, spec.factor_len, spec.overlap);
    }
    if (spec.kind == "cycle") {
        return build_cycle(spec.factors, spec.factor_len, spec.overlap);
    }
    if (spec.kind == "grid") {
        return build_grid(spec.rows, spec.cols, spec.patch, spec.overlap);
    }
    if (spec.kind == "cubemap") {
        return build_cubemap(spec.face_dim);
    }
    return FactorGraph(spec.layout, spec.custom_factors, spec.custom_variables);
}

JointGaussian build_testbed(const DataSpec& data, const FactorGraph& graph)
{
    const std::size_t n = graph.total_dim();
    if (data.kind == "random-factor") {
        return random_factor_gaussian(graph, data.seed, data.coupling);
    }
    JointGaussian j;
    j.mean = Vector::Zero(static_cast<Eigen::Index>(n));
    if (data.kind == "ou") {
        j.covariance = ou_covariance(n, data.length, data.scale);
    } else if (data.kind == "ring") {
        j.covariance = ring_covariance(n, data.length, data.scale);
    } else {
        const auto& shape = graph.layout().shape;
        if (shape.size() != 2) {
            throw ConfigError("config field 'data.kind': 'grid' data needs a 2D graph layout");
        }
        j.covariance = grid_covariance(shape[0], shape[1], data.length, data.scale);
    }
    j.precision = j.covariance.inverse();
    return j;
}

std::string checkpoint_name(NodeRef node)
{
    return std::string(node.kind == NodeKind::Factor ? "factor_" : "variable_") + std::to_string(node.index) + ".dcm";
}

} // namespace dc::cli
