#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "diffcollage/collage.hpp"
#include "diffcollage/eval.hpp"
#include "diffcollage/parallel.hpp"
#include "diffcollage/rng.hpp"

#include "io.hpp"

namespace dc::cli {

namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

// Stream tags for derive_seed.
constexpr std::uint64_t kDataStream = 0x64617461;
constexpr std::uint64_t kEvalStream = 0x6576616c;
constexpr std::uint64_t kNaiveStream = 0x6e616976;
constexpr std::uint64_t kArStream = 0x61720000;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string join(const std::string& dir, const std::string& name)
{
    return (std::filesystem::path(dir) / name).string();
}

FactorGraph checked_graph(const ExperimentConfig& cfg)
{
    FactorGraph g;
    try {
        g = build_graph(cfg.graph);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config field 'graph': ") + e.what());
    }
    const auto report = validate(g);
    if (!report.empty()) {
        throw ValidationFailure("graph validation failed:\n" + format_report(report));
    }
    return g;
}

bool is_1d(const FactorGraph& g)
{
    return g.layout().shape.size() <= 1;
}

bool is_chain(const ExperimentConfig& cfg)
{
    return cfg.graph.kind == "chain" || (cfg.graph.kind == "grid" && (cfg.graph.rows == 1 || cfg.graph.cols == 1));
}

std::size_t factor_width(const FactorGraph& g)
{
    return g.factors().front().size();
}

// Start offset of factor j along a 1D chain.
std::size_t chain_offset(const FactorGraph& g, std::size_t j)
{
    return g.factors()[j].front();
}

// Interior starts and ends of every chain factor.
std::vector<std::size_t> chain_seams(const FactorGraph& g)
{
    std::vector<std::size_t> b;
    const std::size_t n = g.total_dim();
    for (const auto& f : g.factors()) {
        for (std::size_t pos : {f.front(), f.back() + 1}) {
            if (pos > 0 && pos < n) {
                b.push_back(pos);
            }
        }
    }
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
}

std::vector<std::size_t> block_seams(std::size_t n, std::size_t width)
{
    std::vector<std::size_t> b;
    for (std::size_t pos = width; pos < n; pos += width) {
        b.push_back(pos);
    }
    return b;
}

std::vector<NodeBinding> resolve_bindings(const ExperimentConfig& cfg, const FactorGraph& g, const JointGaussian& truth)
{
    std::vector<NodeBinding> bindings;
    const auto& m = cfg.models;
    if (m.kind == "analytic") {
        bindings = bind_gaussian_marginals(g, marginals_from_joint(g, truth.mean, truth.covariance), cfg.schedule);
    } else if (m.kind == "shared") {
        if (!file_exists(m.checkpoint)) {
            throw ConfigError("config field 'models.checkpoint': file not found: " + m.checkpoint);
        }
        bindings = bind_shared_model(g, std::make_shared<MlpScoreModel>(read_checkpoint_file(m.checkpoint)));
    } else {
        for (const auto& node : bound_nodes(g)) {
            const std::string path = join(m.dir, checkpoint_name(node));
            if (!file_exists(path)) {
                throw ConfigError("config field 'models.dir': missing checkpoint for " + to_string(node) + ": " + path);
            }
            bindings.push_back({node, std::make_shared<MlpScoreModel>(read_checkpoint_file(path)), {}});
        }
    }
    const std::size_t nf = g.num_factors();
    for (auto& b : bindings) {
        if (m.slerp && b.node.kind == NodeKind::Factor) {
            const double tau = nf > 1 ? static_cast<double>(b.node.index) / static_cast<double>(nf - 1) : 0.0;
            b.condition = slerp(m.slerp->first, m.slerp->second, tau);
        }
        if (const auto it = m.conditions.find(b.node); it != m.conditions.end()) {
            b.condition = it->second;
        }
    }
    return bindings;
}

// Checks that every file the config references exists, without loading anything heavy.
void check_references(const ExperimentConfig& cfg, const FactorGraph& g)
{
    const auto& m = cfg.models;
    if (m.kind == "shared" && !file_exists(m.checkpoint)) {
        throw ConfigError("config field 'models.checkpoint': file not found: " + m.checkpoint);
    }
    if (m.kind == "checkpoints") {
        for (const auto& node : bound_nodes(g)) {
            const std::string path = join(m.dir, checkpoint_name(node));
            if (!file_exists(path)) {
                throw ConfigError("config field 'models.dir': missing checkpoint for " + to_string(node) + ": " + path);
            }
        }
    }
    for (const auto& [node, cond] : m.conditions) {
        if ((node.kind == NodeKind::Factor && node.index >= g.num_factors())
            || (node.kind == NodeKind::Variable && node.index >= g.num_variables())) {
            throw ConfigError("config field 'models.conditions': " + to_string(node) + " is not in the graph");
        }
    }
    if (cfg.conditioning && cfg.conditioning->y.size() == 0 && !file_exists(cfg.conditioning->observations)) {
        throw ConfigError("config field 'conditioning.observations': file not found: " + cfg.conditioning->observations);
    }
}

LinearOperator build_operator(const ConditioningSpec& c, std::size_t dim)
{
    try {
        if (c.op_kind == "mask") {
            return LinearOperator::mask(dim, c.keep);
        }
        return LinearOperator::boxdown(dim, c.block);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config field 'conditioning.operator': ") + e.what());
    }
}

Vector observations(const ConditioningSpec& c)
{
    if (c.y.size() != 0) {
        return c.y;
    }
    return read_samples_csv(c.observations).front();
}

SamplerConfig sampler_config(const ExperimentConfig& cfg, std::uint64_t seed)
{
    SamplerConfig s;
    try {
        s.grid = karras_grid(cfg.schedule, static_cast<int>(cfg.sampler.steps), cfg.sampler.rho);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config field 'sampler': ") + e.what());
    }
    s.method = cfg.sampler.method;
    s.eta = cfg.sampler.eta;
    s.seed = seed;
    s.final_denoise = cfg.sampler.final_denoise;
    return s;
}

std::size_t default_crop(const ExperimentConfig& cfg, const FactorGraph& g, std::optional<std::size_t> override_len)
{
    if (override_len) {
        return *override_len;
    }
    if (cfg.eval.crop_len > 0) {
        return cfg.eval.crop_len;
    }
    return std::min(factor_width(g), g.total_dim());
}

Json fit_json(const GaussianFit& fit)
{
    Json j;
    j["mean"] = std::vector<double>(fit.mean.data(), fit.mean.data() + fit.mean.size());
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(fit.covariance.rows()));
    for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r) {
        for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c) {
            rows[static_cast<std::size_t>(r)].push_back(fit.covariance(r, c));
        }
    }
    j["covariance"] = rows;
    return j;
}

// Metrics shared by sample and eval so that eval reproduces sample's numbers.
std::vector<MetricReport> content_metrics(const ExperimentConfig& cfg, const FactorGraph& g, const JointGaussian& truth,
                                          const std::vector<Vector>& samples, std::uint64_t seed,
                                          std::optional<std::size_t> crop_override,
                                          const std::vector<std::size_t>& seams, bool with_oracle)
{
    std::vector<MetricReport> reports;
    if (samples.size() >= 2 && with_oracle) {
        const auto fit = fit_gaussian(samples);
        MetricReport mean_err{"oracle_mean_error", (fit.mean - truth.mean).cwiseAbs().maxCoeff()};
        mean_err.details["norm"] = "max-abs";
        reports.push_back(mean_err);
        MetricReport cov_err{"oracle_cov_error", (fit.covariance - truth.covariance).norm() / truth.covariance.norm()};
        cov_err.details["norm"] = "relative-frobenius";
        reports.push_back(cov_err);
        if (cfg.models.kind == "analytic") {
            const auto bethe = bethe_gaussian(g, marginals_from_joint(g, truth.mean, truth.covariance), 0.0);
            if (bethe.proper) {
                const Matrix bc = bethe.covariance();
                MetricReport b{"bethe_cov_error", (fit.covariance - bc).norm() / bc.norm()};
                b.details["bethe_vs_truth"] = (bc - truth.covariance).norm() / truth.covariance.norm();
                reports.push_back(b);
            }
        }
    }
    if (is_1d(g) && samples.size() >= 2) {
        const std::size_t crop = default_crop(cfg, g, crop_override);
        const std::size_t n = g.total_dim();
        const Vector mean = truth.mean;
        const Matrix cov = truth.covariance;
        const ReferenceSampler reference = [mean, cov, crop](std::size_t count, std::uint64_t s) {
            const auto joint = sample_gaussian(mean, cov, count, s);
            return random_crops(joint, crop, derive_seed(s, {1}));
        };
        reports.push_back(fd_plus(samples, reference, crop, cfg.eval.reference_count, derive_seed(seed, {kEvalStream})));
        std::vector<std::size_t> b = cfg.eval.seam_boundaries.empty() ? seams : cfg.eval.seam_boundaries;
        std::erase_if(b, [n](std::size_t x) { return x == 0 || x >= n; });
        if (!b.empty()) {
            reports.push_back(seam_statistic(samples, b));
        }
    }
    return reports;
}

std::vector<std::vector<Vector>> segments_of(const std::vector<Vector>& samples, const std::vector<std::size_t>& starts,
                                              std::size_t width)
{
    std::vector<std::vector<Vector>> out(starts.size());
    for (const auto& x : samples) {
        for (std::size_t j = 0; j < starts.size(); ++j) {
            out[j].push_back(x.segment(static_cast<Eigen::Index>(starts[j]), static_cast<Eigen::Index>(width)));
        }
    }
    return out;
}

void append_drift(std::vector<MetricReport>& reports, const std::vector<std::vector<Vector>>& blocks)
{
    if (blocks.size() < 2 || blocks.front().size() < 2) {
        return;
    }
    const auto p = drift_profile(blocks);
    MetricReport r = p.summary;
    r.details["variances"] = p.variances;
    r.details["means"] = p.means;
    reports.push_back(r);
}

} // namespace

int cmd_validate(const RunContext& ctx)
{
    const auto& cfg = ctx.config;
    const auto g = checked_graph(cfg);
    check_references(cfg, g);
    if (cfg.conditioning) {
        const auto op = build_operator(*cfg.conditioning, g.total_dim());
        if (cfg.conditioning->y.size() != 0 && static_cast<std::size_t>(cfg.conditioning->y.size()) != op.out_dim()) {
            throw ConfigError("config field 'conditioning.y': expected " + std::to_string(op.out_dim()) + " values, got "
                              + std::to_string(cfg.conditioning->y.size()));
        }
    }
    std::cout << "OK " << cfg.graph.kind << ": " << g.num_factors() << " factors, " << g.num_variables()
              << " variables, " << g.total_dim() << " coordinates, " << bound_nodes(g).size() << " bound nodes, "
              << (is_acyclic(g) ? "acyclic" : "cyclic") << "\n";
    return 0;
}

int cmd_train(const RunContext& ctx)
{
    const auto& cfg = ctx.config;
    const auto g = checked_graph(cfg);
    const auto truth = build_testbed(cfg.data, g);
    const auto joint = sample_gaussian(truth.mean, truth.covariance, cfg.train.samples, derive_seed(ctx.seed, {kDataStream}));
    const std::string ckpt_dir = join(ctx.out, "checkpoints");
    ensure_directory(ckpt_dir);

    DsmConfig dsm = cfg.train.dsm;
    dsm.seed = ctx.seed;
    WorkerPool pool(ctx.workers);
    const auto start = Clock::now();
    Json summary;
    summary["command"] = "train";
    summary["mode"] = cfg.train.mode;
    summary["seed"] = ctx.seed;

    std::vector<std::string> columns;
    std::vector<TrainingLog> logs;
    if (cfg.train.mode == "shift-invariant") {
        if (!is_chain(cfg)) {
            throw ConfigError("config field 'train.mode': shift-invariant training needs a chain graph");
        }
        Dataset windows;
        for (const auto& x : joint) {
            for (const auto& f : g.factors()) {
                windows.samples.push_back(gather(x, f));
            }
        }
        TrainingLog log;
        const auto model = train_shift_invariant(windows, cfg.train.hidden, cfg.schedule, dsm, &log);
        write_checkpoint_file(join(ckpt_dir, "shared.dcm"), model);
        columns.push_back("shared");
        summary["checkpoints"] = Json::array({"checkpoints/shared.dcm"});
        summary["cropped_steps"] = log.cropped_steps;
        logs.push_back(std::move(log));
    } else {
        std::map<NodeRef, Dataset> datasets;
        for (const auto& node : bound_nodes(g)) {
            Dataset d;
            for (const auto& x : joint) {
                d.samples.push_back(gather(x, g.coords(node)));
            }
            datasets[node] = std::move(d);
        }
        MlpArch arch;
        arch.hidden = cfg.train.hidden;
        std::map<NodeRef, TrainingLog> node_logs;
        const auto models = train_collage(datasets, g, arch, cfg.schedule, dsm, &pool, &node_logs);
        Json files = Json::array();
        for (const auto& [node, model] : models) {
            write_checkpoint_file(join(ckpt_dir, checkpoint_name(node)), *model);
            files.push_back("checkpoints/" + checkpoint_name(node));
            columns.push_back(to_string(node));
            logs.push_back(node_logs[node]);
        }
        summary["checkpoints"] = files;
    }

    std::ostringstream csv;
    csv.precision(17);
    csv << "iteration";
    for (const auto& c : columns) {
        csv << ',' << c;
    }
    csv << '\n';
    const std::size_t rows = logs.empty() ? 0 : logs.front().iterations.size();
    Json final_loss;
    for (std::size_t r = 0; r < rows; ++r) {
        csv << logs.front().iterations[r];
        for (const auto& log : logs) {
            csv << ',' << log.losses[r];
        }
        csv << '\n';
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (!logs[c].losses.empty()) {
            final_loss[columns[c]] = logs[c].losses.back();
        }
    }
    write_text(join(ctx.out, "loss.csv"), csv.str());
    summary["final_loss"] = final_loss;
    summary["timing"] = {{"train_seconds", seconds_since(start)}, {"workers", ctx.workers}};
    write_json(join(ctx.out, "train.json"), summary);
    std::cout << "trained " << columns.size() << " model(s) into " << ckpt_dir << "\n";
    return 0;
}

int cmd_sample(const RunContext& ctx)
{
    const auto& cfg = ctx.config;
    const auto g = checked_graph(cfg);
    check_references(cfg, g);
    const auto truth = build_testbed(cfg.data, g);
    WorkerPool pool(ctx.workers);
    ComposedScore composed(g, resolve_bindings(cfg, g, truth), &pool);

    std::optional<LinearOperator> op;
    std::optional<GuidedScore> guided;
    Vector y;
    if (cfg.conditioning) {
        op = build_operator(*cfg.conditioning, g.total_dim());
        y = observations(*cfg.conditioning);
        if (static_cast<std::size_t>(y.size()) != op->out_dim()) {
            throw ConfigError("config field 'conditioning': observation has " + std::to_string(y.size())
                              + " values, operator expects " + std::to_string(op->out_dim()));
        }
        guided.emplace(composed, *op, y, cfg.conditioning->guidance, cfg.schedule);
    }
    const JointScore& score = guided ? static_cast<const JointScore&>(*guided) : composed;

    const auto scfg = sampler_config(cfg, ctx.seed);
    SamplerStats stats;
    const auto start = Clock::now();
    const auto samples = sample_batch(score, cfg.schedule, scfg, cfg.sampler.count, &pool, &stats);
    const double sample_seconds = seconds_since(start);

    ensure_directory(ctx.out);
    write_samples_csv(join(ctx.out, "samples.csv"), samples);
    const std::string render_dir = join(ctx.out, "renders");
    ensure_directory(render_dir);
    const auto renders = render_samples(render_dir, g.layout(), samples);

    const auto eval_start = Clock::now();
    auto reports = content_metrics(cfg, g, truth, samples, ctx.seed, std::nullopt,
                                   is_chain(cfg) ? chain_seams(g) : std::vector<std::size_t>{}, !cfg.conditioning);
    if (is_chain(cfg)) {
        std::vector<std::size_t> starts;
        for (std::size_t j = 0; j < g.num_factors(); ++j) {
            starts.push_back(chain_offset(g, j));
        }
        append_drift(reports, segments_of(samples, starts, factor_width(g)));
    }
    if (op) {
        double worst = 0.0;
        for (const auto& x : samples) {
            worst = std::max(worst, (op->apply(x) - y).cwiseAbs().maxCoeff());
        }
        reports.push_back({"observation_residual", worst});
    }

    Json doc;
    doc["command"] = "sample";
    doc["seed"] = ctx.seed;
    doc["count"] = samples.size();
    doc["dim"] = g.total_dim();
    doc["sampler"] = {{"method", std::string(to_string(cfg.sampler.method))},
                      {"steps", cfg.sampler.steps},
                      {"eta", cfg.sampler.eta},
                      {"final_denoise", cfg.sampler.final_denoise}};
    doc["counters"] = {{"step_calls", stats.step_calls},
                       {"denoise_calls", stats.denoise_calls},
                       {"rounds", composed.rounds()},
                       {"node_evaluations", composed.node_evaluations()},
                       {"nodes_per_round", bound_nodes(g).size()},
                       {"rounds_per_sample", composed.rounds() / std::max<std::size_t>(1, samples.size())}};
    doc["metrics"] = reports_to_json(reports);
    if (!cfg.conditioning) {
        Json oracle;
        oracle["empirical"] = fit_json(fit_gaussian(samples));
        doc["oracle"] = oracle;
    }
    doc["renders"] = renders;
    doc["timing"] = {{"sample_seconds", sample_seconds},
                     {"eval_seconds", seconds_since(eval_start)},
                     {"workers", ctx.workers}};
    write_json(join(ctx.out, "metrics.json"), doc);
    write_text(join(ctx.out, "metrics.csv"), reports_to_csv(reports));
    std::cout << "sampled " << samples.size() << " x " << g.total_dim() << " into " << ctx.out << "\n";
    for (const auto& r : reports) {
        std::cout << "  " << r.name << " = " << r.value << "\n";
    }
    return 0;
}

int cmd_baseline(const RunContext& ctx)
{
    const auto& cfg = ctx.config;
    if (!is_chain(cfg) || cfg.graph.kind != "chain") {
        throw ConfigError("config field 'graph.kind': baseline needs a chain graph");
    }
    const auto g = checked_graph(cfg);
    check_references(cfg, g);
    const auto truth = build_testbed(cfg.data, g);
    const auto bindings = resolve_bindings(cfg, g, truth);
    const std::size_t f = cfg.graph.factor_len;
    const std::size_t v = cfg.graph.overlap;
    const std::size_t m = cfg.graph.factors;
    const std::size_t n = g.total_dim();
    const std::size_t count = cfg.baseline.count;
    ScoreModelPtr block_model;
    Vector block_condition;
    for (const auto& b : bindings) {
        if (b.node == NodeRef::factor(0)) {
            block_model = b.model;
            block_condition = b.condition;
        }
    }
    WorkerPool pool(ctx.workers);
    const auto scfg = sampler_config(cfg, ctx.seed);
    const int k = static_cast<int>(cfg.sampler.steps);
    const std::size_t calls_per_run = cfg.sampler.method == SamplerMethod::Heun ? 2 * static_cast<std::size_t>(k) - 1
                                                                              : static_cast<std::size_t>(k);

    Json doc;
    doc["command"] = "baseline";
    doc["seed"] = ctx.seed;
    doc["count"] = count;
    doc["geometry"] = {{"factors", m}, {"factor_len", f}, {"overlap", v}, {"length", n}};
    Json methods = Json::object();
    std::vector<MetricReport> all_reports;
    Json timing;

    std::vector<std::size_t> factor_starts;
    for (std::size_t j = 0; j < m; ++j) {
        factor_starts.push_back(chain_offset(g, j));
    }
    auto record = [&](const std::string& name, const std::vector<Vector>& samples, const std::vector<std::size_t>& seams,
                      const std::vector<std::vector<Vector>>& blocks, Json counters) {
        auto reports = content_metrics(cfg, g, truth, samples, ctx.seed, std::nullopt, seams, true);
        append_drift(reports, blocks);
        for (auto& r : reports) {
            all_reports.push_back({name + "." + r.name, r.value, r.details});
        }
        methods[name] = {{"metrics", reports_to_json(reports)}, {"counters", counters}};
        write_samples_csv(join(ctx.out, "samples_" + name + ".csv"), samples);
    };
    ensure_directory(ctx.out);

    // DiffCollage
    {
        ComposedScore composed(g, bindings, &pool);
        SamplerStats stats;
        const auto start = Clock::now();
        const auto samples = sample_batch(composed, cfg.schedule, scfg, count, &pool, &stats);
        timing["collage_seconds"] = seconds_since(start);
        record("collage", samples, chain_seams(g), segments_of(samples, factor_starts, f),
               {{"rounds_per_sample", calls_per_run},
                {"node_evaluations_per_round", bound_nodes(g).size()},
                {"rounds", composed.rounds()}});
    }
    // naive concatenation of independent factor-width blocks
    {
        const std::size_t blocks_per = (n + f - 1) / f;
        const ModelScore block_score(block_model, f, block_condition);
        auto ncfg = scfg;
        ncfg.seed = derive_seed(ctx.seed, {kNaiveStream});
        const auto start = Clock::now();
        const auto blocks = sample_batch(block_score, cfg.schedule, ncfg, count * blocks_per, &pool);
        timing["naive_seconds"] = seconds_since(start);
        std::vector<Vector> samples;
        for (std::size_t i = 0; i < count; ++i) {
            Vector joined(static_cast<Eigen::Index>(blocks_per * f));
            for (std::size_t b = 0; b < blocks_per; ++b) {
                joined.segment(static_cast<Eigen::Index>(b * f), static_cast<Eigen::Index>(f)) = blocks[i * blocks_per + b];
            }
            samples.push_back(joined.head(static_cast<Eigen::Index>(n)));
        }
        std::vector<std::size_t> starts;
        for (std::size_t s = 0; s + f <= n; s += f) {
            starts.push_back(s);
        }
        record("naive", samples, block_seams(n, f), segments_of(samples, starts, f),
               {{"parallel_block_calls", calls_per_run}});
    }
    // autoregressive outpainting
    for (const auto method : cfg.baseline.methods) {
        GuidanceConfig guidance = cfg.conditioning ? cfg.conditioning->guidance : GuidanceConfig{};
        guidance.method = method;
        std::vector<OutpaintResult> runs(count);
        const auto start = Clock::now();
        for_each_index(&pool, count, [&](std::size_t i) {
            auto c = scfg;
            c.seed = derive_seed(ctx.seed, {kArStream + static_cast<std::uint64_t>(method), i});
            runs[i] = autoregressive_outpaint(block_model, f, m, v, guidance, cfg.schedule, c);
        });
        const std::string name = "ar_" + std::string(to_string(method));
        timing[name + "_seconds"] = seconds_since(start);
        std::vector<Vector> samples;
        std::vector<std::vector<Vector>> blocks(m);
        for (const auto& r : runs) {
            samples.push_back(r.content);
            for (std::size_t b = 0; b < m; ++b) {
                blocks[b].push_back(r.blocks[b]);
            }
        }
        const std::size_t sequential = runs.front().sequential_calls;
        record(name, samples, chain_seams(g), blocks,
               {{"sequential_calls_per_sample", sequential},
                {"per_block_calls", runs.front().block_calls},
                {"ratio_vs_collage_rounds", static_cast<double>(sequential) / static_cast<double>(calls_per_run)}});
    }
    doc["methods"] = methods;
    doc["timing"] = timing;
    write_json(join(ctx.out, "baseline.json"), doc);
    write_text(join(ctx.out, "baseline.csv"), reports_to_csv(all_reports));
    for (const auto& r : all_reports) {
        std::cout << r.name << " = " << r.value << "\n";
    }
    return 0;
}

int cmd_bench(const RunContext& ctx)
{
    const auto& cfg = ctx.config;
    const auto& b = cfg.bench;
    const auto mode = b.mode == "sleep" ? BusyScoreModel::Mode::Sleep : BusyScoreModel::Mode::Spin;
    const auto cost = std::chrono::microseconds(static_cast<std::int64_t>(b.cost_ms * 1000.0));
    ensure_directory(ctx.out);
    std::ostringstream csv;
    csv << "length,workers,mean_ms,speedup\n";
    char line[128];
    for (std::size_t length : b.lengths) {
        const auto g = build_chain(length, b.factor_len, b.overlap);
        const auto truth = build_testbed(cfg.data, g);
        auto bindings = bind_gaussian_marginals(g, marginals_from_joint(g, truth.mean, truth.covariance), cfg.schedule);
        for (auto& nb : bindings) {
            nb.model = std::make_shared<BusyScoreModel>(nb.model, cost, mode);
        }
        const Vector u = sample_prior(g.total_dim(), cfg.schedule, 1.0, ctx.seed);
        Vector reference;
        double serial_ms = 0.0;
        std::vector<std::size_t> counts = b.workers;
        if (std::find(counts.begin(), counts.end(), 1) == counts.end()) {
            counts.insert(counts.begin(), 1);
        }
        std::sort(counts.begin(), counts.end());
        for (std::size_t w : counts) {
            WorkerPool pool(w);
            const ComposedScore cs(g, bindings, &pool);
            Vector out;
            const auto start = Clock::now();
            for (std::size_t r = 0; r < b.repeats; ++r) {
                out = cs.score(u, 1.0);
            }
            const double ms = 1000.0 * seconds_since(start) / static_cast<double>(std::max<std::size_t>(1, b.repeats));
            if (w == 1) {
                reference = out;
                serial_ms = ms;
            } else if (out != reference) {
                throw NumericError("bench: composed score differs between 1 and " + std::to_string(w) + " workers");
            }
            std::snprintf(line, sizeof line, "%zu,%zu,%.3f,%.3f\n", length, w, ms, serial_ms / ms);
            csv << line;
            std::cout << line;
        }
    }
    write_text(join(ctx.out, "bench.csv"), csv.str());
    return 0;
}

int cmd_eval(const RunContext& ctx, const std::string& samples_path, std::optional<std::size_t> crop_len)
{
    const auto& cfg = ctx.config;
    const auto g = checked_graph(cfg);
    const auto truth = build_testbed(cfg.data, g);
    const auto samples = read_samples_csv(samples_path);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (static_cast<std::size_t>(samples[i].size()) != g.total_dim()) {
            throw IoError(samples_path + ": row " + std::to_string(i + 1) + ": expected " + std::to_string(g.total_dim())
                          + " values, got " + std::to_string(samples[i].size()));
        }
    }
    if (crop_len && (*crop_len == 0 || *crop_len > g.total_dim())) {
        throw ConfigError("--crop-len must lie in [1, " + std::to_string(g.total_dim()) + "]");
    }
    auto reports = content_metrics(cfg, g, truth, samples, ctx.seed, crop_len,
                                   is_chain(cfg) ? chain_seams(g) : std::vector<std::size_t>{}, !cfg.conditioning);
    if (is_chain(cfg)) {
        std::vector<std::size_t> starts;
        for (std::size_t j = 0; j < g.num_factors(); ++j) {
            starts.push_back(chain_offset(g, j));
        }
        append_drift(reports, segments_of(samples, starts, factor_width(g)));
    }
    Json doc;
    doc["command"] = "eval";
    doc["samples"] = samples_path;
    doc["count"] = samples.size();
    doc["metrics"] = reports_to_json(reports);
    ensure_directory(ctx.out);
    write_json(join(ctx.out, "eval.json"), doc);
    write_text(join(ctx.out, "eval.csv"), reports_to_csv(reports));
    for (const auto& r : reports) {
        std::cout << r.name << " = " << r.value << "\n";
    }
    return 0;
}

} // namespace dc::cli
