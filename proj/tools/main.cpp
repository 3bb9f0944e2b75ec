#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "commands.hpp"

namespace {

std::size_t parse_count(const std::string& text, const std::string& what)
{
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != text.size() || v == 0) {
        throw dc::cli::ConfigError(what + ": expected a positive integer, got '" + text + "'");
    }
    return static_cast<std::size_t>(v);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"DiffCollage composition engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> workers_flag;
    app.add_option("--config", config_path, "Experiment config (JSON)")->required();
    app.add_option("--out", out_dir, "Output directory (default: config 'output')");
    app.add_option("--seed", seed, "Global seed (default: config 'seed')");
    app.add_option("--workers", workers_flag, "Worker count (fallback: DC_WORKERS, then config)");

    auto* validate = app.add_subcommand("validate", "Check the config and graph");
    auto* train = app.add_subcommand("train", "Train node score models");
    auto* sample = app.add_subcommand("sample", "Sample with the composed score");
    auto* baseline = app.add_subcommand("baseline", "Compare against naive and autoregressive baselines");
    auto* bench = app.add_subcommand("bench", "Time composed score evaluation across worker counts");
    auto* eval = app.add_subcommand("eval", "Recompute metrics from a samples CSV");
    std::string samples_path;
    std::optional<std::size_t> crop_len;
    eval->add_option("--samples", samples_path, "Samples CSV (default: <out>/samples.csv)");
    eval->add_option("--crop-len", crop_len, "Crop length for FD+");
    for (auto* sub : {validate, train, sample, baseline, bench, eval}) {
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    using namespace dc::cli;
    try {
        RunContext ctx;
        ctx.config = load_config(config_path);
        ctx.out = out_dir.empty() ? ctx.config.output : out_dir;
        ctx.seed = seed.value_or(ctx.config.seed);
        if (workers_flag) {
            ctx.workers = parse_count(*workers_flag, "--workers");
        } else if (const char* env = std::getenv("DC_WORKERS"); env != nullptr && *env != '\0') {
            ctx.workers = parse_count(env, "DC_WORKERS");
        } else {
            ctx.workers = ctx.config.workers;
        }

        if (validate->parsed()) {
            return cmd_validate(ctx);
        }
        if (train->parsed()) {
            return cmd_train(ctx);
        }
        if (sample->parsed()) {
            return cmd_sample(ctx);
        }
        if (baseline->parsed()) {
            return cmd_baseline(ctx);
        }
        if (bench->parsed()) {
            return cmd_bench(ctx);
        }
        return cmd_eval(ctx, samples_path.empty() ? ctx.out + "/samples.csv" : samples_path, crop_len);
    } catch (const ValidationFailure& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const dc::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const dc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
