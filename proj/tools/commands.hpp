#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "config.hpp"

namespace dc::cli {

/// Graph or reference validation failed (exit code 1).
class ValidationFailure : public Error {
public:
    using Error::Error;
};

struct RunContext {
    ExperimentConfig config;
    std::string out;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
};

int cmd_validate(const RunContext& ctx);
int cmd_train(const RunContext& ctx);
int cmd_sample(const RunContext& ctx);
int cmd_baseline(const RunContext& ctx);
int cmd_bench(const RunContext& ctx);
int cmd_eval(const RunContext& ctx, const std::string& samples_path, std::optional<std::size_t> crop_len);

} // namespace dc::cli
