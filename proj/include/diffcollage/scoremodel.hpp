#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "diffcollage/core.hpp"
#include "diffcollage/graph.hpp"
#include "diffcollage/schedule.hpp"

namespace dc {

class WorkerPool;

/// Score of a node-local noised marginal: s(u, t) ~ grad_u log q_t(u).
///
/// Implementations must be pure (same inputs, same output) and safe to call
/// concurrently.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    virtual const NoiseSchedule& schedule() const = 0;
    virtual bool accepts_width(std::size_t width) const = 0;

    /// `condition` may be empty (the null condition).
    virtual Vector score(const Vector& u, double t, const Vector& condition = {}) const = 0;

    virtual bool supports_vjp() const { return false; }
    /// Returns (d score / d u)^T * cotangent.
    virtual Vector score_vjp(const Vector& u, double t, const Vector& condition, const Vector& cotangent) const;
};

using ScoreModelPtr = std::shared_ptr<const ScoreModel>;

/// Exact score of N(mean, cov) convolved with N(0, sigma_t^2 I).
class GaussianScoreModel final : public ScoreModel {
public:
    GaussianScoreModel(Vector mean, Matrix covariance, NoiseSchedule schedule);

    const NoiseSchedule& schedule() const override { return schedule_; }
    bool accepts_width(std::size_t width) const override { return width == dim(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }

    Vector score(const Vector& u, double t, const Vector& condition = {}) const override;
    bool supports_vjp() const override { return true; }
    Vector score_vjp(const Vector& u, double t, const Vector& condition, const Vector& cotangent) const override;

    /// (cov + sigma^2 I)^{-1}
    Matrix noised_precision(double sigma) const;

    const Vector& mean() const noexcept { return mean_; }
    const Matrix& covariance() const noexcept { return cov_; }

private:
    std::shared_ptr<const Eigen::LLT<Matrix>> factor_at(double sigma) const;

    Vector mean_;
    Matrix cov_;
    NoiseSchedule schedule_;

    // Cholesky factors keyed by sigma; samplers revisit the same grid many times.
    mutable std::mutex cache_mutex_;
    mutable std::map<double, std::shared_ptr<const Eigen::LLT<Matrix>>> cache_;
};

/// Exact score of a Gaussian mixture convolved with N(0, sigma_t^2 I).
class GmmScoreModel final : public ScoreModel {
public:
    GmmScoreModel(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covariances,
                  NoiseSchedule schedule);

    const NoiseSchedule& schedule() const override { return schedule_; }
    bool accepts_width(std::size_t width) const override { return width == dim(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(means_.front().size()); }

    Vector score(const Vector& u, double t, const Vector& condition = {}) const override;
    bool supports_vjp() const override { return true; }
    Vector score_vjp(const Vector& u, double t, const Vector& condition, const Vector& cotangent) const override;

    /// log q_t(u) of the noised mixture.
    double log_density(const Vector& u, double t) const;

private:
    struct Evaluation {
        std::vector<double> responsibilities;
        std::vector<Vector> component_scores;
        std::vector<Matrix> precisions;
        double log_density = 0.0;
    };
    Evaluation evaluate(const Vector& u, double sigma) const;

    std::vector<double> weights_;
    std::vector<Vector> means_;
    std::vector<Matrix> covs_;
    NoiseSchedule schedule_;
};

/// Architecture of the epsilon-predicting MLP.
///
/// Input features are [u (zero padded to data_dim), width / data_dim (only if
/// variable_width), log sigma_t, condition]. Hidden layers use tanh; the output
/// layer is linear with data_dim units.
struct MlpArch {
    std::size_t data_dim = 1;
    std::size_t cond_dim = 0;
    std::vector<std::size_t> hidden;
    bool variable_width = false;

    std::size_t input_dim() const noexcept { return data_dim + (variable_width ? 1 : 0) + 1 + cond_dim; }
    std::vector<std::size_t> layer_widths() const;
    std::size_t parameter_count() const;

    bool operator==(const MlpArch&) const = default;
};

/// One noised training example for the MLP.
struct DsmExample {
    Vector noised;     ///< u_t, length = active width
    Vector noise;      ///< epsilon, same length
    double sigma = 1.0;
    Vector condition;  ///< may be empty
};

class MlpScoreModel final : public ScoreModel {
public:
    /// Xavier-uniform weights drawn from `init_seed`, zero biases.
    MlpScoreModel(MlpArch arch, NoiseSchedule schedule, std::uint64_t init_seed);
    /// Explicit parameters (e.g. from a checkpoint).
    MlpScoreModel(MlpArch arch, NoiseSchedule schedule, std::vector<double> parameters);

    const NoiseSchedule& schedule() const override { return schedule_; }
    bool accepts_width(std::size_t width) const override;

    Vector score(const Vector& u, double t, const Vector& condition = {}) const override;
    bool supports_vjp() const override { return true; }
    Vector score_vjp(const Vector& u, double t, const Vector& condition, const Vector& cotangent) const override;

    /// Network output epsilon-hat for a node vector at noise level sigma (first `width` entries).
    Vector predict_noise(const Vector& u, double sigma, const Vector& condition = {}) const;

    /// Mean over the batch of ||eps - eps_hat||^2; accumulates d loss / d theta into `gradient`
    /// (resized and zeroed here).
    double loss_and_gradient(std::span<const DsmExample> batch, std::vector<double>& gradient) const;

    const MlpArch& arch() const noexcept { return arch_; }
    std::span<const double> parameters() const noexcept { return params_; }
    std::span<double> parameters() noexcept { return params_; }

    /// Zeroes the output layer so eps_hat == 0 everywhere.
    void zero_output_layer();

private:
    Vector features(const Vector& u, double sigma, const Vector& condition) const;
    void check_finite_layer(const Matrix& activations, std::size_t layer) const;

    MlpArch arch_;
    NoiseSchedule schedule_;
    std::vector<double> params_;
};

/// Clean samples of one node's marginal.
struct Dataset {
    std::vector<Vector> samples;

    std::size_t dim() const { return samples.empty() ? 0 : static_cast<std::size_t>(samples.front().size()); }
};

/// Denoising score matching settings. Loss weight is sigma^2, so the objective
/// is the epsilon-prediction MSE; sigma is drawn log-uniformly in [sigma_lo, sigma_hi].
struct DsmConfig {
    std::size_t iterations = 2000;
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    double final_lr_fraction = 1.0;  ///< cosine decay to learning_rate * this; 1 keeps it constant
    double momentum = 0.9;
    double sigma_lo = 0.0;  ///< 0 means the schedule's sigma_min
    double sigma_hi = 0.0;  ///< 0 means the schedule's sigma_max
    std::uint64_t seed = 0;
    std::size_t log_every = 0;   ///< record loss every n iterations (0: never)
    double crop_probability = 0.5;  ///< shift-invariant training only
};

struct TrainingLog {
    std::vector<std::size_t> iterations;
    std::vector<double> losses;
    std::size_t cropped_steps = 0;
};

/// Draws one DSM minibatch from `data` (sigma, noise) with the given stream.
double dsm_loss(const MlpScoreModel& model, std::span<const Vector> clean, std::uint64_t seed,
                std::vector<double>& gradient, double sigma_lo = 0.0, double sigma_hi = 0.0);

/// Trains an MLP on one node's marginal with SGD + momentum.
MlpScoreModel train_node(const Dataset& dataset, const MlpArch& arch, const NoiseSchedule& schedule,
                         const DsmConfig& config, TrainingLog* log = nullptr);

/// Trains one model per node with non-zero Bethe coefficient. Per-node seeds
/// are derived from (config.seed, node kind, node index), so the result does
/// not depend on how many workers run.
std::map<NodeRef, std::shared_ptr<MlpScoreModel>> train_collage(
    const std::map<NodeRef, Dataset>& datasets, const FactorGraph& graph, const MlpArch& arch,
    const NoiseSchedule& schedule, const DsmConfig& config, WorkerPool* pool = nullptr,
    std::map<NodeRef, TrainingLog>* logs = nullptr);

/// One shared model for factor-width inputs and half-width (variable) inputs.
/// Each step uses a random contiguous half crop with probability config.crop_probability.
MlpScoreModel train_shift_invariant(const Dataset& dataset, const std::vector<std::size_t>& hidden,
                                    const NoiseSchedule& schedule, const DsmConfig& config,
                                    TrainingLog* log = nullptr);

std::vector<std::uint8_t> save_checkpoint(const MlpScoreModel& model);
MlpScoreModel load_checkpoint(std::span<const std::uint8_t> blob);

void write_checkpoint_file(const std::string& path, const MlpScoreModel& model);
MlpScoreModel read_checkpoint_file(const std::string& path);

} // namespace dc
