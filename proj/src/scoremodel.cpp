#include "diffcollage/scoremodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "diffcollage/parallel.hpp"
#include "diffcollage/rng.hpp"

namespace dc {

Vector ScoreModel::score_vjp(const Vector&, double, const Vector&, const Vector&) const
{
    throw CapabilityError("this score model does not provide vector-Jacobian products");
}

// ---------------------------------------------------------------------------
// Gaussian

GaussianScoreModel::GaussianScoreModel(Vector mean, Matrix covariance, NoiseSchedule schedule)
    : mean_(std::move(mean)), cov_(std::move(covariance)), schedule_(schedule)
{
    if (mean_.size() == 0 || cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
        throw InvalidArgument("gaussian score model: mean/covariance dimension mismatch");
    }
    if (!cov_.isApprox(cov_.transpose(), 1e-12)) {
        throw InvalidArgument("gaussian score model: covariance is not symmetric");
    }
    if (Eigen::LLT<Matrix>(cov_).info() != Eigen::Success) {
        throw InvalidArgument("gaussian score model: covariance is not positive definite");
    }
}

std::shared_ptr<const Eigen::LLT<Matrix>> GaussianScoreModel::factor_at(double sigma) const
{
    {
        std::lock_guard lock(cache_mutex_);
        if (auto it = cache_.find(sigma); it != cache_.end()) {
            return it->second;
        }
    }
    Matrix noised = cov_;
    noised.diagonal().array() += sigma * sigma;
    auto llt = std::make_shared<const Eigen::LLT<Matrix>>(noised);
    if (llt->info() != Eigen::Success) {
        throw NumericError("gaussian score model: Cholesky of cov + sigma^2 I failed");
    }
    std::lock_guard lock(cache_mutex_);
    if (cache_.size() >= 4096) {
        cache_.clear();
    }
    cache_.emplace(sigma, llt);
    return llt;
}

Vector GaussianScoreModel::score(const Vector& u, double t, const Vector&) const
{
    if (u.size() != mean_.size()) {
        throw InvalidArgument("gaussian score model: input dimension " + std::to_string(u.size()) + " != "
                              + std::to_string(mean_.size()));
    }
    const auto llt = factor_at(schedule_.sigma(t));
    return -llt->solve(u - mean_);
}

Vector GaussianScoreModel::score_vjp(const Vector& u, double t, const Vector&, const Vector& cotangent) const
{
    if (u.size() != mean_.size() || cotangent.size() != mean_.size()) {
        throw InvalidArgument("gaussian score model: vjp dimension mismatch");
    }
    // Jacobian is -(cov + sigma^2 I)^{-1}, symmetric.
    const auto llt = factor_at(schedule_.sigma(t));
    return -llt->solve(cotangent);
}

Matrix GaussianScoreModel::noised_precision(double sigma) const
{
    const auto llt = factor_at(sigma);
    return llt->solve(Matrix::Identity(cov_.rows(), cov_.cols()));
}

// ---------------------------------------------------------------------------
// Gaussian mixture

GmmScoreModel::GmmScoreModel(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covariances,
                             NoiseSchedule schedule)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)), schedule_(schedule)
{
    if (weights_.empty() || weights_.size() != means_.size() || weights_.size() != covs_.size()) {
        throw InvalidArgument("gmm score model: weights/means/covariances must have equal, non-zero length");
    }
    double total = 0.0;
    for (double w : weights_) {
        if (!(w > 0.0)) {
            throw InvalidArgument("gmm score model: weights must be positive");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw InvalidArgument("gmm score model: weights must sum to 1");
    }
    const auto d = means_.front().size();
    for (std::size_t c = 0; c < means_.size(); ++c) {
        if (means_[c].size() != d || covs_[c].rows() != d || covs_[c].cols() != d) {
            throw InvalidArgument("gmm score model: component " + std::to_string(c) + " has inconsistent dimension");
        }
        if (Eigen::LLT<Matrix>(covs_[c]).info() != Eigen::Success) {
            throw InvalidArgument("gmm score model: component " + std::to_string(c) + " covariance not PD");
        }
    }
}

GmmScoreModel::Evaluation GmmScoreModel::evaluate(const Vector& u, double sigma) const
{
    if (u.size() != means_.front().size()) {
        throw InvalidArgument("gmm score model: input dimension mismatch");
    }
    const auto k = static_cast<double>(u.size());
    const std::size_t n = weights_.size();
    Evaluation ev;
    ev.component_scores.resize(n);
    ev.precisions.resize(n);
    std::vector<double> log_terms(n);
    for (std::size_t c = 0; c < n; ++c) {
        Matrix noised = covs_[c];
        noised.diagonal().array() += sigma * sigma;
        const Eigen::LLT<Matrix> llt(noised);
        if (llt.info() != Eigen::Success) {
            throw NumericError("gmm score model: Cholesky failed for component " + std::to_string(c));
        }
        const Vector diff = u - means_[c];
        const Vector solved = llt.solve(diff);
        double logdet = 0.0;
        const Matrix& l = llt.matrixL();
        for (Eigen::Index i = 0; i < l.rows(); ++i) {
            logdet += 2.0 * std::log(l(i, i));
        }
        log_terms[c] = std::log(weights_[c]) - 0.5 * (diff.dot(solved) + logdet + k * std::log(2.0 * std::numbers::pi));
        ev.component_scores[c] = -solved;
        ev.precisions[c] = llt.solve(Matrix::Identity(noised.rows(), noised.cols()));
    }
    const double top = *std::max_element(log_terms.begin(), log_terms.end());
    double sum = 0.0;
    for (double lt : log_terms) {
        sum += std::exp(lt - top);
    }
    const double log_norm = top + std::log(sum);
    ev.log_density = log_norm;
    ev.responsibilities.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
        ev.responsibilities[c] = std::exp(log_terms[c] - log_norm);
    }
    return ev;
}

Vector GmmScoreModel::score(const Vector& u, double t, const Vector&) const
{
    const auto ev = evaluate(u, schedule_.sigma(t));
    Vector out = Vector::Zero(u.size());
    for (std::size_t c = 0; c < weights_.size(); ++c) {
        out += ev.responsibilities[c] * ev.component_scores[c];
    }
    return out;
}

Vector GmmScoreModel::score_vjp(const Vector& u, double t, const Vector&, const Vector& cotangent) const
{
    const auto ev = evaluate(u, schedule_.sigma(t));
    // Hessian of log q: sum_c r_c (-P_c + s_c s_c^T) - s s^T.
    Vector s = Vector::Zero(u.size());
    Vector out = Vector::Zero(u.size());
    for (std::size_t c = 0; c < weights_.size(); ++c) {
        const double r = ev.responsibilities[c];
        const Vector& sc = ev.component_scores[c];
        s += r * sc;
        out += r * (-(ev.precisions[c] * cotangent) + sc * sc.dot(cotangent));
    }
    out -= s * s.dot(cotangent);
    return out;
}

double GmmScoreModel::log_density(const Vector& u, double t) const
{
    return evaluate(u, schedule_.sigma(t)).log_density;
}

// ---------------------------------------------------------------------------
// MLP

std::vector<std::size_t> MlpArch::layer_widths() const
{
    std::vector<std::size_t> widths{input_dim()};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(data_dim);
    return widths;
}

std::size_t MlpArch::parameter_count() const
{
    const auto widths = layer_widths();
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        count += widths[l + 1] * widths[l] + widths[l + 1];
    }
    return count;
}

namespace {

void check_arch(const MlpArch& arch)
{
    if (arch.data_dim == 0) {
        throw InvalidArgument("mlp: data_dim must be >= 1");
    }
    for (std::size_t h : arch.hidden) {
        if (h == 0) {
            throw InvalidArgument("mlp: hidden layer widths must be >= 1");
        }
    }
}

struct LayerView {
    Eigen::Map<const Matrix> weight;
    Eigen::Map<const Vector> bias;
};

std::vector<LayerView> layer_views(const MlpArch& arch, std::span<const double> params)
{
    const auto widths = arch.layer_widths();
    std::vector<LayerView> views;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(widths[l]);
        const auto out = static_cast<Eigen::Index>(widths[l + 1]);
        const double* w = params.data() + offset;
        offset += static_cast<std::size_t>(in * out);
        const double* b = params.data() + offset;
        offset += static_cast<std::size_t>(out);
        views.push_back({Eigen::Map<const Matrix>(w, out, in), Eigen::Map<const Vector>(b, out)});
    }
    return views;
}

} // namespace

MlpScoreModel::MlpScoreModel(MlpArch arch, NoiseSchedule schedule, std::uint64_t init_seed)
    : arch_(std::move(arch)), schedule_(schedule)
{
    check_arch(arch_);
    params_.assign(arch_.parameter_count(), 0.0);
    const auto widths = arch_.layer_widths();
    RngStream rng(derive_seed(init_seed, {0x6d6c70}));
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t k = 0; k < in * out; ++k) {
            params_[offset + k] = (2.0 * rng.uniform() - 1.0) * limit;
        }
        offset += in * out + out;
    }
}

MlpScoreModel::MlpScoreModel(MlpArch arch, NoiseSchedule schedule, std::vector<double> parameters)
    : arch_(std::move(arch)), schedule_(schedule), params_(std::move(parameters))
{
    check_arch(arch_);
    if (params_.size() != arch_.parameter_count()) {
        throw InvalidArgument("mlp: expected " + std::to_string(arch_.parameter_count()) + " parameters, got "
                              + std::to_string(params_.size()));
    }
    for (double p : params_) {
        if (!std::isfinite(p)) {
            throw InvalidArgument("mlp: non-finite parameter");
        }
    }
}

bool MlpScoreModel::accepts_width(std::size_t width) const
{
    return width == arch_.data_dim || (arch_.variable_width && width >= 1 && width < arch_.data_dim);
}

void MlpScoreModel::zero_output_layer()
{
    const auto widths = arch_.layer_widths();
    const std::size_t last = widths[widths.size() - 2] * widths.back() + widths.back();
    std::fill(params_.end() - static_cast<std::ptrdiff_t>(last), params_.end(), 0.0);
}

Vector MlpScoreModel::features(const Vector& u, double sigma, const Vector& condition) const
{
    const auto width = static_cast<std::size_t>(u.size());
    if (!accepts_width(width)) {
        throw InvalidArgument("mlp: input width " + std::to_string(width) + " not accepted (data_dim "
                              + std::to_string(arch_.data_dim) + ")");
    }
    if (condition.size() != 0 && static_cast<std::size_t>(condition.size()) != arch_.cond_dim) {
        throw InvalidArgument("mlp: condition length " + std::to_string(condition.size()) + " != cond_dim "
                              + std::to_string(arch_.cond_dim));
    }
    Vector x = Vector::Zero(static_cast<Eigen::Index>(arch_.input_dim()));
    x.head(u.size()) = u;
    auto pos = static_cast<Eigen::Index>(arch_.data_dim);
    if (arch_.variable_width) {
        x(pos++) = static_cast<double>(width) / static_cast<double>(arch_.data_dim);
    }
    x(pos++) = std::log(sigma);
    if (condition.size() != 0) {
        x.segment(pos, condition.size()) = condition;
    }
    return x;
}

void MlpScoreModel::check_finite_layer(const Matrix& activations, std::size_t layer) const
{
    if (!activations.allFinite()) {
        throw NumericError("mlp: non-finite activation in layer " + std::to_string(layer));
    }
}

Vector MlpScoreModel::predict_noise(const Vector& u, double sigma, const Vector& condition) const
{
    Vector a = features(u, sigma, condition);
    const auto layers = layer_views(arch_, params_);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Vector z = layers[l].weight * a + layers[l].bias;
        check_finite_layer(z, l);  // before tanh, which would saturate inf to 1
        if (l + 1 < layers.size()) {
            z = z.array().tanh();
        }
        a = std::move(z);
    }
    return a.head(u.size());
}

Vector MlpScoreModel::score(const Vector& u, double t, const Vector& condition) const
{
    const double sigma = schedule_.sigma(t);
    return -predict_noise(u, sigma, condition) / sigma;
}

Vector MlpScoreModel::score_vjp(const Vector& u, double t, const Vector& condition, const Vector& cotangent) const
{
    if (cotangent.size() != u.size()) {
        throw InvalidArgument("mlp: vjp cotangent dimension mismatch");
    }
    const double sigma = schedule_.sigma(t);
    const auto layers = layer_views(arch_, params_);
    std::vector<Vector> acts{features(u, sigma, condition)};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Vector z = layers[l].weight * acts.back() + layers[l].bias;
        check_finite_layer(z, l);
        if (l + 1 < layers.size()) {
            z = z.array().tanh();
        }
        acts.push_back(std::move(z));
    }
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(arch_.data_dim));
    grad.head(u.size()) = cotangent;
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (l + 1 < layers.size()) {
            grad = grad.array() * (1.0 - acts[l + 1].array().square());
        }
        grad = layers[l].weight.transpose() * grad;
    }
    return -grad.head(u.size()) / sigma;
}

double MlpScoreModel::loss_and_gradient(std::span<const DsmExample> batch, std::vector<double>& gradient) const
{
    if (batch.empty()) {
        throw InvalidArgument("dsm: empty batch");
    }
    const auto layers = layer_views(arch_, params_);
    const auto b = static_cast<Eigen::Index>(batch.size());
    const auto out_dim = static_cast<Eigen::Index>(arch_.data_dim);

    Matrix x(static_cast<Eigen::Index>(arch_.input_dim()), b);
    Matrix target = Matrix::Zero(out_dim, b);
    Matrix mask = Matrix::Zero(out_dim, b);
    for (Eigen::Index k = 0; k < b; ++k) {
        const auto& ex = batch[static_cast<std::size_t>(k)];
        x.col(k) = features(ex.noised, ex.sigma, ex.condition);
        target.col(k).head(ex.noise.size()) = ex.noise;
        mask.col(k).head(ex.noise.size()).setOnes();
    }

    std::vector<Matrix> acts{std::move(x)};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weight * acts.back();
        z.colwise() += layers[l].bias;
        check_finite_layer(z, l);
        if (l + 1 < layers.size()) {
            z = z.array().tanh();
        }
        acts.push_back(std::move(z));
    }

    const Matrix residual = (acts.back() - target).cwiseProduct(mask);
    const double inv_b = 1.0 / static_cast<double>(b);
    const double loss = residual.squaredNorm() * inv_b;

    gradient.assign(params_.size(), 0.0);
    const auto widths = arch_.layer_widths();
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        offsets.push_back(offset);
        offset += widths[l] * widths[l + 1] + widths[l + 1];
    }

    Matrix delta = 2.0 * inv_b * residual;
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (l + 1 < layers.size()) {
            delta = delta.array() * (1.0 - acts[l + 1].array().square());
        }
        const auto in = static_cast<Eigen::Index>(widths[l]);
        const auto out = static_cast<Eigen::Index>(widths[l + 1]);
        Eigen::Map<Matrix> gw(gradient.data() + offsets[l], out, in);
        Eigen::Map<Vector> gb(gradient.data() + offsets[l] + static_cast<std::size_t>(in * out), out);
        gw.noalias() = delta * acts[l].transpose();
        gb = delta.rowwise().sum();
        if (l > 0) {
            delta = layers[l].weight.transpose() * delta;
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct SigmaRange {
    double lo;
    double hi;
};

SigmaRange sigma_range(const NoiseSchedule& schedule, double lo, double hi)
{
    SigmaRange r{lo > 0.0 ? lo : schedule.sigma_min(), hi > 0.0 ? hi : schedule.sigma_max()};
    if (!(r.lo > 0.0 && r.hi >= r.lo)) {
        throw InvalidArgument("dsm: sigma range must satisfy 0 < lo <= hi");
    }
    return r;
}

double log_uniform(RngStream& rng, SigmaRange range)
{
    if (range.lo == range.hi) {
        return range.lo;
    }
    const double a = std::log(range.lo);
    const double b = std::log(range.hi);
    return std::exp(a + (b - a) * rng.uniform());
}

DsmExample noised_example(const Vector& clean, double sigma, RngStream& rng, const Vector& condition = {})
{
    DsmExample ex;
    ex.sigma = sigma;
    ex.noise.resize(clean.size());
    for (Eigen::Index k = 0; k < clean.size(); ++k) {
        ex.noise(k) = rng.normal();
    }
    ex.noised = clean + sigma * ex.noise;
    ex.condition = condition;
    return ex;
}

void sgd_step(std::vector<double>& params, std::vector<double>& velocity, const std::vector<double>& grad,
              const DsmConfig& config, std::size_t iteration)
{
    // cosine from learning_rate down to learning_rate * final_lr_fraction
    const double progress = config.iterations > 1 ? static_cast<double>(iteration) / static_cast<double>(config.iterations - 1) : 0.0;
    const double f = config.final_lr_fraction;
    const double lr = config.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = config.momentum * velocity[k] + grad[k];
        params[k] -= lr * velocity[k];
    }
}

void check_dsm_config(const DsmConfig& config)
{
    if (config.iterations == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0)) {
        throw InvalidArgument("dsm: iterations, batch_size and learning_rate must be positive");
    }
    if (!(config.final_lr_fraction > 0.0 && config.final_lr_fraction <= 1.0)) {
        throw InvalidArgument("dsm: final_lr_fraction must lie in (0, 1]");
    }
}

void record(TrainingLog* log, const DsmConfig& config, std::size_t iteration, double loss)
{
    if (log != nullptr && config.log_every > 0 && (iteration % config.log_every == 0 || iteration + 1 == config.iterations)) {
        log->iterations.push_back(iteration);
        log->losses.push_back(loss);
    }
}

} // namespace

double dsm_loss(const MlpScoreModel& model, std::span<const Vector> clean, std::uint64_t seed,
                std::vector<double>& gradient, double sigma_lo, double sigma_hi)
{
    if (clean.empty()) {
        throw InvalidArgument("dsm: empty batch");
    }
    const auto range = sigma_range(model.schedule(), sigma_lo, sigma_hi);
    RngStream rng(seed);
    std::vector<DsmExample> batch;
    batch.reserve(clean.size());
    for (const auto& u0 : clean) {
        const double sigma = log_uniform(rng, range);
        batch.push_back(noised_example(u0, sigma, rng));
    }
    return model.loss_and_gradient(batch, gradient);
}

MlpScoreModel train_node(const Dataset& dataset, const MlpArch& arch, const NoiseSchedule& schedule,
                         const DsmConfig& config, TrainingLog* log)
{
    check_dsm_config(config);
    if (dataset.samples.empty()) {
        throw InvalidArgument("train_node: empty dataset");
    }
    if (dataset.dim() != arch.data_dim) {
        throw InvalidArgument("train_node: dataset dimension " + std::to_string(dataset.dim())
                              + " != arch data_dim " + std::to_string(arch.data_dim));
    }
    MlpScoreModel model(arch, schedule, derive_seed(config.seed, {1}));
    const auto range = sigma_range(schedule, config.sigma_lo, config.sigma_hi);
    RngStream rng(derive_seed(config.seed, {2}));
    std::vector<double> velocity(model.parameters().size(), 0.0);
    std::vector<double> grad;
    std::vector<double> params(model.parameters().begin(), model.parameters().end());
    std::vector<DsmExample> batch(config.batch_size);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        for (auto& ex : batch) {
            const auto& u0 = dataset.samples[rng.below(dataset.samples.size())];
            ex = noised_example(u0, log_uniform(rng, range), rng);
        }
        const double loss = model.loss_and_gradient(batch, grad);
        if (!std::isfinite(loss)) {
            throw NumericError("train_node: loss diverged at iteration " + std::to_string(it));
        }
        record(log, config, it, loss);
        sgd_step(params, velocity, grad, config, it);
        std::copy(params.begin(), params.end(), model.parameters().begin());
    }
    return model;
}

std::map<NodeRef, std::shared_ptr<MlpScoreModel>> train_collage(
    const std::map<NodeRef, Dataset>& datasets, const FactorGraph& graph, const MlpArch& arch,
    const NoiseSchedule& schedule, const DsmConfig& config, WorkerPool* pool, std::map<NodeRef, TrainingLog>* logs)
{
    const auto coeffs = bethe_coefficients(graph);
    std::vector<NodeRef> needed;
    for (std::size_t j = 0; j < graph.num_factors(); ++j) {
        needed.push_back(NodeRef::factor(j));
    }
    for (std::size_t i = 0; i < graph.num_variables(); ++i) {
        if (coeffs.variable_coeffs[i] != 0.0) {
            needed.push_back(NodeRef::variable(i));
        }
    }
    for (const auto& node : needed) {
        if (!datasets.contains(node)) {
            throw InvalidArgument("train_collage: missing dataset for " + to_string(node));
        }
    }
    std::vector<std::shared_ptr<MlpScoreModel>> models(needed.size());
    std::vector<TrainingLog> node_logs(needed.size());
    for_each_index(pool, needed.size(), [&](std::size_t k) {
        const NodeRef node = needed[k];
        DsmConfig node_config = config;
        node_config.seed = derive_seed(config.seed, {static_cast<std::uint64_t>(node.kind), node.index});
        MlpArch node_arch = arch;
        node_arch.data_dim = graph.coords(node).size();
        try {
            models[k] = std::make_shared<MlpScoreModel>(
                train_node(datasets.at(node), node_arch, schedule, node_config, &node_logs[k]));
        } catch (const NumericError& e) {
            throw NumericError(to_string(node) + ": " + e.what());
        }
    });
    std::map<NodeRef, std::shared_ptr<MlpScoreModel>> out;
    for (std::size_t k = 0; k < needed.size(); ++k) {
        out.emplace(needed[k], models[k]);
        if (logs != nullptr) {
            (*logs)[needed[k]] = std::move(node_logs[k]);
        }
    }
    return out;
}

MlpScoreModel train_shift_invariant(const Dataset& dataset, const std::vector<std::size_t>& hidden,
                                    const NoiseSchedule& schedule, const DsmConfig& config, TrainingLog* log)
{
    check_dsm_config(config);
    if (dataset.samples.empty()) {
        throw InvalidArgument("train_shift_invariant: empty dataset");
    }
    const std::size_t width = dataset.dim();
    if (width % 2 != 0) {
        throw InvalidArgument("train_shift_invariant: factor width " + std::to_string(width) + " must be even");
    }
    const std::size_t half = width / 2;
    MlpArch arch{width, 0, hidden, true};
    MlpScoreModel model(arch, schedule, derive_seed(config.seed, {1}));
    const auto range = sigma_range(schedule, config.sigma_lo, config.sigma_hi);
    RngStream rng(derive_seed(config.seed, {3}));
    std::vector<double> velocity(model.parameters().size(), 0.0);
    std::vector<double> grad;
    std::vector<double> params(model.parameters().begin(), model.parameters().end());
    std::vector<DsmExample> batch(config.batch_size);
    std::size_t cropped = 0;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const bool crop = rng.uniform() < config.crop_probability;
        cropped += crop ? 1 : 0;
        for (auto& ex : batch) {
            const Vector& u0 = dataset.samples[rng.below(dataset.samples.size())];
            Vector clean = u0;
            if (crop) {
                const auto offset = static_cast<Eigen::Index>(rng.below(half + 1));
                clean = u0.segment(offset, static_cast<Eigen::Index>(half));
            }
            ex = noised_example(clean, log_uniform(rng, range), rng);
        }
        const double loss = model.loss_and_gradient(batch, grad);
        if (!std::isfinite(loss)) {
            throw NumericError("train_shift_invariant: loss diverged at iteration " + std::to_string(it));
        }
        record(log, config, it, loss);
        sgd_step(params, velocity, grad, config, it);
        std::copy(params.begin(), params.end(), model.parameters().begin());
    }
    if (log != nullptr) {
        log->cropped_steps = cropped;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoints: "DCSM", u32 version, arch, schedule, f64 payload; little endian.

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
public:
    template <typename T>
    void put(T value)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(bytes.begin(), bytes.end());
        }
        out.insert(out.end(), bytes.begin(), bytes.end());
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    template <typename T>
    T get(const char* what)
    {
        if (pos_ + sizeof(T) > data_.size()) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        }
        std::array<std::uint8_t, sizeof(T)> bytes{};
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(pos_), sizeof(T), bytes.begin());
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(bytes.begin(), bytes.end());
        }
        pos_ += sizeof(T);
        return std::bit_cast<T>(bytes);
    }
    bool at_end() const { return pos_ == data_.size(); }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> save_checkpoint(const MlpScoreModel& model)
{
    Writer w;
    for (char c : std::string_view("DCSM")) {
        w.put(static_cast<std::uint8_t>(c));
    }
    w.put(kCheckpointVersion);
    const auto& arch = model.arch();
    w.put(static_cast<std::uint32_t>(arch.data_dim));
    w.put(static_cast<std::uint32_t>(arch.cond_dim));
    w.put(static_cast<std::uint8_t>(arch.variable_width ? 1 : 0));
    w.put(static_cast<std::uint32_t>(arch.hidden.size()));
    for (std::size_t h : arch.hidden) {
        w.put(static_cast<std::uint32_t>(h));
    }
    w.put(static_cast<std::uint8_t>(model.schedule().kind() == ScheduleKind::LinearVe ? 0 : 1));
    w.put(model.schedule().sigma_min());
    w.put(model.schedule().sigma_max());
    w.put(static_cast<std::uint64_t>(model.parameters().size()));
    for (double p : model.parameters()) {
        w.put(p);
    }
    return std::move(w.out);
}

MlpScoreModel load_checkpoint(std::span<const std::uint8_t> blob)
{
    Reader r(blob);
    std::string magic;
    for (int k = 0; k < 4; ++k) {
        magic.push_back(static_cast<char>(r.get<std::uint8_t>("magic")));
    }
    if (magic != "DCSM") {
        throw FormatError("not a checkpoint (bad magic)");
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    MlpArch arch;
    arch.data_dim = r.get<std::uint32_t>("data_dim");
    arch.cond_dim = r.get<std::uint32_t>("cond_dim");
    arch.variable_width = r.get<std::uint8_t>("variable_width") != 0;
    const auto layers = r.get<std::uint32_t>("layer count");
    if (layers > 1024) {
        throw FormatError("checkpoint layer count " + std::to_string(layers) + " is implausible");
    }
    for (std::uint32_t k = 0; k < layers; ++k) {
        arch.hidden.push_back(r.get<std::uint32_t>("hidden width"));
    }
    const auto kind = r.get<std::uint8_t>("schedule kind");
    if (kind > 1) {
        throw FormatError("unknown schedule kind in checkpoint");
    }
    const double smin = r.get<double>("sigma_min");
    const double smax = r.get<double>("sigma_max");
    const auto count = r.get<std::uint64_t>("parameter count");
    if (arch.data_dim == 0 || count != arch.parameter_count()) {
        throw FormatError("checkpoint parameter count does not match its architecture");
    }
    std::vector<double> params(static_cast<std::size_t>(count));
    for (auto& p : params) {
        p = r.get<double>("parameters");
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after checkpoint payload");
    }
    const NoiseSchedule schedule(kind == 0 ? ScheduleKind::LinearVe : ScheduleKind::GeometricVe, smin, smax);
    return MlpScoreModel(std::move(arch), schedule, std::move(params));
}

void write_checkpoint_file(const std::string& path, const MlpScoreModel& model)
{
    const auto blob = save_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw IoError("failed writing '" + path + "'");
    }
}

MlpScoreModel read_checkpoint_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint '" + path + "'");
    }
    const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_checkpoint(blob);
}

} // namespace dc
