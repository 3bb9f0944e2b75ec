#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "diffcollage/collage.hpp"
#include "diffcollage/parallel.hpp"
#include "diffcollage/rng.hpp"
#include "diffcollage/testbed.hpp"

using namespace dc;

namespace {

const NoiseSchedule kSched = NoiseSchedule::linear(0.01, 10.0);

Vector random_vector(std::size_t n, RngStream& rng, double scale = 1.0)
{
    Vector v(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        v(k) = scale * rng.normal();
    }
    return v;
}

// Exact score of the noised joint N(mean, cov + sigma^2 I) by a dense LU solve.
Vector dense_joint_score(const Vector& mean, const Matrix& cov, const Vector& u, double sigma)
{
    Matrix noised = cov;
    noised.diagonal().array() += sigma * sigma;
    return -noised.fullPivLu().solve(u - mean);
}

// Brute-force J_B: sum of lifted factor precisions minus (d_i - 1) lifted variable precisions.
Matrix brute_bethe_precision(const FactorGraph& g, const Matrix& cov, double sigma)
{
    const auto n = static_cast<Eigen::Index>(g.total_dim());
    Matrix j = Matrix::Zero(n, n);
    auto lift = [&](const CoordSet& coords, double weight) {
        const auto k = static_cast<Eigen::Index>(coords.size());
        Matrix local(k, k);
        for (Eigen::Index a = 0; a < k; ++a) {
            for (Eigen::Index b = 0; b < k; ++b) {
                local(a, b) = cov(static_cast<Eigen::Index>(coords[a]), static_cast<Eigen::Index>(coords[b]));
            }
        }
        local.diagonal().array() += sigma * sigma;
        const Matrix p = local.inverse();
        for (Eigen::Index a = 0; a < k; ++a) {
            for (Eigen::Index b = 0; b < k; ++b) {
                j(static_cast<Eigen::Index>(coords[a]), static_cast<Eigen::Index>(coords[b])) += weight * p(a, b);
            }
        }
    };
    for (const auto& f : g.factors()) {
        lift(f, 1.0);
    }
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        lift(g.variables()[i], -(static_cast<double>(g.degree(i)) - 1.0));
    }
    return j;
}

class ScaledModel final : public ScoreModel {
public:
    ScaledModel(ScoreModelPtr inner, double alpha) : inner_(std::move(inner)), alpha_(alpha) {}
    const NoiseSchedule& schedule() const override { return inner_->schedule(); }
    bool accepts_width(std::size_t w) const override { return inner_->accepts_width(w); }
    Vector score(const Vector& u, double t, const Vector& c = {}) const override { return alpha_ * inner_->score(u, t, c); }

private:
    ScoreModelPtr inner_;
    double alpha_;
};

class StandardNormalScore final : public ScoreModel {
public:
    explicit StandardNormalScore(NoiseSchedule s) : s_(s) {}
    const NoiseSchedule& schedule() const override { return s_; }
    bool accepts_width(std::size_t) const override { return true; }
    Vector score(const Vector& u, double t, const Vector& = {}) const override
    {
        const double sigma = s_.sigma(t);
        return -u / (1.0 + sigma * sigma);
    }

private:
    NoiseSchedule s_;
};

class FailingModel final : public ScoreModel {
public:
    explicit FailingModel(NoiseSchedule s) : s_(s) {}
    const NoiseSchedule& schedule() const override { return s_; }
    bool accepts_width(std::size_t) const override { return true; }
    Vector score(const Vector&, double, const Vector& = {}) const override { throw NumericError("boom"); }

private:
    NoiseSchedule s_;
};

} // namespace

TEST_CASE("gather and scatter_add")
{
    Vector u(4);
    u << 10, 20, 30, 40;
    CHECK(gather(u, {0, 1, 2, 3}) == u);
    const Vector g = gather(u, {1, 3});
    CHECK(g(0) == 20);
    CHECK(g(1) == 40);
    CHECK_THROWS_AS(gather(u, {4}), InvalidArgument);

    Vector target = u;
    scatter_add(target, {0, 1}, Vector::Ones(2), 0.0);
    CHECK(target == u);
    Vector zero = Vector::Zero(4);
    scatter_add(zero, {1, 2}, gather(zero, {1, 2}), -1.0);
    CHECK(zero.norm() == 0.0);
    CHECK_THROWS_AS(scatter_add(target, {0, 1}, Vector::Ones(3), 1.0), InvalidArgument);
    CHECK_THROWS_AS(scatter_add(target, {9}, Vector::Ones(1), 1.0), InvalidArgument);

    RngStream rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x = random_vector(10, rng);
        const CoordSet a{0, 2, 5, 7};
        const CoordSet b{1, 3, 9};
        Vector rebuilt = Vector::Zero(10);
        scatter_add(rebuilt, a, gather(x, a), 1.0);
        scatter_add(rebuilt, b, gather(x, b), 1.0);
        CHECK(gather(rebuilt, a) == gather(x, a));
        CHECK(gather(rebuilt, b) == gather(x, b));
    }
}

TEST_CASE("overlapping scatter_adds in a fixed order are reproducible")
{
    RngStream rng(11);
    const CoordSet a{0, 1, 2, 3};
    const CoordSet b{2, 3, 4, 5};
    const CoordSet c{3, 4};
    const Vector va = random_vector(4, rng, 1e8);
    const Vector vb = random_vector(4, rng, 1e-8);
    const Vector vc = random_vector(2, rng);
    Vector first = Vector::Zero(6);
    Vector second = Vector::Zero(6);
    for (Vector* out : {&first, &second}) {
        scatter_add(*out, a, va, 1.0);
        scatter_add(*out, b, vb, 1.0);
        scatter_add(*out, c, vc, -1.0);
    }
    CHECK(first == second);
}

TEST_CASE("single-factor graph composes to the factor score")
{
    const auto g = build_chain(1, 4, 1);
    const Matrix cov = random_spd(4, 1);
    auto model = std::make_shared<GaussianScoreModel>(Vector::Zero(4), cov, kSched);
    ComposedScore cs(g, {{NodeRef::factor(0), model, {}}});
    RngStream rng(2);
    const Vector u = random_vector(4, rng);
    CHECK(cs.score(u, 0.4) == model->score(u, 0.4));
}

TEST_CASE("simple chain example equals the exact joint score in the clean limit")
{
    const auto g = build_chain(2, 2, 1);
    Matrix prec(3, 3);
    prec << 2.0, -0.9, 0.0, -0.9, 2.5, 0.7, 0.0, 0.7, 1.5;
    const Matrix cov = prec.inverse();
    Vector mean(3);
    mean << 0.5, -1.0, 2.0;
    const auto m = marginals_from_joint(g, mean, cov);
    const auto fine = NoiseSchedule::linear(1e-7, 10.0);
    ComposedScore cs(g, bind_gaussian_marginals(g, m, fine));
    CHECK(cs.bindings().size() == 3);
    RngStream rng(7);
    double worst = 0.0;
    for (int probe = 0; probe < 100; ++probe) {
        const Vector u = random_vector(3, rng, 3.0);
        worst = std::max(worst, (cs.score(u, 1e-7) - dense_joint_score(mean, cov, u, 1e-7)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);

    // Noise breaks the Markov property, so at sigma > 0 the composition is the
    // Bethe approximation of the noised joint; the gap closes as O(sigma^2).
    std::vector<double> gaps;
    for (double t : {1.0, 0.1, 0.01, 0.001}) {
        double gap = 0.0;
        for (int probe = 0; probe < 20; ++probe) {
            const Vector u = random_vector(3, rng, 3.0);
            gap = std::max(gap, (cs.score(u, t) - dense_joint_score(mean, cov, u, t)).cwiseAbs().maxCoeff());
        }
        MESSAGE("t=" << t << " gap " << gap);
        gaps.push_back(gap);
    }
    CHECK(gaps[0] > 1e-3);
    for (std::size_t k = 1; k < gaps.size(); ++k) {
        CHECK(gaps[k] < gaps[k - 1]);
    }
    CHECK(gaps[3] < 0.05 * gaps[2]);
}

TEST_CASE("cycle composition equals the brute-force Bethe affine map")
{
    const auto g = build_cycle(4, 3, 1);
    const auto joint = random_factor_gaussian(g, 5);
    const auto m = marginals_from_joint(g, joint.mean, joint.covariance);
    ComposedScore cs(g, bind_gaussian_marginals(g, m, kSched));
    RngStream rng(8);
    for (int probe = 0; probe < 50; ++probe) {
        const Vector u = random_vector(g.total_dim(), rng, 2.0);
        const double t = 0.01 + 5.0 * rng.uniform();
        const Matrix jb = brute_bethe_precision(g, joint.covariance, t);
        const auto oracle = composed_gaussian_oracle(g, m, kSched, t);
        CHECK((oracle.precision - jb).cwiseAbs().maxCoeff() < 1e-9);
        const Vector expected = -oracle.precision * u + oracle.shift;
        CHECK((cs.score(u, t) - expected).cwiseAbs().maxCoeff() < 1e-9);
        // shift equals J_B applied to the joint mean when the marginals share it
        CHECK((oracle.shift - jb * joint.mean).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("composed gaussian oracle properties")
{
    SUBCASE("chain: inverse Bethe precision is the joint covariance")
    {
        const auto g = build_chain(4, 4, 2);
        const auto joint = random_factor_gaussian(g, 12);
        const auto m = marginals_from_joint(g, joint.mean, joint.covariance);
        const auto b = bethe_gaussian(g, m, 0.0);
        REQUIRE(b.proper);
        CHECK((b.covariance() - joint.covariance).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((b.mean() - joint.mean).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("disjoint factors give a block-diagonal precision")
    {
        FactorGraph g({4, {}}, {{0, 1}, {2, 3}}, {});
        Matrix cov = Matrix::Identity(4, 4);
        cov(0, 1) = cov(1, 0) = 0.3;
        cov(2, 3) = cov(3, 2) = -0.2;
        const auto m = marginals_from_joint(g, Vector::Zero(4), cov);
        const auto b = bethe_gaussian(g, m, 0.5);
        CHECK(b.precision.block(0, 2, 2, 2).norm() == 0.0);
        Matrix local = cov.block(0, 0, 2, 2);
        local.diagonal().array() += 0.25;
        CHECK((b.precision.block(0, 0, 2, 2) - local.inverse()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("generic cycle: Bethe covariance is biased")
    {
        const auto g = build_cycle(4, 3, 1);
        const auto joint = random_factor_gaussian(g, 13);
        const auto m = marginals_from_joint(g, joint.mean, joint.covariance);
        const auto b = bethe_gaussian(g, m, 0.0);
        REQUIRE(b.proper);
        CHECK((b.covariance() - joint.covariance).cwiseAbs().maxCoeff() > 1e-6);
    }
    SUBCASE("improper Bethe Gaussian is reported as data")
    {
        // Strongly correlated ring: the signed sum of precisions loses definiteness.
        const auto g = build_cycle(3, 2, 1);
        Matrix cov(3, 3);
        cov << 1.0, 0.95, -0.95, 0.95, 1.0, 0.95, -0.95, 0.95, 1.0;
        cov.diagonal().array() += 1.0;
        const auto m = marginals_from_joint(g, Vector::Zero(3), cov);
        const auto b = bethe_gaussian(g, m, 0.0);
        if (!b.proper) {
            CHECK_THROWS_AS(b.covariance(), NumericError);
        }
        MESSAGE("ring example proper: " << b.proper);
    }
}

TEST_CASE("composition linearity and coefficient-sum consistency")
{
    const auto g = build_grid(2, 3, 4, 2);
    const auto base = std::make_shared<StandardNormalScore>(kSched);
    ComposedScore cs(g, bind_shared_model(g, base));
    const auto scaled = std::make_shared<ScaledModel>(base, 2.5);
    ComposedScore cs2(g, bind_shared_model(g, scaled));
    RngStream rng(4);
    for (int probe = 0; probe < 20; ++probe) {
        const Vector u = random_vector(g.total_dim(), rng);
        const double t = 0.01 + 9.0 * rng.uniform();
        const double sigma = kSched.sigma(t);
        CHECK((cs.score(u, t) - (-u / (1 + sigma * sigma))).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((cs2.score(u, t) - 2.5 * cs.score(u, t)).cwiseAbs().maxCoeff() < 1e-12);
    }
    for (const auto& graph : {build_cubemap(2), build_cycle(5, 4, 2), build_chain(4, 5, 2)}) {
        ComposedScore c(graph, bind_shared_model(graph, base));
        const Vector u = random_vector(graph.total_dim(), rng);
        CHECK((c.score(u, 1.0) - (-u / 2.0)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("composed score is bit-identical across worker counts")
{
    const auto g = build_chain(8, 6, 3);
    const auto joint = random_factor_gaussian(g, 21);
    const auto m = marginals_from_joint(g, joint.mean, joint.covariance);
    ComposedScore cs(g, bind_gaussian_marginals(g, m, kSched));
    RngStream rng(6);
    const Vector u = random_vector(g.total_dim(), rng);
    const Vector reference = cs.score(u, 0.7);
    const Vector vjp_ref = cs.score_vjp(u, 0.7, u);
    for (std::size_t workers : {1, 2, 4, 8}) {
        WorkerPool pool(workers);
        cs.set_pool(&pool);
        CHECK(cs.score(u, 0.7) == reference);
        CHECK(cs.score_vjp(u, 0.7, u) == vjp_ref);
    }
    cs.set_pool(nullptr);
}

TEST_CASE("composed score counters and error context")
{
    const auto g = build_chain(3, 4, 2);
    const auto base = std::make_shared<StandardNormalScore>(kSched);
    ComposedScore cs(g, bind_shared_model(g, base));
    const Vector u = Vector::Zero(static_cast<Eigen::Index>(g.total_dim()));
    cs.score(u, 1.0);
    cs.score(u, 1.0);
    CHECK(cs.rounds() == 2);
    CHECK(cs.node_evaluations() == 2 * 5);
    cs.reset_counters();
    CHECK(cs.rounds() == 0);
    CHECK_THROWS_AS(cs.score(Vector::Zero(3), 1.0), InvalidArgument);
    CHECK_FALSE(cs.supports_vjp());
    CHECK_THROWS_AS(cs.score_vjp(u, 1.0, u), CapabilityError);

    auto bindings = bind_shared_model(g, base);
    bindings[2].model = std::make_shared<FailingModel>(kSched);
    ComposedScore failing(g, bindings);
    try {
        failing.score(u, 1.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("factor 2") != std::string::npos);
    }
}

TEST_CASE("composed score construction errors")
{
    const auto g = build_chain(2, 4, 2);
    const auto base = std::make_shared<StandardNormalScore>(kSched);
    auto bindings = bind_shared_model(g, base);
    CHECK(bindings.size() == 3);

    auto missing = bindings;
    missing.pop_back();
    CHECK_THROWS_AS(ComposedScore(g, missing), InvalidArgument);

    auto leaf = bindings;
    leaf.push_back({NodeRef::variable(0), base, {}});
    CHECK_THROWS_AS(ComposedScore(g, leaf), InvalidArgument);

    auto dup = bindings;
    dup.push_back(bindings[0]);
    CHECK_THROWS_AS(ComposedScore(g, dup), InvalidArgument);

    auto wrong = bindings;
    wrong[0].model = std::make_shared<GaussianScoreModel>(Vector::Zero(3), Matrix::Identity(3, 3), kSched);
    CHECK_THROWS_AS(ComposedScore(g, wrong), InvalidArgument);

    FactorGraph invalid({5, {}}, {{0, 1, 2}}, {});
    CHECK_THROWS_AS(ComposedScore(invalid, {}), InvalidArgument);
}

TEST_CASE("per-node conditions reach their models")
{
    class ConditionEcho final : public ScoreModel {
    public:
        explicit ConditionEcho(NoiseSchedule s) : s_(s) {}
        const NoiseSchedule& schedule() const override { return s_; }
        bool accepts_width(std::size_t) const override { return true; }
        Vector score(const Vector& u, double, const Vector& c = {}) const override
        {
            return Vector::Constant(u.size(), c.size() ? c(0) : 0.0);
        }

    private:
        NoiseSchedule s_;
    };
    const auto g = build_chain(2, 2, 1);
    const auto echo = std::make_shared<ConditionEcho>(kSched);
    ComposedScore cs(g, {{NodeRef::factor(0), echo, Vector::Constant(1, 1.0)},
                         {NodeRef::factor(1), echo, Vector::Constant(1, 10.0)},
                         {NodeRef::variable(1), echo, Vector::Constant(1, 100.0)}});
    const Vector s = cs.score(Vector::Zero(3), 1.0);
    CHECK(s(0) == 1.0);
    CHECK(s(1) == 1.0 + 10.0 - 100.0);
    CHECK(s(2) == 10.0);
}

TEST_CASE("composed VJP matches finite differences")
{
    const auto g = build_cycle(3, 4, 2);
    const auto joint = random_factor_gaussian(g, 2);
    const auto m = marginals_from_joint(g, joint.mean, joint.covariance);
    ComposedScore cs(g, bind_gaussian_marginals(g, m, kSched));
    REQUIRE(cs.supports_vjp());
    RngStream rng(1);
    const Vector u = random_vector(g.total_dim(), rng);
    const Vector w = random_vector(g.total_dim(), rng);
    const Vector vjp = cs.score_vjp(u, 0.5, w);
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        Vector a = u;
        Vector b = u;
        a(k) += h;
        b(k) -= h;
        const double fd = (w.dot(cs.score(a, 0.5)) - w.dot(cs.score(b, 0.5))) / (2 * h);
        CHECK(std::abs(fd - vjp(k)) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
}
