#include <doctest.h>

#include "hmcda/error.hpp"
#include "hmcda/potentials.hpp"
#include "support.hpp"

#include <cmath>
#include <numbers>

using namespace hmcda;

namespace {

Observation obs(Eigen::VectorXd y, double r) {
    const auto n = y.size();
    return {std::move(y), Eigen::VectorXd::Constant(n, r)};
}

GmmParams random_mixture(std::size_t d, std::size_t k, std::uint64_t seed, double spread = 2.0) {
    Rng rng(seed);
    Eigen::VectorXd w(static_cast<Eigen::Index>(k));
    std::vector<Eigen::VectorXd> mu;
    std::vector<CovarianceEstimate> cov;
    for (std::size_t i = 0; i < k; ++i) {
        w(static_cast<Eigen::Index>(i)) = 0.5 + rng.uniform();
        mu.push_back(testing::randn(d, rng, spread));
        Eigen::VectorXd v(static_cast<Eigen::Index>(d));
        for (auto& x : v) x = 0.2 + rng.uniform();
        cov.push_back(CovarianceEstimate::from_diagonal(v));
    }
    return GmmParams(w / w.sum(), mu, cov);
}

std::shared_ptr<const ObservationOperator> every_other(std::size_t d) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d; i += 2) idx.push_back(i);
    return std::make_shared<SelectionOperator>(idx, d);
}

// Posterior kernel sum_i tau_i N(x; mu_i, s_i) exp(-misfit) in 1D, long double.
long double kernel_1d(double x, const GmmParams& g, double y, double r) {
    long double s = 0;
    for (std::size_t i = 0; i < g.n_components(); ++i) {
        const long double v = g.covariance(i).variances()(0);
        const long double d = x - g.mean(i)(0);
        s += g.weight(i) * std::exp(-0.5L * d * d / v) / std::sqrt(2.0L * std::numbers::pi_v<long double> * v);
    }
    const long double m = x - y;
    return s * std::exp(-0.5L * m * m / r);
}

}  // namespace

TEST_CASE("observation operators satisfy the adjoint identity") {
    Rng rng(2);
    const std::size_t n = 17;
    SelectionOperator sel({1, 4, 9, 16}, n);
    MatrixOperator mat(Eigen::MatrixXd::Random(5, static_cast<Eigen::Index>(n)));
    IdentityOperator id(n);
    for (const ObservationOperator* op : std::initializer_list<const ObservationOperator*>{&sel, &mat, &id}) {
        const Eigen::VectorXd u = testing::randn(n, rng), v = testing::randn(op->obs_dim(), rng);
        CHECK(std::abs(op->apply(u).dot(v) - u.dot(op->adjoint_apply(u, v))) < 1e-10);
        CHECK(op->adjoint_apply(u, v) == op->adjoint_apply(testing::randn(n, rng), v));
    }
    CHECK(sel.apply(Eigen::VectorXd::LinSpaced(17, 0, 16)) == Eigen::Vector4d(1, 4, 9, 16));
    CHECK_THROWS_AS(SelectionOperator({17}, n), InvalidInput);
}

TEST_CASE("obs_misfit") {
    IdentityOperator id(1);
    const auto y = obs(Eigen::VectorXd::Constant(1, -0.06858), 1.2);
    CHECK(obs_misfit(y.values, y, id) == 0.0);
    CHECK(obs_misfit(Eigen::VectorXd::Zero(1), y, id) == doctest::Approx(1.9596e-3).epsilon(1e-4));
    CHECK(obs_misfit(Eigen::VectorXd::Zero(1), y, id) == doctest::Approx(0.5 * 0.06858 * 0.06858 / 1.2));
    const auto y2 = obs(y.values, 2.4);
    CHECK(obs_misfit(Eigen::VectorXd::Zero(1), y2, id) == doctest::Approx(0.5 * obs_misfit(Eigen::VectorXd::Zero(1), y, id)));
}

TEST_CASE("GaussianPotential") {
    auto id1 = std::make_shared<IdentityOperator>(1);
    GaussianPotential zero({Eigen::VectorXd::Constant(1, 2.0), CovarianceEstimate::from_diagonal(Eigen::VectorXd::Ones(1))},
                           obs(Eigen::VectorXd::Constant(1, 2.0), 1.0), id1);
    CHECK(zero.value(Eigen::VectorXd::Constant(1, 2.0)) == 0.0);
    CHECK(zero.gradient(Eigen::VectorXd::Constant(1, 2.0))(0) == 0.0);

    GaussianPotential hand({Eigen::VectorXd::Zero(1), CovarianceEstimate::from_diagonal(Eigen::VectorXd::Ones(1))},
                           obs(Eigen::VectorXd::Constant(1, 2.0), 1.0), id1);
    CHECK(hand.value(Eigen::VectorXd::Ones(1)) == doctest::Approx(1.0));
    CHECK(hand.gradient(Eigen::VectorXd::Ones(1))(0) == doctest::Approx(0.0));

    CHECK_THROWS_AS(GaussianPotential({Eigen::VectorXd::Zero(2), CovarianceEstimate::from_full(Eigen::MatrixXd::Ones(2, 2))},
                                      obs(Eigen::VectorXd::Zero(2), 1.0), std::make_shared<IdentityOperator>(2)),
                    InvalidInput);

    Rng rng(7);
    for (std::size_t d : {1, 3, 50}) {
        const Eigen::MatrixXd a = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        const Eigen::MatrixXd b = a * a.transpose() + Eigen::MatrixXd::Identity(a.rows(), a.rows());
        auto op = every_other(d);
        const auto y = obs(testing::randn(op->obs_dim(), rng), 0.7);
        for (bool full : {false, true}) {
            const auto cov = full ? CovarianceEstimate::from_full(b) : CovarianceEstimate::from_diagonal(b.diagonal());
            GaussianPotential j({testing::randn(d, rng), cov}, y, op);
            for (int k = 0; k < 20; ++k) {
                const Eigen::VectorXd x = testing::randn(d, rng, 2.0);
                CHECK(testing::rel_error(j.gradient(x), testing::fd_gradient(j, x)) < 1e-6);
            }
        }
    }
}

TEST_CASE("component_quadratic") {
    const GmmParams g(Eigen::VectorXd::Ones(1), {Eigen::VectorXd::Ones(1)},
                      {CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, 4.0))});
    const MixturePriorSpec spec(g);
    const auto at_mean = component_quadratic(Eigen::VectorXd::Ones(1), 0, spec);
    CHECK(at_mean.value == 0.0);
    CHECK(at_mean.gradient(0) == 0.0);
    const auto v = component_quadratic(Eigen::VectorXd::Constant(1, 3.0), 0, spec);
    CHECK(v.value == doctest::Approx(0.5));
    CHECK(v.gradient(0) == doctest::Approx(0.5));
    CHECK(component_quadratic(Eigen::VectorXd::Constant(1, 5.0), 0, spec).value == doctest::Approx(4.0 * v.value));
    CHECK(spec.log_coefficient(0) == doctest::Approx(-0.5 * std::log(4.0)));
}

TEST_CASE("mixture_potential values") {
    const GmmParams unit(Eigen::VectorXd::Ones(1), {Eigen::VectorXd::Zero(2)},
                         {CovarianceEstimate::from_diagonal(Eigen::VectorXd::Ones(2))});
    IdentityOperator id2(2);
    CHECK(mixture_potential(Eigen::VectorXd::Zero(2), MixturePriorSpec(unit), obs(Eigen::VectorXd::Zero(2), 1.0), id2) == 0.0);

    // Single component: differs from the Gaussian potential by a constant.
    Rng rng(3);
    const auto g1 = random_mixture(4, 1, 11);
    auto op = every_other(4);
    const auto y = obs(testing::randn(2, rng), 0.5);
    const MixturePotential mp(MixturePriorSpec(g1), y, op);
    const GaussianPotential gp({g1.mean(0), g1.covariance(0)}, y, op);
    const double c = 0.5 * g1.log_det(0);
    Eigen::VectorXd diffs(100);
    for (int k = 0; k < 100; ++k) {
        const Eigen::VectorXd x = testing::randn(4, rng, 3.0);
        diffs(k) = mp.value(x) - gp.value(x);
        CHECK(diffs(k) == doctest::Approx(c).epsilon(1e-12));
        CHECK(mp.gradient(x).isApprox(gp.gradient(x), 1e-14));
    }
    CHECK((diffs.array() - diffs.mean()).square().sum() / 99.0 < 1e-16);

    // Well separated pair at mu_1: the correction term is negligible.
    const GmmParams sep(Eigen::Vector2d(0.3, 0.7), {Eigen::VectorXd::Constant(1, -40.0), Eigen::VectorXd::Constant(1, 40.0)},
                        {CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, 0.5)),
                         CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, 0.8))});
    IdentityOperator id1(1);
    const auto y1 = obs(Eigen::VectorXd::Constant(1, 0.2), 1.2);
    const Eigen::VectorXd x1 = Eigen::VectorXd::Constant(1, -40.0);
    const double expect = obs_misfit(x1, y1, id1) - std::log(0.3 / std::sqrt(0.5));
    CHECK(std::abs(mixture_potential(x1, MixturePriorSpec(sep), y1, id1) - expect) < 1e-12);
}

TEST_CASE("mixture_potential matches the posterior kernel") {
    Rng rng(21);
    IdentityOperator id1(1);
    const auto g = random_mixture(1, 4, 5, 1.5);
    const MixturePriorSpec spec(g);
    const auto y = obs(Eigen::VectorXd::Constant(1, 0.3), 1.2);
    for (int k = 0; k < 50; ++k) {
        const double a = 2.0 * rng.normal(), b = 2.0 * rng.normal();
        const double jr = mixture_potential(Eigen::VectorXd::Constant(1, a), spec, y, id1) -
                          mixture_potential(Eigen::VectorXd::Constant(1, b), spec, y, id1);
        const long double ratio = kernel_1d(a, g, 0.3, 1.2) / kernel_1d(b, g, 0.3, 1.2);
        CHECK(std::abs(std::exp(-jr) / static_cast<double>(ratio) - 1.0) < 1e-8);
    }
}

TEST_CASE("mixture_potential is invariant under component order") {
    Rng rng(8);
    const auto g = random_mixture(3, 4, 9);
    const GmmParams rev(g.weights().reverse(), {g.mean(3), g.mean(2), g.mean(1), g.mean(0)},
                        {g.covariance(3), g.covariance(2), g.covariance(1), g.covariance(0)});
    auto op = every_other(3);
    const auto y = obs(testing::randn(2, rng), 1.0);
    for (int k = 0; k < 20; ++k) {
        const Eigen::VectorXd x = testing::randn(3, rng, 2.0);
        CHECK(std::abs(mixture_potential(x, MixturePriorSpec(g), y, *op) - mixture_potential(x, MixturePriorSpec(rev), y, *op)) <
              1e-10);
    }
}

TEST_CASE("mixture_potential_gradient") {
    // Symmetric pair, no information from the observation: zero at the origin.
    const GmmParams sym(Eigen::Vector2d(0.5, 0.5), {Eigen::VectorXd::Constant(1, -1.3), Eigen::VectorXd::Constant(1, 1.3)},
                        {CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, 0.4)),
                         CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, 0.4))});
    IdentityOperator id1(1);
    const auto flat = obs(Eigen::VectorXd::Zero(1), 1e300);
    CHECK(std::abs(mixture_potential_gradient(Eigen::VectorXd::Zero(1), MixturePriorSpec(sym), flat, id1)(0)) < 1e-15);

    Rng rng(12);
    for (std::size_t d : {1, 3, 50}) {
        for (std::size_t k : {1, 2, 4}) {
            const auto g = random_mixture(d, k, 100 * d + k, 1.0);
            auto op = every_other(d);
            const MixturePotential mp(MixturePriorSpec(g), obs(testing::randn(op->obs_dim(), rng), 0.8), op);
            for (int t = 0; t < 20; ++t) {
                const Eigen::VectorXd x = testing::randn(d, rng, 1.0);
                CHECK(testing::rel_error(mp.gradient(x), testing::fd_gradient(mp, x)) < 1e-6);
                const auto vg = mixture_potential_value_gradient(x, mp.prior(), obs(Eigen::VectorXd::Zero(op->obs_dim()), 1.0), *op);
                CHECK(vg.value == mixture_potential(x, mp.prior(), obs(Eigen::VectorXd::Zero(op->obs_dim()), 1.0), *op));
            }
        }
    }
}

TEST_CASE("mixture_potential stays finite far from every component") {
    const auto g = random_mixture(2, 3, 4);
    IdentityOperator id2(2);
    const Eigen::VectorXd x = Eigen::Vector2d(1e4, -1e4);
    const auto vg = mixture_potential_value_gradient(x, MixturePriorSpec(g), obs(Eigen::VectorXd::Zero(2), 1.0), id2);
    CHECK(std::isfinite(vg.value));
    CHECK(vg.gradient.allFinite());
}
