#include <doctest.h>

#include "hmcda/error.hpp"
#include "hmcda/hmc.hpp"
#include "support.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

using namespace hmcda;

namespace {

FunctionPotential gaussian_target(std::size_t d, double var = 1.0) {
    return FunctionPotential(
        d, [var](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm() / var; },
        [var](const Eigen::VectorXd& x) { return Eigen::VectorXd(x / var); });
}

PhasePoint point(double x, double p) {
    return {Eigen::VectorXd::Constant(1, x), Eigen::VectorXd::Constant(1, p)};
}

double ks_statistic(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const boost::math::normal n01;
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = boost::math::cdf(n01, xs[i]);
        d = std::max({d, f - i / n, (i + 1) / n - f});
    }
    return d;
}

}  // namespace

TEST_CASE("kinetic and total energy") {
    const auto m4 = MassMatrix(Eigen::VectorXd::Constant(1, 4.0));
    CHECK(kinetic_energy(Eigen::VectorXd::Zero(1), m4) == 0.0);
    CHECK(kinetic_energy(Eigen::VectorXd::Constant(1, 2.0), m4) == doctest::Approx(0.5));
    CHECK(kinetic_energy(Eigen::VectorXd::Constant(1, 4.0), m4) == doctest::Approx(2.0));

    const auto j = gaussian_target(1);
    const auto id = MassMatrix::identity(1);
    CHECK(total_energy(point(0, 0), id, j) == 0.0);
    CHECK(total_energy(point(1, 0), id, j) == doctest::Approx(0.5));

    Rng rng(1);
    const PhasePoint pt{testing::randn(5, rng), testing::randn(5, rng)};
    const MassMatrix m(Eigen::VectorXd::LinSpaced(5, 0.5, 3.0));
    const double kin = 0.5 * (pt.p.array().square() / m.diagonal().array()).sum();
    CHECK(total_energy(pt, m, gaussian_target(5)) == doctest::Approx(kin + 0.5 * pt.x.squaredNorm()));

    CHECK_THROWS_AS(MassMatrix(Eigen::Vector2d(1.0, 0.0)), InvalidInput);
}

TEST_CASE("symplectic_step") {
    const auto id = MassMatrix::identity(1);
    const FunctionPotential flat(
        1, [](const Eigen::VectorXd&) { return 0.0; }, [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(1).eval(); });
    for (auto integ : {Integrator::verlet, Integrator::two_stage, Integrator::three_stage}) {
        const MassMatrix m(Eigen::VectorXd::Constant(1, 2.0));
        const auto s = symplectic_step(point(1.0, 3.0), {0.1, 1, integ}, m, flat);
        CHECK(s.x(0) == doctest::Approx(1.0 + 0.1 * 3.0 / 2.0));
        CHECK(s.p(0) == 3.0);
    }

    // Leapfrog by hand: p_half = -0.05, x' = 0.995, p' = -0.05 - 0.05 * 0.995.
    const auto s = symplectic_step(point(1.0, 0.0), {0.1, 1, Integrator::verlet}, id, gaussian_target(1));
    CHECK(s.x(0) == doctest::Approx(0.995).epsilon(1e-14));
    CHECK(s.p(0) == doctest::Approx(-0.09975).epsilon(1e-14));

    // One step moves the state by O(h).
    for (auto integ : {Integrator::verlet, Integrator::two_stage, Integrator::three_stage}) {
        const auto pt = point(0.7, -0.4);
        double prev = INFINITY;
        for (double h : {0.1, 0.05, 0.025}) {
            const auto q = symplectic_step(pt, {h, 1, integ}, id, gaussian_target(1));
            const double mv = std::hypot(q.x(0) - pt.x(0), q.p(0) - pt.p(0));
            CHECK(mv / h == doctest::Approx(std::hypot(0.4, 0.7)).epsilon(0.1));
            CHECK(mv < prev);
            prev = mv;
        }
    }

    const FunctionPotential bad(
        1, [](const Eigen::VectorXd&) { return 0.0; }, [](const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(1, NAN).eval(); });
    CHECK_THROWS_AS(symplectic_step(point(0, 1), {0.1, 1, Integrator::verlet}, id, bad), TrajectoryDivergence);

    CHECK_THROWS(TrajectoryParams{0.0, 1, Integrator::verlet}.validate());
    CHECK_THROWS(TrajectoryParams{0.1, 0, Integrator::verlet}.validate());
    CHECK(parse_integrator("three_stage") == Integrator::three_stage);
}

TEST_CASE("integrate_trajectory") {
    Rng rng(4);
    const MassMatrix m(Eigen::VectorXd::LinSpaced(3, 0.5, 2.0));
    // A smooth non-quadratic target.
    const FunctionPotential quartic(
        3, [](const Eigen::VectorXd& x) { return 0.25 * x.array().pow(4).sum() + 0.5 * x.squaredNorm(); },
        [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().pow(3) + x.array()); });

    for (auto integ : {Integrator::verlet, Integrator::two_stage, Integrator::three_stage}) {
        const PhasePoint pt{testing::randn(3, rng), testing::randn(3, rng)};
        const TrajectoryParams one{0.07, 1, integ};
        const auto a = integrate_trajectory(pt, one, m, quartic);
        const auto b = symplectic_step(pt, one, m, quartic);
        CHECK(a.x == b.x);
        CHECK(a.p == b.p);

        const TrajectoryParams tp{0.05, 40, integ};
        auto fwd = integrate_trajectory(pt, tp, m, quartic);
        fwd.p = -fwd.p;
        auto back = integrate_trajectory(fwd, tp, m, quartic);
        CHECK((back.x - pt.x).norm() < 1e-10);
        CHECK((-back.p - pt.p).norm() < 1e-10);
    }
}

TEST_CASE("energy error is second order in h") {
    const auto id = MassMatrix::identity(1);
    const auto j = gaussian_target(1);
    for (auto integ : {Integrator::verlet, Integrator::two_stage, Integrator::three_stage}) {
        std::vector<double> dh;
        for (double h : {0.1, 0.05, 0.025}) {
            const auto pt = point(1.0, 0.5);
            const auto q = integrate_trajectory(pt, {h, static_cast<int>(std::lround(1.3 / h)), integ}, id, j);
            dh.push_back(std::abs(total_energy(q, id, j) - total_energy(pt, id, j)));
        }
        for (std::size_t k = 1; k < dh.size(); ++k) {
            CHECK(dh[k - 1] / dh[k] >= 3.0);
            CHECK(dh[k - 1] / dh[k] <= 5.0);
        }
    }
}

TEST_CASE("acceptance_probability") {
    CHECK(acceptance_probability(-3.0) == 1.0);
    CHECK(acceptance_probability(0.0) == 1.0);
    CHECK(acceptance_probability(std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(acceptance_probability(INFINITY) == 0.0);
    CHECK(acceptance_probability(NAN) == 0.0);
}

TEST_CASE("propose_and_accept") {
    Rng rng(9);
    const auto id = MassMatrix::identity(2);
    const auto x = Eigen::Vector2d(0.3, -0.2);
    const auto t = propose_and_accept(x, id, gaussian_target(2), {1e-9, 1, Integrator::verlet}, rng);
    CHECK(t.accepted);
    CHECK(std::abs(t.delta_h) < 1e-12);
    CHECK((t.x - x).norm() < 1e-8);

    const FunctionPotential diverging(
        2, [](const Eigen::VectorXd& v) { return v(0) > 0.5 ? NAN : 0.0; },
        [](const Eigen::VectorXd&) { return Eigen::Vector2d(-1e6, 0).eval(); });
    Rng rng2(1);
    const auto r = propose_and_accept(Eigen::Vector2d::Zero(), id, diverging, {0.1, 5, Integrator::verlet}, rng2);
    CHECK_FALSE(r.accepted);
    CHECK(r.delta_h == INFINITY);
    CHECK(r.x == Eigen::Vector2d::Zero());
}

TEST_CASE("run_chain on a standard Gaussian") {
    const auto j = gaussian_target(1);
    const TrajectoryParams tp{0.3, 5, Integrator::verlet};
    ChainConfig cfg{.burn_in = 20, .mixing_steps = 1, .seed = 3, .initial = Eigen::VectorXd::Constant(1, 2.0)};
    const auto r = run_chain(j, MassMatrix::identity(1), tp, cfg, 2000);
    REQUIRE(r.samples.size() == 2000);
    CHECK(r.samples.members.allFinite());
    const auto xs = r.samples.members.row(0);
    const double mean = xs.mean();
    const double var = (xs.array() - mean).square().sum() / 1999.0;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(1000.0));
    CHECK(std::abs(var - 1.0) < 0.15);
    CHECK(ks_statistic(std::vector<double>(xs.begin(), xs.end())) < 0.05);

    CHECK(r.stats.proposals == 2000 * 2);
    CHECK(r.stats.acceptance_rate >= 0.0);
    CHECK(r.stats.acceptance_rate <= 1.0);
    CHECK(r.stats.acceptance_rate == doctest::Approx(double(r.stats.acceptances) / r.stats.proposals));

    const auto again = run_chain(j, MassMatrix::identity(1), tp, cfg, 2000);
    CHECK(again.samples.members == r.samples.members);

    const auto js = to_json(r.stats);
    CHECK(js.contains("mean_abs_dH"));
    CHECK(js.at("proposals") == 4000);
}

TEST_CASE("acceptance does not drop as h shrinks at fixed T") {
    const auto j = gaussian_target(10);
    double prev = -1.0;
    for (double h : {0.2, 0.1, 0.05}) {
        ChainConfig cfg{.burn_in = 0, .mixing_steps = 0, .seed = 5, .initial = Eigen::VectorXd::Zero(10)};
        const auto r = run_chain(j, MassMatrix::identity(10), {h, static_cast<int>(std::lround(1.2 / h)), Integrator::verlet},
                                 cfg, 400);
        CHECK(r.stats.acceptance_rate >= prev);
        prev = r.stats.acceptance_rate;
    }
}
