#include <doctest.h>

#include "hmcda/error.hpp"
#include "hmcda/filters.hpp"
#include "hmcda/gmm.hpp"
#include "support.hpp"

#include <cmath>

using namespace hmcda;

namespace {

Observation obs(Eigen::VectorXd y, double r) {
    const auto n = y.size();
    return {std::move(y), Eigen::VectorXd::Constant(n, r)};
}

GmmParams pair_1d(double w1, double m1, double m2, double v = 0.1) {
    return GmmParams(Eigen::Vector2d(w1, 1.0 - w1), {Eigen::VectorXd::Constant(1, m1), Eigen::VectorXd::Constant(1, m2)},
                     {CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, v)),
                      CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, v))});
}

Ensemble bimodal(std::size_t dim, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
    for (Eigen::Index e = 0; e < m.cols(); ++e)
        for (Eigen::Index k = 0; k < m.rows(); ++k) m(k, e) = (e % 2 ? 3.0 : -3.0) + 0.5 * rng.normal();
    return Ensemble(m);
}

FilterConfig sampling_cfg(FilterKind kind) {
    FilterConfig c = default_filter_config(kind, false, false);
    c.trajectory = {0.1, 10, Integrator::verlet};
    c.mixing_steps = 2;
    c.burn_in = 10;
    c.gmm.candidates = {1, 2, 3};
    c.gmm.min_members = 3;
    c.seed = 17;
    return c;
}

}  // namespace

TEST_CASE("forecast") {
    const Ensemble ens = testing::random_ensemble(4, 6, 1);
    FunctionPropagator ident([](const StateVector& x, int, int) { return x; });
    CHECK(forecast(ident, ens, 0, 3).members == ens.members);
    FunctionPropagator twice([](const StateVector& x, int, int) { return StateVector(2.0 * x); });
    const Ensemble f = forecast(twice, ens, 0, 1);
    CHECK(f.members == 2.0 * ens.members);
    CHECK(f.time_index == 1);
    CHECK(twice.advance(ens.member(0), 5, 5) == ens.member(0));

    FunctionPropagator broken([](const StateVector& x, int, int) {
        if (x(0) > 0) throw std::runtime_error("boom");
        return x;
    });
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(2, 3, -1.0);
    m(0, 2) = 1.0;
    try {
        forecast(broken, Ensemble(m), 0, 1);
        FAIL("expected ForecastFailure");
    } catch (const ForecastFailure& e) {
        CHECK(e.member() == 2);
    }
}

TEST_CASE("build_mass_matrix") {
    Eigen::MatrixXd m(2, 3);
    m << -2, 0, 2,   // variance 4
        5, 5, 5;     // no spread
    const Ensemble ens(m);
    const auto mass = build_mass_matrix(ens);
    CHECK(mass.diagonal()(0) == doctest::Approx(0.25));
    CHECK(mass.diagonal()(1) == doctest::Approx(1.0 / default_variance_floor(ens)(1)));

    // Local: members 0 and 2 form a component (variance 8), blended with 5.
    const ComponentLabels lab{{0, 1, 0}, 0};
    CHECK(build_mass_matrix(ens, lab).diagonal()(0) == doctest::Approx(1.0 / 8.0));
    CHECK(build_mass_matrix(ens, lab, 5.0).diagonal()(0) == doctest::Approx(1.0 / 6.5));
    // Blending leaves zero-spread coordinates alone.
    CHECK(build_mass_matrix(ens, lab, 5.0).diagonal()(1) == mass.diagonal()(1));
    // One-member component: global variances.
    CHECK(build_mass_matrix(ens, ComponentLabels{{0, 1, 0}, 1}).diagonal()(0) == doctest::Approx(0.25));

    CHECK(blend_variances(Eigen::Vector2d(1, 3), Eigen::Vector2d(1, 1), 0.0) == Eigen::Vector2d(1, 3));
    CHECK(blend_variances(Eigen::Vector2d(1, 3), Eigen::Vector2d(1, 0), 5.0) == Eigen::Vector2d(3, 3));
}

TEST_CASE("allocate_chain_sizes") {
    IdentityOperator id(1);
    // Component means where the likelihood is 1 (at y).
    CHECK(allocate_chain_sizes(pair_1d(0.5, 0.0, 0.0), obs(Eigen::VectorXd::Zero(1), 1.0), id, 100) ==
          std::vector<std::size_t>{50, 50});
    CHECK(allocate_counts({std::log(0.5 * 0.8), std::log(0.5 * 0.2)}, 100) == std::vector<std::size_t>{80, 20});
    CHECK(allocate_counts({std::log(0.5 * 0.2), std::log(0.5 * 0.8)}, 100) == std::vector<std::size_t>{20, 80});
    CHECK(allocate_counts({-3.0}, 37) == std::vector<std::size_t>{37});

    // l = exp(-1/2 d^2 / r) with d chosen so that l = (0.8, 0.2).
    const double r = 1.0;
    const double d2 = std::sqrt(-2.0 * std::log(0.2));
    const double d1 = std::sqrt(-2.0 * std::log(0.8));
    CHECK(allocate_chain_sizes(pair_1d(0.5, d1, -d2), obs(Eigen::VectorXd::Zero(1), r), id, 100) ==
          std::vector<std::size_t>{80, 20});

    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> lr(1 + rng.index(6));
        for (auto& v : lr) v = 10.0 * rng.normal();
        const std::size_t n = lr.size() + rng.index(200);
        const auto c = allocate_counts(lr, n);
        CHECK(std::accumulate(c.begin(), c.end(), std::size_t{0}) == n);
        for (auto v : c) CHECK(v >= 1);
        std::vector<double> rev(lr.rbegin(), lr.rend());
        const auto cr = allocate_counts(rev, n);
        // Permutation equivariance holds up to remainder ties.
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(double(c[i]) - double(cr[c.size() - 1 - i])) <= 1.0);
    }

    // Everything underflows: equal split.
    CHECK(allocate_counts({-INFINITY, -INFINITY}, 10) == std::vector<std::size_t>{5, 5});
}

TEST_CASE("init_chain_position") {
    const Ensemble ens = testing::random_ensemble(1, 10, 3);
    const auto g = pair_1d(0.2, -1.0, 4.0);
    IdentityOperator id(1);
    const auto y = obs(Eigen::VectorXd::Constant(1, -0.8), 1.0);
    CHECK(init_chain_position(ens, nullptr, InitPolicy::ensemble_mean) == ensemble_mean(ens));
    CHECK(init_chain_position(ens, &g, InitPolicy::max_weight_component_mean)(0) == 4.0);
    CHECK(init_chain_position(ens, &g, InitPolicy::max_likelihood_component_mean, &y, &id)(0) == -1.0);
    CHECK_THROWS_AS(init_chain_position(ens, nullptr, InitPolicy::max_weight_component_mean), InvalidInput);
}

TEST_CASE("DEnKF scalar case") {
    const double a = 1.0 / std::sqrt(2.0);
    const Ensemble ens(Eigen::RowVector2d(-a, a));
    auto id = std::make_shared<IdentityOperator>(1);
    FilterConfig cfg = default_filter_config(FilterKind::denkf, false, false);
    cfg.inflation = 1.0;
    const auto r = denkf_analysis(ens, obs(Eigen::VectorXd::Constant(1, 2.0), 1.0), id, cfg);
    CHECK(std::abs(ensemble_mean(r.analysis)(0) - 1.0) < 1e-12);
    CHECK(anomalies(r.analysis).isApprox(0.75 * anomalies(ens)));

    const auto vague = denkf_analysis(ens, obs(Eigen::VectorXd::Constant(1, 2.0), 1e14), id, cfg);
    CHECK(vague.analysis.members.isApprox(ens.members, 1e-12));

    const Ensemble big = testing::random_ensemble(6, 8, 5);
    auto sel = std::make_shared<SelectionOperator>(std::vector<std::size_t>{0, 3, 5}, 6);
    cfg.localization_radius = 2.0;
    const auto same = denkf_analysis(big, obs(sel->apply(ensemble_mean(big)), 1.0), sel, cfg);
    CHECK(ensemble_mean(same.analysis).isApprox(ensemble_mean(big)));
    CHECK(anomalies(same.analysis).norm() < anomalies(big).norm());

    cfg.inflation = 1.06;
    const auto infl = denkf_analysis(ens, obs(Eigen::VectorXd::Constant(1, 2.0), 1.0), id, cfg);
    CHECK(anomalies(infl.analysis).isApprox(1.06 * 0.75 * anomalies(ens)));
}

TEST_CASE("HMC analysis on a conjugate Gaussian") {
    Rng rng(4);
    Eigen::MatrixXd m(1, 200);
    for (auto& v : m.reshaped()) v = 1.0 + 2.0 * rng.normal();
    const Ensemble ens(m);
    const double xb = ensemble_mean(ens)(0);
    const double b = ensemble_covariance(ens, true).diagonal()(0);
    const double r = 1.5, y = -2.0;
    const double post_mean = (xb / b + y / r) / (1.0 / b + 1.0 / r);
    const double post_var = 1.0 / (1.0 / b + 1.0 / r);

    auto id = std::make_shared<IdentityOperator>(1);
    FilterConfig cfg = sampling_cfg(FilterKind::hmc);
    cfg.trajectory = {0.3, 5, Integrator::verlet};
    cfg.n_samples = 1000;
    const auto res = hmc_analysis(ens, obs(Eigen::VectorXd::Constant(1, y), r), id, cfg);
    REQUIRE(res.analysis.size() == 1000);
    CHECK(std::abs(ensemble_mean(res.analysis)(0) - post_mean) < 4.0 * std::sqrt(post_var / 300.0));
    CHECK(res.acceptance_rate().has_value());

    const auto again = hmc_analysis(ens, obs(Eigen::VectorXd::Constant(1, y), r), id, cfg);
    CHECK(again.analysis.members == res.analysis.members);

    // Observation at the background: the chain stays around xb.
    const auto still = hmc_analysis(ens, obs(Eigen::VectorXd::Constant(1, xb), r), id, cfg);
    CHECK(std::abs(ensemble_mean(still.analysis)(0) - xb) < 4.0 * std::sqrt(post_var / 300.0));
}

TEST_CASE("single-component ClHMC and MC-ClHMC reduce to HMC") {
    const Ensemble ens = testing::random_ensemble(5, 20, 8);
    auto sel = std::make_shared<SelectionOperator>(std::vector<std::size_t>{0, 2, 4}, 5);
    const auto y = obs(Eigen::Vector3d(0.5, -0.2, 0.1), 0.8);
    FilterConfig cfg = sampling_cfg(FilterKind::hmc);
    cfg.gmm.candidates = {1};
    const auto h = hmc_analysis(ens, y, sel, cfg);
    cfg.kind = FilterKind::clhmc;
    const auto c = clhmc_analysis(ens, y, sel, cfg);
    cfg.kind = FilterKind::mc_clhmc;
    const auto mc = mc_clhmc_analysis(ens, y, sel, cfg);
    CHECK(c.fell_back_to_hmc);
    CHECK(c.analysis.members == h.analysis.members);
    CHECK(mc.analysis.members == h.analysis.members);
    REQUIRE(c.gmm.has_value());
    CHECK(c.gmm->selected_n_c == 1);
}

TEST_CASE("ClHMC and MC-ClHMC on a bimodal forecast") {
    const Ensemble ens = bimodal(3, 40, 6);
    auto id = std::make_shared<IdentityOperator>(3);
    const auto y = obs(Eigen::Vector3d(0.0, 0.0, 0.0), 25.0);

    FilterConfig cfg = sampling_cfg(FilterKind::clhmc);
    cfg.gmm.candidates = {1, 2};
    const auto c = clhmc_analysis(ens, y, id, cfg);
    REQUIRE(c.gmm.has_value());
    CHECK(c.gmm->selected_n_c == 2);
    CHECK(c.analysis.size() == 40);
    CHECK(c.analysis.members.allFinite());
    CHECK(clhmc_analysis(ens, y, id, cfg).analysis.members == c.analysis.members);

    cfg.kind = FilterKind::mc_clhmc;
    cfg.burn_in = 0;
    const auto mc = mc_clhmc_analysis(ens, y, id, cfg);
    CHECK(mc.analysis.size() == 40);
    REQUIRE(mc.chain_sizes.size() == 2);
    CHECK(mc.chain_sizes[0] + mc.chain_sizes[1] == 40);
    // Both modes are populated.
    const auto row = mc.analysis.members.row(0);
    CHECK((row.array() < 0).count() >= 10);
    CHECK((row.array() > 0).count() >= 10);

    // Chain results do not depend on how many workers run them.
    cfg.threads = 2;
    CHECK(mc_clhmc_analysis(ens, y, id, cfg).analysis.members == mc.analysis.members);

    cfg.n_samples = 25;
    CHECK(mc_clhmc_analysis(ens, y, id, cfg).analysis.size() == 25);
}

TEST_CASE("analysis_step dispatch and whitened analysis") {
    const Ensemble ens = testing::random_ensemble(8, 20, 12);
    auto sel = std::make_shared<SelectionOperator>(std::vector<std::size_t>{1, 4, 7}, 8);
    const auto y = obs(Eigen::Vector3d(0.3, -0.4, 0.2), 1.0);
    FilterConfig cfg = sampling_cfg(FilterKind::hmc);
    CHECK(analysis_step(ens, y, sel, cfg).analysis.members == hmc_analysis(ens, y, sel, cfg).analysis.members);

    cfg.precision_radius = 2.0;
    const auto w = analysis_step(ens, y, sel, cfg);
    CHECK(w.analysis.size() == 20);
    CHECK(w.analysis.members.allFinite());
    CHECK(w.forecast.members == ens.members);
    CHECK(w.analysis.members == whitened_analysis(ens, y, sel, cfg).analysis.members);

    cfg.full_covariance = true;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("FilterConfig defaults and validation") {
    const auto mc = default_filter_config(FilterKind::mc_clhmc, false, true);
    CHECK(mc.trajectory.h == 0.05);
    CHECK(mc.trajectory.m == 15);
    CHECK(mc.divide_h_by_n_c);
    CHECK(mc.burn_in == 0);
    CHECK(mc.variance_blend == 5.0);
    CHECK(mc.trajectory.integrator == Integrator::three_stage);
    CHECK(default_filter_config(FilterKind::mc_clhmc, true, true).trajectory.h == 0.0075);

    const auto h = default_filter_config(FilterKind::hmc, false, true);
    CHECK(h.trajectory.h == 0.075);
    CHECK(h.trajectory.m == 25);
    CHECK(h.burn_in == 50);
    CHECK(h.mixing_steps == 15);
    CHECK(default_filter_config(FilterKind::clhmc, true, true).trajectory.h == 0.015);

    const auto d = default_filter_config(FilterKind::denkf, false, true);
    CHECK(d.localization_radius == 12.0);
    CHECK(d.inflation == 1.06);

    const auto s = default_filter_config(FilterKind::mc_clhmc, false, false);
    CHECK(s.trajectory.integrator == Integrator::verlet);
    CHECK(s.trajectory.h == 0.05);
    CHECK(s.trajectory.m == 20);
    CHECK(s.variance_blend == 0.0);

    FilterConfig bad = d;
    bad.inflation = 0.9;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = mc;
    bad.gmm.candidates.clear();
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    CHECK(parse_filter_kind("MC_ClHMC") == FilterKind::mc_clhmc);
    CHECK_THROWS_AS(parse_filter_kind("enkf"), InvalidInput);
}
