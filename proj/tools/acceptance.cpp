// Acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   hmcda_acceptance [--only N]... [--known-failure N]... [--out DIR]
//
// Exit status is 0 when every criterion passes or fails only where listed
// with --known-failure.

#include "hmcda/config.hpp"
#include "hmcda/diagnostics.hpp"
#include "hmcda/error.hpp"
#include "hmcda/filters.hpp"
#include "hmcda/gmm.hpp"
#include "hmcda/harness.hpp"
#include "hmcda/hmc.hpp"
#include "hmcda/log.hpp"
#include "hmcda/potentials.hpp"
#include "hmcda/qg.hpp"

#include <CLI11.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#ifndef HMCDA_SOURCE_DIR
#define HMCDA_SOURCE_DIR "."
#endif

using namespace hmcda;
namespace fs = std::filesystem;

namespace {

constexpr double pi = 3.14159265358979323846;

struct Verdict {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) pass = false;
        notes.push_back((ok ? "" : "!") + what);
    }
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Eigen::VectorXd randn(std::size_t n, Rng& rng, double scale = 1.0) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

Observation obs(Eigen::VectorXd y, double r) {
    const auto n = y.size();
    return {std::move(y), Eigen::VectorXd::Constant(n, r)};
}

std::shared_ptr<const ObservationOperator> every_other(std::size_t d) {
    if (d == 1) return std::make_shared<IdentityOperator>(1);
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < d; k += 2) idx.push_back(k);
    return std::make_shared<SelectionOperator>(idx, d);
}

GmmParams random_mixture(std::size_t d, std::size_t k, Rng& rng) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(k));
    for (auto& v : w) v = 0.2 + rng.uniform();
    w /= w.sum();
    std::vector<Eigen::VectorXd> means;
    std::vector<CovarianceEstimate> covs;
    for (std::size_t i = 0; i < k; ++i) {
        means.push_back(randn(d, rng, 2.0));
        Eigen::VectorXd var(static_cast<Eigen::Index>(d));
        for (auto& v : var) v = 0.5 + rng.uniform();
        covs.push_back(CovarianceEstimate::from_diagonal(var));
    }
    return GmmParams(w, means, covs);
}

Eigen::VectorXd fd_gradient(const PotentialFunction& f, const Eigen::VectorXd& x) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(x(k)));
        Eigen::VectorXd a = x, b = x;
        a(k) += h;
        b(k) -= h;
        g(k) = (f.value(a) - f.value(b)) / (2 * h);
    }
    return g;
}

double ks_normal(std::vector<double> xs) {
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

Ensemble draw_1d(std::size_t n, Rng& rng, const std::function<double(std::size_t)>& center) {
    Eigen::MatrixXd m(1, static_cast<Eigen::Index>(n));
    for (std::size_t e = 0; e < n; ++e) m(0, static_cast<Eigen::Index>(e)) = center(e) + rng.normal();
    return Ensemble(m);
}

// ---------------------------------------------------------------------------

Verdict criterion_1() {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    const GmmParams truth = static_1d_truth_prior();
    const double y = -0.06858, r = 1.2;
    FilterConfig cfg = default_filter_config(FilterKind::mc_clhmc, false, false);
    cfg.trajectory = {0.05, 20, Integrator::verlet};
    cfg.divide_h_by_n_c = false;
    cfg.burn_in = 0;
    cfg.mixing_steps = 15;
    cfg.seed = derive_seed(2024, streams::filter);
    cfg.threads = 1;
    const auto res = mc_clhmc_sample_mixture(truth, obs(Eigen::VectorXd::Constant(1, y), r),
                                             std::make_shared<IdentityOperator>(1), cfg, 1000);
    const double secs = seconds_since(t0);

    v.check(res.samples.size() == 1000, "samples " + std::to_string(res.samples.size()));
    const double tv = total_variation(sample_bin_fractions(res.samples, 61, -3.5, 3.5),
                                      posterior_bin_masses(truth, y, r, 61, -3.5, 3.5));
    v.check(tv < 0.15, "TV " + fmt(tv));
    double worst = 1.0;
    for (const auto& m : mode_coverage(truth, y, r, res.samples, -3.5, 3.5))
        if (m.analytic_mass >= 0.05) worst = std::min(worst, m.sample_fraction);
    v.check(worst >= 0.01, "min share of modes with >=5% mass " + fmt(worst));
    v.check(secs < 30.0, fmt(secs, 3) + " s");
    return v;
}

Verdict criterion_2() {
    Verdict v;
    Rng rng(derive_seed(2, 0));
    const std::size_t d = 6;
    const GmmParams g1 = random_mixture(d, 1, rng);
    const auto op = every_other(d);
    const Observation y = obs(randn(op->obs_dim(), rng), 0.5);
    const MixturePotential mp(MixturePriorSpec(g1), y, op);
    const GaussianPotential gp({g1.mean(0), g1.covariance(0)}, y, op);
    std::vector<double> diffs;
    for (int k = 0; k < 100; ++k) {
        const Eigen::VectorXd x = randn(d, rng, 3.0);
        diffs.push_back(mp.value(x) - gp.value(x));
    }
    double mean = 0.0;
    for (double x : diffs) mean += x / 100.0;
    double var = 0.0;
    for (double x : diffs) var += (x - mean) * (x - mean) / 99.0;
    v.check(var < 1e-16, "variance of differences " + fmt(var));

    // Forecast from one Gaussian; n_c forced to 1.
    Eigen::MatrixXd m(8, 30);
    for (auto& x : m.reshaped()) x = 1.0 + 0.7 * rng.normal();
    const Ensemble fc(m);
    auto sel = std::make_shared<SelectionOperator>(std::vector<std::size_t>{0, 3, 6}, 8);
    const Observation yo = obs(Eigen::Vector3d(1.4, 0.2, 0.9), 0.6);
    FilterConfig cfg = default_filter_config(FilterKind::hmc, false, false);
    cfg.trajectory = {0.1, 10, Integrator::verlet};
    cfg.burn_in = 10;
    cfg.mixing_steps = 3;
    cfg.gmm.candidates = {1};
    cfg.seed = 77;
    cfg.threads = 1;
    const auto h = hmc_analysis(fc, yo, sel, cfg);
    cfg.kind = FilterKind::clhmc;
    const auto c = clhmc_analysis(fc, yo, sel, cfg);
    cfg.kind = FilterKind::mc_clhmc;
    const auto mc = mc_clhmc_analysis(fc, yo, sel, cfg);
    v.check(c.analysis.members == h.analysis.members, "ClHMC == HMC bitwise");
    v.check(mc.analysis.members == h.analysis.members, "MC-ClHMC == HMC bitwise");
    return v;
}

Verdict criterion_3() {
    Verdict v;
    Rng rng(derive_seed(3, 0));
    double worst = 0.0;
    auto rel = [](const Eigen::VectorXd& g, const Eigen::VectorXd& fd) {
        return (g - fd).norm() / std::max(fd.norm(), 1e-8);
    };
    for (std::size_t d : {1, 3, 50}) {
        const auto op = every_other(d);
        const Observation y = obs(randn(op->obs_dim(), rng), 0.8);
        for (std::size_t k : {1, 2, 4}) {
            const MixturePotential mp(MixturePriorSpec(random_mixture(d, k, rng)), y, op);
            for (int p = 0; p < 20; ++p) {
                const Eigen::VectorXd x = randn(d, rng, 1.5);
                worst = std::max(worst, rel(mp.gradient(x), fd_gradient(mp, x)));
            }
        }
        for (bool full : {false, true}) {
            Eigen::MatrixXd a(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
            for (auto& x : a.reshaped()) x = rng.normal();
            const Eigen::MatrixXd b = a * a.transpose() / double(d) + Eigen::MatrixXd::Identity(a.rows(), a.cols());
            const auto cov = full ? CovarianceEstimate::from_full(b) : CovarianceEstimate::from_diagonal(b.diagonal());
            const GaussianPotential gp({randn(d, rng), cov}, y, op);
            for (int p = 0; p < 20; ++p) {
                const Eigen::VectorXd x = randn(d, rng, 1.5);
                worst = std::max(worst, rel(gp.gradient(x), fd_gradient(gp, x)));
            }
        }
    }
    v.check(worst < 1e-6, "max relative error " + fmt(worst));
    return v;
}

Verdict criterion_4() {
    Verdict v;
    // Monotone EM on random instances.
    double worst_drop = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng(derive_seed(4, 1, s));
        const std::size_t d = 1 + s % 3, k = 2 + s % 3;
        Eigen::MatrixXd m(static_cast<Eigen::Index>(d), 120);
        for (Eigen::Index e = 0; e < m.cols(); ++e)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, e) = 3.0 * double(e % k) + rng.normal();
        const auto fit = em_fit(Ensemble(m), k, derive_seed(4, 2, s));
        for (std::size_t i = 1; i < fit.ll_history.size(); ++i)
            worst_drop = std::max(worst_drop, fit.ll_history[i - 1] - fit.ll_history[i]);
    }
    v.check(worst_drop <= 1e-9, "largest LL decrease " + fmt(worst_drop));

    double worst_err = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(derive_seed(4, 3, s));
        const auto data = draw_1d(200, rng, [](std::size_t e) { return e % 2 ? 5.0 : -5.0; });
        const auto fit = em_fit(data, 2, derive_seed(4, 4, s));
        double lo = fit.params.mean(0)(0), hi = fit.params.mean(1)(0);
        if (lo > hi) std::swap(lo, hi);
        worst_err = std::max({worst_err, std::abs(lo + 5.0), std::abs(hi - 5.0)});
    }
    v.check(worst_err < 0.3, "recovery error " + fmt(worst_err));

    int ones = 0, twos = 0;
    const std::vector<std::size_t> cand{1, 2, 3, 4, 5};
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(derive_seed(4, 5, s));
        const auto single = draw_1d(100, rng, [](std::size_t) { return 0.0; });
        if (select_model(single, cand, Criterion::aic, 5, derive_seed(4, 6, s)).selected_n_c == 1) ++ones;
        const auto pair = draw_1d(100, rng, [](std::size_t e) { return e % 2 ? 10.0 : 0.0; });
        if (select_model(pair, cand, Criterion::aic, 5, derive_seed(4, 7, s)).selected_n_c == 2) ++twos;
    }
    v.check(ones >= 9, "AIC n_c=1 in " + std::to_string(ones) + "/10");
    v.check(twos >= 9, "AIC n_c=2 in " + std::to_string(twos) + "/10");
    return v;
}

Verdict criterion_5() {
    Verdict v;
    const FunctionPotential gauss(
        1, [](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm(); },
        [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x); });
    const FunctionPotential quartic(
        3, [](const Eigen::VectorXd& x) { return 0.25 * x.array().pow(4).sum() + 0.5 * x.squaredNorm(); },
        [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().pow(3) + x.array()); });
    const auto id1 = MassMatrix::identity(1);
    const MassMatrix m3(Eigen::Vector3d(0.5, 1.0, 2.0));
    Rng rng(derive_seed(5, 0));

    double round_trip = 0.0, rmin = INFINITY, rmax = 0.0;
    for (auto integ : {Integrator::verlet, Integrator::two_stage, Integrator::three_stage}) {
        const PhasePoint pt{randn(3, rng), randn(3, rng)};
        const TrajectoryParams tp{0.05, 40, integ};
        auto fwd = integrate_trajectory(pt, tp, m3, quartic);
        fwd.p = -fwd.p;
        const auto back = integrate_trajectory(fwd, tp, m3, quartic);
        round_trip = std::max({round_trip, (back.x - pt.x).norm(), (back.p + pt.p).norm()});

        std::vector<double> dh;
        const PhasePoint start{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 0.5)};
        for (double h : {0.1, 0.05, 0.025}) {
            const auto q = integrate_trajectory(start, {h, static_cast<int>(std::lround(1.3 / h)), integ}, id1, gauss);
            dh.push_back(std::abs(total_energy(q, id1, gauss) - total_energy(start, id1, gauss)));
        }
        for (std::size_t k = 1; k < dh.size(); ++k) {
            rmin = std::min(rmin, dh[k - 1] / dh[k]);
            rmax = std::max(rmax, dh[k - 1] / dh[k]);
        }
    }
    v.check(round_trip < 1e-10, "round trip " + fmt(round_trip));
    v.check(rmin >= 3.0 && rmax <= 5.0, "|dH| ratios in [" + fmt(rmin) + ", " + fmt(rmax) + "]");

    ChainConfig cc{.burn_in = 20, .mixing_steps = 1, .seed = derive_seed(5, 1), .initial = Eigen::VectorXd::Constant(1, 2.0)};
    const auto chain = run_chain(gauss, id1, {0.3, 5, Integrator::verlet}, cc, 2000);
    const auto row = chain.samples.members.row(0);
    const double ks = ks_normal(std::vector<double>(row.begin(), row.end()));
    v.check(ks < 0.05, "KS " + fmt(ks));
    return v;
}

Verdict criterion_6() {
    using namespace hmcda::qg;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    const double F = 1600.0;
    auto sample = [](const Grid& g, auto f) {
        Field out(static_cast<Eigen::Index>(g.size()));
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) out(static_cast<Eigen::Index>(g.index(i, j))) = f(i * g.dx(), j * g.dy());
        return out;
    };
    auto interior_max = [](const Field& f, const Grid& g) {
        double m = 0.0;
        for (int j = 1; j < g.ny - 1; ++j)
            for (int i = 1; i < g.nx - 1; ++i) m = std::max(m, std::abs(f(static_cast<Eigen::Index>(g.index(i, j)))));
        return m;
    };
    auto bump = [](double x, double y) { return std::sin(pi * x) * std::sin(pi * y); };

    std::vector<double> lap, helm;
    for (int n : {17, 33, 65}) {
        const Grid g = Grid::square(n);
        const Field s = sample(g, bump);
        lap.push_back(interior_max(laplacian(s, g) + 2 * pi * pi * s, g));
        helm.push_back((psi_from_vorticity(-(2 * pi * pi + F) * s, g, F) - s).cwiseAbs().maxCoeff());
    }
    double omin = INFINITY, omax = 0.0;
    for (std::size_t k = 1; k < lap.size(); ++k)
        for (double o : {std::log2(lap[k - 1] / lap[k]), std::log2(helm[k - 1] / helm[k])}) {
            omin = std::min(omin, o);
            omax = std::max(omax, o);
        }
    v.check(omin >= 1.8 && omax <= 2.2, "orders in [" + fmt(omin) + ", " + fmt(omax) + "]");

    const Grid g = Grid::square(65);
    Rng rng(derive_seed(6, 0));
    // Smooth random field vanishing on the boundary.
    Field psi = Field::Zero(static_cast<Eigen::Index>(g.size()));
    for (int a = 1; a <= 4; ++a)
        for (int b = 1; b <= 4; ++b) {
            const double c = rng.normal() / (a * b);
            psi += c * sample(g, [a, b](double x, double y) { return std::sin(a * pi * x) * std::sin(b * pi * y); });
        }
    double resid = 0.0;
    for (auto kind : {SolverKind::direct, SolverKind::conjugate_gradient}) {
        const Field q = vorticity_from_psi(psi, g, F);
        const Field back = HelmholtzSolver(g, F, kind).solve(q);
        resid = std::max(resid, (vorticity_from_psi(back, g, F) - q).cwiseAbs().maxCoeff() / q.cwiseAbs().maxCoeff());
    }
    v.check(resid < 1e-8, "Helmholtz residual " + fmt(resid));

    // Both fields vanish on the boundary, where the neutrality holds exactly.
    const Field q = psi + sample(g, [](double x, double y) { return x * std::sin(pi * x) * std::sin(3 * pi * y); });
    const Field jac = jacobian_term(psi, q, g);
    const double scale = psi.cwiseProduct(jac).cwiseAbs().sum() + q.cwiseProduct(jac).cwiseAbs().sum();
    const double cons = std::max(std::abs(psi.dot(jac)), std::abs(q.dot(jac))) / scale;
    v.check(cons < 1e-10, "Arakawa conservation " + fmt(cons));

    double adj = 0.0;
    {
        const auto lin = linear_obs_operator(g, 300, 1);
        const Eigen::VectorXd u = randn(g.size(), rng), w = randn(300, rng);
        adj = std::max(adj, std::abs(lin->apply(u).dot(w) - u.dot(lin->adjoint_apply(u, w))) / std::max(1.0, std::abs(lin->apply(u).dot(w))));
        const auto wind = wind_magnitude_operator(g, 300, 1);
        const Field base = 50.0 * psi;
        const Eigen::VectorXd du = randn(g.size(), rng);
        const auto [ub, vb] = wind->velocity(base);
        const auto [ud, vd] = wind->velocity(du);
        const Eigen::VectorXd mag = (ub.array().square() + vb.array().square() + WindMagnitudeOperator::kEta).sqrt();
        const Eigen::VectorXd tangent = (ub.array() * ud.array() + vb.array() * vd.array()) / mag.array();
        adj = std::max(adj, std::abs(tangent.dot(w) - du.dot(wind->adjoint_apply(base, w))) / std::max(1.0, std::abs(tangent.dot(w))));
    }
    v.check(adj < 1e-10, "adjoint mismatch " + fmt(adj));

    const Model model(g, Params{});
    Field qq = model.q_from_psi(psi);
    for (int s = 0; s < 50; ++s) qq = model.rk4_step(qq);
    const Field end = model.psi_from_q(qq);
    v.check(end.allFinite() && end.cwiseAbs().maxCoeff() < 1e3, "50-step run max |psi| " + fmt(end.cwiseAbs().maxCoeff()));
    const double secs = seconds_since(t0);
    v.check(secs < 120.0, fmt(secs, 3) + " s");
    return v;
}

Verdict criterion_7(const fs::path& out_root) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path cfg_dir = fs::path(HMCDA_SOURCE_DIR) / "configs";
    auto load = [&](const std::string& name) {
        ExperimentConfig c = load_config((cfg_dir / (name + ".toml")).string());
        c.output_dir = (out_root / name).string();
        return c;
    };
    const ExperimentConfig denkf = load("qg_denkf");
    const ExperimentConfig linear = load("qg_mc_clhmc_linear");
    const ExperimentConfig wind = load("qg_mc_clhmc_wind");
    const TwinSetup setup = make_twin_setup(denkf);

    for (const auto* c : {&denkf, &linear}) {
        const auto r = run_twin_experiment(*c, &setup);
        const double a = r.metrics.back().rmse_analysis, f = r.free_rmse.back();
        v.check(r.metrics.size() == 50 && a < f, to_string(c->filter.kind) + " linear final " + fmt(a) + " vs free " + fmt(f));
    }
    try {
        const auto r = run_twin_experiment(wind, &setup);
        std::size_t below = 0;
        for (std::size_t k = 0; k < r.metrics.size(); ++k)
            if (r.metrics[k].rmse_analysis < r.free_rmse[k]) ++below;
        const double a = r.metrics.back().rmse_analysis, f = r.free_rmse.back();
        v.check(r.metrics.size() == 20 && below == r.metrics.size(),
                "mc_clhmc wind final " + fmt(a) + " vs free " + fmt(f) + ", below free in " + std::to_string(below) + "/" +
                    std::to_string(r.metrics.size()) + " cycles");
    } catch (const RunError& e) {
        v.check(false, std::string("mc_clhmc wind diverged: ") + e.what());
    }
    const double secs = seconds_since(t0);
    v.check(secs < 900.0, fmt(secs, 4) + " s");
    return v;
}

Verdict criterion_8() {
    Verdict v;
    const std::size_t n_ens = 10;
    std::vector<std::vector<std::size_t>> ranks;
    for (std::uint64_t c = 0; c < 100; ++c) {
        Rng rng(derive_seed(8, c));
        Eigen::MatrixXd m(50, static_cast<Eigen::Index>(n_ens));
        for (auto& x : m.reshaped()) x = rng.normal();
        ranks.push_back(rank_of_truth(Ensemble(m), randn(50, rng), 1, derive_seed(8, 1000 + c)));
    }
    const double p = rank_uniformity_pvalue(accumulate_rank_histogram(ranks, n_ens));
    v.check(p > 0.01, "rank histogram p " + fmt(p));

    v.check(std::abs(rmse(Eigen::Vector2d(3, 4), Eigen::Vector2d::Zero()) - std::sqrt(12.5)) < 1e-15, "rmse (3,4)");
    v.check(allocate_counts({std::log(0.5), std::log(0.5)}, 100) == std::vector<std::size_t>{50, 50}, "allocation (50,50)");
    v.check(allocate_counts({std::log(0.5 * 0.8), std::log(0.5 * 0.2)}, 100) == std::vector<std::size_t>{80, 20},
            "allocation (80,20)");
    v.check(allocate_counts({0.0}, 37) == std::vector<std::size_t>{37}, "allocation n_c=1");
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Runs the acceptance criteria and prints one line per criterion"};
    std::vector<int> only, known;
    std::string out = (fs::temp_directory_path() / "hmcda_acceptance").string();
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 8));
    app.add_option("--known-failure", known, "failures of these criteria do not change the exit status")
        ->check(CLI::Range(1, 8));
    app.add_option("--out", out, "scratch directory for the QG runs");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<int, std::function<Verdict()>>> all{
        {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},
        {5, criterion_5}, {6, criterion_6}, {7, [&] { return criterion_7(out); }}, {8, criterion_8}};
    const std::set<int> selected(only.begin(), only.end()), tolerated(known.begin(), known.end());

    int unexpected = 0;
    for (const auto& [id, run] : all) {
        if (!selected.empty() && !selected.count(id)) continue;
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v.check(false, std::string("exception: ") + e.what());
        }
        std::string detail;
        for (const auto& n : v.notes) detail += (detail.empty() ? "" : "; ") + n;
        const bool excused = !v.pass && tolerated.count(id);
        std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : excused ? "FAIL (known)" : "FAIL") << "  ("
                  << detail << ")" << std::endl;
        if (!v.pass && !excused) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
