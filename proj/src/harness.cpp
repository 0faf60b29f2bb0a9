#include "hmcda/harness.hpp"

#include "hmcda/error.hpp"
#include "hmcda/log.hpp"
#include "hmcda/parallel.hpp"
#include "hmcda/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>

namespace hmcda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string cycle_name(const std::string& prefix, int cycle, const std::string& ext) {
    std::ostringstream s;
    s << prefix << std::setw(4) << std::setfill('0') << cycle << ext;
    return s.str();
}

class OutputDir {
public:
    explicit OutputDir(const std::string& root) : root_(root) { fs::create_directories(root_); }

    std::ofstream open(const std::string& rel, RunManifest& m, bool binary = false) {
        const fs::path p = root_ / rel;
        fs::create_directories(p.parent_path());
        std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
        if (!out) throw std::runtime_error("cannot write " + p.string());
        m.artifacts.push_back(rel);
        return out;
    }
    void json_file(const std::string& rel, const json& j, RunManifest& m) { open(rel, m) << j.dump(2) << '\n'; }
    fs::path path(const std::string& rel) const { return root_ / rel; }

private:
    fs::path root_;
};

json seeds_json(std::uint64_t master) {
    return {{"master", master},
            {"derivation", "derive_seed(master, stream, index) via splitmix64"},
            {"streams",
             {{"spinup", streams::spinup},
              {"obs_noise", streams::obs_noise},
              {"obs_network", streams::obs_network},
              {"filter", streams::filter},
              {"ranks", streams::ranks},
              {"prior", streams::prior}}}};
}

json report_json(const ModelSelectionReport& r) {
    json cands = json::array();
    for (std::size_t k = 0; k < r.candidates.size(); ++k) {
        const double v = r.criterion_values[k];
        cands.push_back({{"n_c", r.candidates[k]},
                         {"criterion", std::isfinite(v) ? json(v) : json(nullptr)},
                         {"admissible", static_cast<bool>(r.admissible[k])}});
    }
    return {{"selected_n_c", r.selected_n_c}, {"candidates", cands}, {"params", to_json(r.selected().params)}};
}

json chain_json(const CycleResult& r) {
    json stats = json::array();
    for (const auto& s : r.chain_stats) stats.push_back(to_json(s));
    json j{{"chains", stats}, {"chain_sizes", r.chain_sizes}, {"fell_back_to_hmc", r.fell_back_to_hmc}};
    if (auto a = r.acceptance_rate()) j["acceptance_rate"] = *a;
    return j;
}

void write_samples_csv(std::ostream& out, const std::vector<double>& v) {
    out << "x\n" << std::setprecision(17);
    for (double x : v) out << x << '\n';
}

std::vector<double> row0(const Ensemble& e) {
    std::vector<double> v(e.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = e.members(0, static_cast<Eigen::Index>(k));
    return v;
}

}  // namespace

json RunManifest::to_json() const {
    json j{{"version", version}, {"config", config}, {"seeds", seeds}, {"artifacts", artifacts}, {"summary", summary}};
    if (failure) {
        j["status"] = "failed";
        j["failure"] = {{"cycle", failure->cycle}, {"stage", failure->stage}, {"message", failure->message}};
    } else {
        j["status"] = "ok";
    }
    return j;
}

// ---------------------------------------------------------------------------
// QG twin experiment

TwinSetup make_twin_setup(const ExperimentConfig& cfg) {
    const qg::Grid grid = qg::Grid::square(cfg.qg.grid);
    auto model = std::make_shared<qg::Model>(grid, cfg.qg.params);

    Rng rng(derive_seed(cfg.seed, streams::spinup));
    qg::Field psi = qg::Field::Zero(static_cast<Eigen::Index>(grid.size()));
    for (int j = 1; j < grid.ny - 1; ++j)
        for (int i = 1; i < grid.nx - 1; ++i)
            psi(static_cast<Eigen::Index>(grid.index(i, j))) = cfg.qg.initial_noise * rng.normal();
    qg::Field q = model->q_from_psi(psi);
    for (int s = 0; s < cfg.qg.spinup_steps; ++s) q = model->rk4_step(q);

    TwinSetup setup;
    setup.model = model;
    setup.truth0 = model->psi_from_q(q);
    setup.initial = Ensemble(Eigen::MatrixXd(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(cfg.n_ens)), 0);
    for (std::size_t e = 0; e < cfg.n_ens; ++e) {
        for (int s = 0; s < cfg.qg.member_spacing; ++s) q = model->rk4_step(q);
        setup.initial.member(e) = model->psi_from_q(q);
    }
    return setup;
}

std::shared_ptr<const ObservationOperator> make_obs_operator(const ExperimentConfig& cfg, const qg::Grid& grid,
                                                             int cycle) {
    const std::uint64_t seed = derive_seed(cfg.seed, streams::obs_network, static_cast<std::uint64_t>(cycle));
    if (cfg.obs.op == "wind") return qg::wind_magnitude_operator(grid, cfg.obs.m_obs, seed, cfg.obs.random_offset);
    return qg::linear_obs_operator(grid, cfg.obs.m_obs, seed, cfg.obs.random_offset);
}

TwinResult run_twin_experiment(const ExperimentConfig& cfg, const TwinSetup* given) {
    cfg.validate();
    if (cfg.model != "qg") throw ConfigError("run_twin_experiment needs model = 'qg'");
    OutputDir dir(cfg.output_dir);
    TwinResult res;
    RunManifest& man = res.manifest;
    man.config = to_json(cfg);
    man.seeds = seeds_json(cfg.seed);
    json cycle_timings = json::array();
    const auto t_start = std::chrono::steady_clock::now();

    int cycle = 0;
    std::string stage = "setup";
    std::vector<std::vector<std::size_t>> ranks;
    // Also called after a failure so completed cycles stay inspectable.
    auto write_tables = [&] {
        {
            auto out = dir.open("metrics.csv", man);
            write_metrics_csv(out, res.metrics);
        }
        if (cfg.free_run) {
            auto out = dir.open("free_run.csv", man);
            out << "cycle,rmse_free\n" << std::setprecision(17);
            for (std::size_t k = 0; k < res.free_rmse.size(); ++k) out << k + 1 << ',' << res.free_rmse[k] << '\n';
        }
    };
    try {
        TwinSetup own;
        if (!given) own = make_twin_setup(cfg);
        const TwinSetup& setup = given ? *given : own;
        if (setup.initial.size() != cfg.n_ens) throw InvalidInput("twin setup ensemble size differs from n_ens");
        const qg::Model& model = *setup.model;
        const qg::Grid grid = model.grid();
        man.timings["setup_seconds"] = seconds_since(t_start);

        auto model_ptr = setup.model;
        FunctionPropagator prop([model_ptr](const StateVector& x, int t0, int t1) { return model_ptr->advance(x, t1 - t0); });

        StateVector truth = setup.truth0;
        Ensemble analysis = setup.initial;
        Ensemble free = setup.initial;
        const int interval = cfg.obs_interval;

        for (cycle = 1; cycle <= cfg.cycles; ++cycle) {
            const int t0 = (cycle - 1) * interval, t1 = cycle * interval;
            json timing{{"cycle", cycle}};

            stage = "forecast";
            auto tf = std::chrono::steady_clock::now();
            Ensemble fc = forecast(prop, analysis, t0, t1, cfg.threads);
            truth = model.advance(truth, interval);
            timing["forecast_seconds"] = seconds_since(tf);
            if (cfg.free_run) {
                stage = "free_run";
                free = forecast(prop, free, t0, t1, cfg.threads);
                res.free_rmse.push_back(rmse(ensemble_mean(free), truth));
            }

            stage = "observe";
            auto op = make_obs_operator(cfg, grid, cycle);
            Observation y;
            y.values = op->apply(truth);
            Rng noise(derive_seed(cfg.seed, streams::obs_noise, static_cast<std::uint64_t>(cycle)));
            const double sd = std::sqrt(cfg.obs.variance);
            for (Eigen::Index k = 0; k < y.values.size(); ++k) y.values(k) += sd * noise.normal();
            y.error_variances = Eigen::VectorXd::Constant(y.values.size(), cfg.obs.variance);

            stage = "analysis";
            FilterConfig fcfg = cfg.filter;
            fcfg.seed = derive_seed(cfg.seed, streams::filter, static_cast<std::uint64_t>(cycle));
            fcfg.threads = cfg.threads;
            if (!fcfg.distance) fcfg.distance = qg::grid_distance(grid);
            CycleResult r = analysis_step(fc, y, op, fcfg);
            timing["analysis_seconds"] = r.analysis_seconds;
            analysis = r.analysis;
            analysis.time_index = t1;

            stage = "diagnostics";
            CycleMetrics row;
            row.cycle = cycle;
            row.rmse_forecast = rmse(ensemble_mean(fc), truth);
            row.rmse_analysis = rmse(ensemble_mean(analysis), truth);
            row.acceptance_rate = r.acceptance_rate();
            res.metrics.push_back(row);
            ranks.push_back(rank_of_truth(analysis, truth, cfg.output.rank_stride,
                                          derive_seed(cfg.seed, streams::ranks, static_cast<std::uint64_t>(cycle))));

            stage = "output";
            if (cfg.output.ensembles) {
                auto f = dir.open(cycle_name("ensembles/forecast_", cycle, ".csv"), man);
                write_ensemble_csv(f, fc);
                auto a = dir.open(cycle_name("ensembles/analysis_", cycle, ".csv"), man);
                write_ensemble_csv(a, analysis);
                auto t = dir.open(cycle_name("ensembles/truth_", cycle, ".csv"), man);
                write_ensemble_csv(t, Ensemble(Eigen::MatrixXd(truth), t1));
            }
            if (cfg.output.gmm && r.gmm) dir.json_file(cycle_name("gmm/cycle_", cycle, ".json"), report_json(*r.gmm), man);
            if (cfg.output.chain_stats && !r.chain_stats.empty())
                dir.json_file(cycle_name("chains/cycle_", cycle, ".json"), chain_json(r), man);
            if (cycle == cfg.cycles && cfg.output.qq)
                dir.json_file("qq_forecast.json", to_json(chi_square_qq(fc, cfg.filter.localization_radius, fcfg.distance)), man);
            cycle_timings.push_back(timing);
        }
        cycle = cfg.cycles;

        stage = "output";
        write_tables();
        res.ranks = accumulate_rank_histogram(ranks, cfg.n_ens, cfg.output.rank_stride);
        dir.json_file("rank_histogram.json", to_json(res.ranks), man);
        if (cfg.output.checkpoints) {
            auto t = dir.open("truth_final.qg1", man, true);
            qg::write_qg1(t, truth, grid);
            auto a = dir.open("analysis_mean_final.qg1", man, true);
            qg::write_qg1(a, ensemble_mean(analysis), grid);
        }
        if (!res.metrics.empty()) {
            man.summary["final_rmse_forecast"] = res.metrics.back().rmse_forecast;
            man.summary["final_rmse_analysis"] = res.metrics.back().rmse_analysis;
            if (!res.free_rmse.empty()) man.summary["final_rmse_free"] = res.free_rmse.back();
        }
        man.summary["cycles_completed"] = res.metrics.size();
    } catch (const std::exception& e) {
        man.failure = RunFailure{cycle, stage, e.what()};
        if (!res.metrics.empty()) {
            try {
                write_tables();
            } catch (const std::exception& w) {
                log_warning(std::string("could not write partial metrics: ") + w.what());
            }
        }
    }

    man.timings["cycles"] = cycle_timings;
    man.timings["total_seconds"] = seconds_since(t_start);
    {
        std::ofstream out(dir.path("timings.json"));
        out << man.timings.dump(2) << '\n';
    }
    {
        std::ofstream out(dir.path("manifest.json"));
        out << man.to_json().dump(2) << '\n';
    }
    if (man.failure) throw RunError(*man.failure);
    return res;
}

// ---------------------------------------------------------------------------
// One-dimensional example

GmmParams static_1d_truth_prior() {
    const double tau[] = {0.2, 0.1, 0.1, 0.3, 0.3};
    const double mu[] = {-2.4, -1.0, 0.0, 1.0, 2.4};
    const double var[] = {0.05, 0.07, 0.02, 0.06, 0.1};
    Eigen::VectorXd w(5);
    std::vector<Eigen::VectorXd> means;
    std::vector<CovarianceEstimate> covs;
    for (int i = 0; i < 5; ++i) {
        w(i) = tau[i];
        means.push_back(Eigen::VectorXd::Constant(1, mu[i]));
        covs.push_back(CovarianceEstimate::from_diagonal(Eigen::VectorXd::Constant(1, var[i])));
    }
    return GmmParams(w, means, covs);
}

namespace {

double log_post_kernel(const GmmParams& prior, double y, double r, double x) {
    return gmm_log_pdf(Eigen::VectorXd::Constant(1, x), prior) - 0.5 * (x - y) * (x - y) / r;
}

// Wide integration range covering essentially all posterior mass.
std::pair<double, double> support(const GmmParams& prior, double lo, double hi) {
    double a = lo, b = hi;
    for (std::size_t i = 0; i < prior.n_components(); ++i) {
        const double m = prior.mean(i)(0), s = std::sqrt(prior.covariance(i).variances()(0));
        a = std::min(a, m - 12.0 * s);
        b = std::max(b, m + 12.0 * s);
    }
    return {a, b};
}

// Trapezoidal integral of exp(log kernel - shift) on [a, b] with n intervals.
double integrate(const GmmParams& prior, double y, double r, double a, double b, std::size_t n, double shift) {
    const double h = (b - a) / static_cast<double>(n);
    double s = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double f = std::exp(log_post_kernel(prior, y, r, a + h * static_cast<double>(k)) - shift);
        s += (k == 0 || k == n) ? 0.5 * f : f;
    }
    return s * h;
}

}  // namespace

std::vector<double> grid_posterior_1d(const GmmParams& prior, double y, double r, const std::vector<double>& grid) {
    if (prior.dim() != 1) throw InvalidInput("grid posterior needs a 1D prior");
    if (grid.size() < 2) throw InvalidInput("grid posterior needs at least 2 points");
    std::vector<double> lk(grid.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.size(); ++k) top = std::max(top, lk[k] = log_post_kernel(prior, y, r, grid[k]));
    std::vector<double> d(grid.size());
    double z = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        d[k] = std::exp(lk[k] - top);
        if (k) z += 0.5 * (d[k] + d[k - 1]) * (grid[k] - grid[k - 1]);
    }
    for (auto& v : d) v /= z;
    return d;
}

std::vector<double> posterior_bin_masses(const GmmParams& prior, double y, double r, std::size_t bins, double lo,
                                         double hi, std::size_t grid_points) {
    if (bins < 1 || !(lo < hi)) throw InvalidInput("invalid histogram range");
    const auto [a, b] = support(prior, lo, hi);
    const double shift = log_post_kernel(prior, y, r, y);
    const std::size_t per_unit = std::max<std::size_t>(grid_points, 200);
    const double z = integrate(prior, y, r, a, b, static_cast<std::size_t>(per_unit * (b - a)), shift);
    std::vector<double> m(bins);
    const double w = (hi - lo) / static_cast<double>(bins);
    const std::size_t sub = std::max<std::size_t>(16, grid_points / bins);
    for (std::size_t k = 0; k < bins; ++k) {
        const double x0 = lo + w * static_cast<double>(k);
        m[k] = integrate(prior, y, r, x0, x0 + w, sub, shift) / z;
    }
    return m;
}

std::vector<double> sample_bin_fractions(const std::vector<double>& samples, std::size_t bins, double lo, double hi) {
    if (samples.empty()) throw InvalidInput("no samples");
    std::vector<double> f(bins, 0.0);
    const double w = (hi - lo) / static_cast<double>(bins);
    for (double x : samples) {
        if (x < lo || x > hi) continue;
        auto k = static_cast<std::size_t>((x - lo) / w);
        f[std::min(k, bins - 1)] += 1.0;
    }
    for (auto& v : f) v /= static_cast<double>(samples.size());
    return f;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw InvalidInput("total_variation: size mismatch");
    double tv = 0.0, sp = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        tv += std::abs(p[k] - q[k]);
        sp += p[k];
        sq += q[k];
    }
    return 0.5 * (tv + std::abs(sp - sq));
}

std::vector<ModeCoverage> mode_coverage(const GmmParams& prior, double y, double r, const std::vector<double>& samples,
                                        double lo, double hi, std::size_t grid_points) {
    const auto [a, b] = support(prior, lo, hi);
    const std::size_t n = std::max<std::size_t>(grid_points, static_cast<std::size_t>(400 * (b - a)));
    std::vector<double> grid(n + 1);
    for (std::size_t k = 0; k <= n; ++k) grid[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(n);
    const auto d = grid_posterior_1d(prior, y, r, grid);

    // Basin boundaries at interior local minima of the density.
    std::vector<std::size_t> cuts{0};
    for (std::size_t k = 1; k < n; ++k)
        if (d[k] < d[k - 1] && d[k] <= d[k + 1]) cuts.push_back(k);
    cuts.push_back(n);

    std::vector<ModeCoverage> modes;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        ModeCoverage m;
        const std::size_t k0 = cuts[c], k1 = cuts[c + 1];
        m.lo = c == 0 ? -std::numeric_limits<double>::infinity() : grid[k0];
        m.hi = c + 2 == cuts.size() ? std::numeric_limits<double>::infinity() : grid[k1];
        std::size_t kmax = k0;
        for (std::size_t k = k0; k < k1; ++k) {
            m.analytic_mass += 0.5 * (d[k] + d[k + 1]) * (grid[k + 1] - grid[k]);
            if (d[k] > d[kmax]) kmax = k;
        }
        m.center = grid[kmax];
        std::size_t count = 0;
        for (double x : samples)
            if (x >= m.lo && x < m.hi) ++count;
        m.sample_fraction = samples.empty() ? 0.0 : static_cast<double>(count) / static_cast<double>(samples.size());
        modes.push_back(m);
    }
    return modes;
}

StaticSampleResult mc_clhmc_sample_mixture(const GmmParams& prior, const Observation& y,
                                           std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg,
                                           std::size_t n_samples) {
    MixturePotential potential(MixturePriorSpec(prior), y, op);
    StaticSampleResult out;
    out.chain_sizes = allocate_chain_sizes(prior, y, *op, n_samples);
    const std::size_t nc = prior.n_components();
    TrajectoryParams traj = cfg.trajectory;
    if (cfg.divide_h_by_n_c) traj.h /= static_cast<double>(nc);
    std::vector<std::optional<ChainResult>> results(nc);
    parallel_for(
        nc,
        [&](std::size_t i) {
            if (out.chain_sizes[i] == 0) return;
            const MassMatrix mass(prior.covariance(i).variances().cwiseInverse());
            ChainConfig chain;
            chain.burn_in = cfg.burn_in;
            chain.mixing_steps = cfg.mixing_steps;
            chain.seed = derive_seed(cfg.seed, 3, i);
            chain.initial = prior.mean(i);
            results[i] = run_chain(potential, mass, traj, chain, out.chain_sizes[i]);
        },
        cfg.threads);
    for (auto& r : results) {
        if (!r) continue;
        for (Eigen::Index k = 0; k < r->samples.members.cols(); ++k) out.samples.push_back(r->samples.members(0, k));
        out.stats.push_back(r->stats);
    }
    return out;
}

Static1dResult run_static_1d(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.model != "static_1d") throw ConfigError("run_static_1d needs model = 'static_1d'");
    const auto& s = cfg.static_1d;
    OutputDir dir(cfg.output_dir);
    Static1dResult res;
    RunManifest& man = res.manifest;
    man.config = to_json(cfg);
    man.seeds = seeds_json(cfg.seed);
    const auto t_start = std::chrono::steady_clock::now();
    std::string stage = "prior";
    try {
        const GmmParams truth = static_1d_truth_prior();
        res.prior = s.prior_csv.empty() ? sample_gmm(truth, s.n_prior, derive_seed(cfg.seed, streams::prior))
                                        : read_ensemble_csv(s.prior_csv);
        if (res.prior.dim() != 1) throw InvalidInput("static_1d prior must be one-dimensional");
        {
            auto out = dir.open("prior.csv", man);
            write_ensemble_csv(out, res.prior);
        }

        auto op = std::make_shared<IdentityOperator>(1);
        Observation y{Eigen::VectorXd::Constant(1, s.y), Eigen::VectorXd::Constant(1, s.r)};
        FilterConfig fcfg = cfg.filter;
        fcfg.seed = derive_seed(cfg.seed, streams::filter, 0);
        fcfg.n_samples = s.n_samples;
        fcfg.threads = cfg.threads;

        stage = "clhmc";
        fcfg.kind = FilterKind::clhmc;
        const auto t_cl = std::chrono::steady_clock::now();
        CycleResult cl = clhmc_analysis(res.prior, y, op, fcfg);
        man.timings["clhmc_seconds"] = seconds_since(t_cl);
        stage = "mc_clhmc";
        fcfg.kind = FilterKind::mc_clhmc;
        const auto t_mc = std::chrono::steady_clock::now();
        CycleResult mc = mc_clhmc_analysis(res.prior, y, op, fcfg);
        man.timings["mc_clhmc_seconds"] = seconds_since(t_mc);
        res.selection = *mc.gmm;
        res.clhmc_samples = row0(cl.analysis);
        res.mc_clhmc_samples = row0(mc.analysis);

        stage = "output";
        const GmmParams& fitted = res.selection.selected().params;
        dir.json_file("gmm.json", report_json(res.selection), man);
        {
            auto a = dir.open("samples_clhmc.csv", man);
            write_samples_csv(a, res.clhmc_samples);
            auto b = dir.open("samples_mc_clhmc.csv", man);
            write_samples_csv(b, res.mc_clhmc_samples);
        }
        dir.json_file("chain_stats.json", {{"clhmc", chain_json(cl)}, {"mc_clhmc", chain_json(mc)}}, man);

        std::vector<double> grid(s.grid_points);
        for (std::size_t k = 0; k < grid.size(); ++k)
            grid[k] = s.lo + (s.hi - s.lo) * static_cast<double>(k) / static_cast<double>(grid.size() - 1);
        const auto post_fit = grid_posterior_1d(fitted, s.y, s.r, grid);
        const auto post_true = grid_posterior_1d(truth, s.y, s.r, grid);
        {
            auto out = dir.open("posterior_grid.csv", man);
            out << "x,posterior_fitted_prior,posterior_true_prior\n" << std::setprecision(17);
            for (std::size_t k = 0; k < grid.size(); ++k) out << grid[k] << ',' << post_fit[k] << ',' << post_true[k] << '\n';
        }
        const auto m_fit = posterior_bin_masses(fitted, s.y, s.r, s.bins, s.lo, s.hi, s.grid_points);
        const auto m_true = posterior_bin_masses(truth, s.y, s.r, s.bins, s.lo, s.hi, s.grid_points);
        const auto h_cl = sample_bin_fractions(res.clhmc_samples, s.bins, s.lo, s.hi);
        const auto h_mc = sample_bin_fractions(res.mc_clhmc_samples, s.bins, s.lo, s.hi);
        {
            auto out = dir.open("histograms.csv", man);
            out << "bin_lo,bin_hi,posterior_fitted_prior,posterior_true_prior,clhmc,mc_clhmc\n" << std::setprecision(17);
            const double w = (s.hi - s.lo) / static_cast<double>(s.bins);
            for (std::size_t k = 0; k < s.bins; ++k)
                out << s.lo + w * static_cast<double>(k) << ',' << s.lo + w * static_cast<double>(k + 1) << ',' << m_fit[k]
                    << ',' << m_true[k] << ',' << h_cl[k] << ',' << h_mc[k] << '\n';
        }
        res.tv_clhmc = total_variation(h_cl, m_fit);
        res.tv_mc_clhmc = total_variation(h_mc, m_fit);
        json modes = json::object();
        for (const auto& [name, samples] : {std::pair{"clhmc", &res.clhmc_samples}, std::pair{"mc_clhmc", &res.mc_clhmc_samples}}) {
            json arr = json::array();
            for (const auto& m : mode_coverage(fitted, s.y, s.r, *samples, s.lo, s.hi, s.grid_points))
                arr.push_back({{"center", m.center}, {"analytic_mass", m.analytic_mass}, {"sample_fraction", m.sample_fraction}});
            modes[name] = arr;
        }
        dir.json_file("modes.json", modes, man);
        man.summary = {{"selected_n_c", res.selection.selected_n_c},
                       {"tv_clhmc", res.tv_clhmc},
                       {"tv_mc_clhmc", res.tv_mc_clhmc},
                       {"tv_clhmc_vs_true_prior_posterior", total_variation(h_cl, m_true)},
                       {"tv_mc_clhmc_vs_true_prior_posterior", total_variation(h_mc, m_true)}};
    } catch (const std::exception& e) {
        man.failure = RunFailure{0, stage, e.what()};
    }
    man.timings["total_seconds"] = seconds_since(t_start);
    {
        std::ofstream out(dir.path("timings.json"));
        out << man.timings.dump(2) << '\n';
    }
    {
        std::ofstream out(dir.path("manifest.json"));
        out << man.to_json().dump(2) << '\n';
    }
    if (man.failure) throw RunError(*man.failure);
    return res;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
    if (cfg.model == "static_1d") return run_static_1d(cfg).manifest;
    return run_twin_experiment(cfg).manifest;
}

}  // namespace hmcda
