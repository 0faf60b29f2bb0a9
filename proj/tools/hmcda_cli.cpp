// Command-line front end: run | fit-gmm | sample | diag | validate-config.
#include "hmcda/config.hpp"
#include "hmcda/diagnostics.hpp"
#include "hmcda/error.hpp"
#include "hmcda/filters.hpp"
#include "hmcda/harness.hpp"
#include "hmcda/parallel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace hmcda;
using nlohmann::json;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::string out;
    unsigned threads = 1;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "master seed (overrides the config)");
    app->add_option("--out", c.out, "output path");
    app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

int cmd_run(const std::string& path, const Common& c) {
    ExperimentConfig cfg = load_config(path);
    if (c.seed) cfg.seed = cfg.filter.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    cfg.threads = cfg.filter.threads = c.threads;
    set_default_threads(c.threads);
    const RunManifest m = run_experiment(cfg);
    std::cout << m.summary.dump(2) << '\n';
    return 0;
}

int cmd_fit_gmm(const std::string& csv, const Common& c, const std::string& criterion, std::size_t max_nc,
                std::size_t min_members, bool full) {
    const Ensemble data = read_ensemble_csv(csv);
    std::vector<std::size_t> cands;
    for (std::size_t k = 1; k <= std::min(max_nc, data.size()); ++k) cands.push_back(k);
    EmOptions opt;
    opt.diagonal_only = !full;
    const auto report = select_model(data, cands, parse_criterion(criterion), min_members, c.seed.value_or(0), opt);
    const json params = to_json(report.selected().params);
    if (c.out.empty()) {
        std::cout << params.dump(2) << '\n';
    } else {
        std::ofstream(c.out) << params.dump(2) << '\n';
    }
    std::cerr << "selected n_c = " << report.selected_n_c << " (" << criterion << ")\n";
    for (std::size_t k = 0; k < report.candidates.size(); ++k)
        std::cerr << "  n_c=" << report.candidates[k] << " criterion=" << report.criterion_values[k]
                  << (report.admissible[k] ? "" : " (rejected: membership bound)") << '\n';
    return 0;
}

int cmd_sample(const std::string& gmm_path, const std::vector<double>& yv, double r, std::size_t n, bool multi,
               const Common& c, double h, int m, const std::string& integrator, int burn_in, int mixing) {
    const GmmParams prior = gmm_from_json(read_json(gmm_path));
    if (yv.size() != prior.dim()) throw ConfigError("--y needs one value per state dimension");
    if (!(r > 0.0)) throw ConfigError("--r must be positive");
    auto op = std::make_shared<IdentityOperator>(prior.dim());
    Observation y{Eigen::Map<const Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size())),
                  Eigen::VectorXd::Constant(static_cast<Eigen::Index>(yv.size()), r)};
    FilterConfig cfg;
    cfg.trajectory = {h, m, parse_integrator(integrator)};
    cfg.burn_in = burn_in;
    cfg.mixing_steps = mixing;
    cfg.seed = c.seed.value_or(0);
    cfg.threads = c.threads;
    cfg.validate();

    Eigen::MatrixXd out(static_cast<Eigen::Index>(prior.dim()), static_cast<Eigen::Index>(n));
    json stats = json::array();
    if (multi) {
        if (prior.dim() != 1) throw ConfigError("--multi-chain sampling of a fitted mixture is one-dimensional only");
        const auto res = mc_clhmc_sample_mixture(prior, y, op, cfg, n);
        for (std::size_t k = 0; k < n; ++k) out(0, static_cast<Eigen::Index>(k)) = res.samples[k];
        for (const auto& s : res.stats) stats.push_back(to_json(s));
    } else {
        MixturePotential pot(MixturePriorSpec(prior), y, op);
        Eigen::VectorXd var = gmm_joint_moments(prior, true).covariance.diagonal();
        ChainConfig chain{burn_in, mixing, cfg.seed, init_chain_position(Ensemble(), &prior,
                                                                         InitPolicy::max_likelihood_component_mean, &y, op.get())};
        const auto res = run_chain(pot, MassMatrix(var.cwiseInverse()), cfg.trajectory, chain, n);
        out = res.samples.members;
        stats.push_back(to_json(res.stats));
    }
    Ensemble samples(out);
    if (c.out.empty()) {
        write_ensemble_csv(std::cout, samples);
    } else {
        write_ensemble_csv(c.out, samples);
    }
    std::cerr << stats.dump() << '\n';
    return 0;
}

// Recomputes metrics and the rank histogram from a run directory written with output.ensembles = true.
int cmd_diag(const std::string& run_dir, const Common& c, std::size_t stride) {
    const fs::path root(run_dir);
    std::vector<CycleMetrics> rows;
    std::vector<std::vector<std::size_t>> ranks;
    std::size_t n_ens = 0;
    const json manifest = read_json((root / "manifest.json").string());
    const std::uint64_t seed = c.seed.value_or(manifest.at("seeds").at("master").get<std::uint64_t>());
    for (int cycle = 1;; ++cycle) {
        std::ostringstream tag;
        tag << std::setw(4) << std::setfill('0') << cycle << ".csv";
        const fs::path f = root / "ensembles" / ("forecast_" + tag.str());
        if (!fs::exists(f)) break;
        const Ensemble fc = read_ensemble_csv(f.string());
        const Ensemble an = read_ensemble_csv((root / "ensembles" / ("analysis_" + tag.str())).string());
        const Ensemble truth = read_ensemble_csv((root / "ensembles" / ("truth_" + tag.str())).string());
        CycleMetrics row;
        row.cycle = cycle;
        row.rmse_forecast = rmse(ensemble_mean(fc), truth.member(0));
        row.rmse_analysis = rmse(ensemble_mean(an), truth.member(0));
        std::ostringstream ctag;
        ctag << "cycle_" << std::setw(4) << std::setfill('0') << cycle << ".json";
        const fs::path chains = root / "chains" / ctag.str();
        if (fs::exists(chains)) {
            const json j = read_json(chains.string());
            if (j.contains("acceptance_rate")) row.acceptance_rate = j["acceptance_rate"].get<double>();
        }
        rows.push_back(row);
        n_ens = an.size();
        ranks.push_back(rank_of_truth(an, truth.member(0), stride,
                                      derive_seed(seed, streams::ranks, static_cast<std::uint64_t>(cycle))));
    }
    if (rows.empty()) throw std::runtime_error("no stored ensembles under " + (root / "ensembles").string());
    const fs::path out = c.out.empty() ? root / "diag" : fs::path(c.out);
    fs::create_directories(out);
    {
        std::ofstream m(out / "metrics.csv");
        write_metrics_csv(m, rows);
    }
    const RankHistogram hist = accumulate_rank_histogram(ranks, n_ens, stride);
    json h = to_json(hist);
    h["uniformity_pvalue"] = rank_uniformity_pvalue(hist);
    std::ofstream(out / "rank_histogram.json") << h.dump(2) << '\n';
    std::cout << "recomputed " << rows.size() << " cycles into " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HMC / cluster-HMC ensemble data assimilation toolkit"};
    app.require_subcommand(1);
    Common common;

    std::string config_path;
    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("config", config_path, "config (.toml or .json)")->required();
    add_common(run, common);

    std::string csv, criterion = "aic";
    std::size_t max_nc = 5, min_members = 5;
    bool full = false;
    auto* fit = app.add_subcommand("fit-gmm", "fit a GMM to an ensemble CSV and write its JSON parameters");
    fit->add_option("csv", csv, "ensemble CSV")->required();
    fit->add_option("--criterion", criterion, "aic or bic");
    fit->add_option("--max-components", max_nc, "largest n_c tried");
    fit->add_option("--min-members", min_members, "membership lower bound per component");
    fit->add_flag("--full", full, "full covariances");
    add_common(fit, common);

    std::string gmm_path, integrator = "verlet";
    std::vector<double> yv;
    double r = 1.0, h = 0.05;
    int m = 20, burn_in = 0, mixing = 15;
    std::size_t n = 1000;
    bool multi = false;
    auto* sample = app.add_subcommand("sample", "sample a GMM-prior posterior with identity observations");
    sample->add_option("--gmm", gmm_path, "GMM JSON")->required();
    sample->add_option("--y", yv, "observation (one value per dimension)")->required();
    sample->add_option("--r", r, "observation error variance");
    sample->add_option("-n,--samples", n, "number of samples");
    sample->add_option("--step-size", h, "symplectic step size h");
    sample->add_option("--steps", m, "symplectic steps per trajectory");
    sample->add_option("--integrator", integrator, "verlet, two_stage or three_stage");
    sample->add_option("--burn-in", burn_in, "burn-in transitions");
    sample->add_option("--mixing", mixing, "transitions between kept samples");
    sample->add_flag("--multi-chain", multi, "one chain per component");
    add_common(sample, common);

    std::string run_dir;
    std::size_t stride = 16;
    auto* diag = app.add_subcommand("diag", "recompute metrics from stored ensembles");
    diag->add_option("run_dir", run_dir, "output directory of a run")->required();
    diag->add_option("--stride", stride, "rank histogram variable stride");
    add_common(diag, common);

    auto* validate_cmd = app.add_subcommand("validate-config", "check a config file");
    validate_cmd->add_option("config", config_path, "config (.toml or .json)")->required();
    add_common(validate_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*run) return cmd_run(config_path, common);
        if (*fit) return cmd_fit_gmm(csv, common, criterion, max_nc, min_members, full);
        if (*sample) return cmd_sample(gmm_path, yv, r, n, multi, common, h, m, integrator, burn_in, mixing);
        if (*diag) return cmd_diag(run_dir, common, stride);
        if (*validate_cmd) {
            const ExperimentConfig cfg = load_config(config_path);
            std::cout << to_json(cfg).dump(2) << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
