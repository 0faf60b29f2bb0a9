#include "hmcda/filters.hpp"

#include "hmcda/error.hpp"
#include "hmcda/log.hpp"
#include "hmcda/parallel.hpp"
#include "hmcda/precision.hpp"
#include "hmcda/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace hmcda {

namespace {

// Stream ids for seeds derived from FilterConfig::seed.
constexpr std::uint64_t kStreamChain = 1;
constexpr std::uint64_t kStreamGmm = 2;
constexpr std::uint64_t kStreamMultiChain = 3;

IndexDistance index_distance(const FilterConfig& cfg) {
    if (cfg.distance) return cfg.distance;
    return [](std::size_t i, std::size_t j) { return std::abs(static_cast<double>(i) - static_cast<double>(j)); };
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_dims(const Ensemble& forecast, const Observation& y, const ObservationOperator& op) {
    validate(forecast, 2);
    validate(y);
    if (op.state_dim() != forecast.dim()) throw InvalidInput("observation operator state dimension mismatch");
    if (op.obs_dim() != y.size()) throw InvalidInput("observation operator output dimension mismatch");
}

std::size_t sample_count(const Ensemble& forecast, const FilterConfig& cfg) {
    return cfg.n_samples ? cfg.n_samples : forecast.size();
}

// Fits the GMM prior, or returns nullopt (after a warning) when every fit fails.
std::optional<ModelSelectionReport> fit_prior(const Ensemble& forecast, const FilterConfig& cfg) {
    try {
        return select_model(forecast, cfg.gmm.candidates, cfg.gmm.criterion, cfg.gmm.min_members,
                            derive_seed(cfg.seed, kStreamGmm), cfg.gmm.em);
    } catch (const FitFailure& e) {
        log_warning(std::string("GMM fit failed, falling back to the HMC filter: ") + e.what());
        return std::nullopt;
    }
}

CycleResult fallback_to_hmc(const Ensemble& forecast, const Observation& y,
                            std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg,
                            std::optional<ModelSelectionReport> report) {
    CycleResult r = hmc_analysis(forecast, y, std::move(op), cfg);
    r.gmm = std::move(report);
    r.fell_back_to_hmc = true;
    return r;
}

}  // namespace

FilterKind parse_filter_kind(const std::string& name) {
    if (name == "hmc" || name == "HMC") return FilterKind::hmc;
    if (name == "clhmc" || name == "ClHMC") return FilterKind::clhmc;
    if (name == "mc_clhmc" || name == "MC_ClHMC" || name == "mc-clhmc") return FilterKind::mc_clhmc;
    if (name == "denkf" || name == "DEnKF") return FilterKind::denkf;
    throw InvalidInput("unknown filter kind '" + name + "'");
}

std::string to_string(FilterKind kind) {
    switch (kind) {
        case FilterKind::hmc: return "hmc";
        case FilterKind::clhmc: return "clhmc";
        case FilterKind::mc_clhmc: return "mc_clhmc";
        case FilterKind::denkf: return "denkf";
    }
    return "?";
}

InitPolicy parse_init_policy(const std::string& name) {
    if (name == "ensemble_mean") return InitPolicy::ensemble_mean;
    if (name == "max_weight_component_mean") return InitPolicy::max_weight_component_mean;
    if (name == "max_likelihood_component_mean") return InitPolicy::max_likelihood_component_mean;
    throw InvalidInput("unknown chain initialization policy '" + name + "'");
}

std::string to_string(InitPolicy policy) {
    switch (policy) {
        case InitPolicy::ensemble_mean: return "ensemble_mean";
        case InitPolicy::max_weight_component_mean: return "max_weight_component_mean";
        case InitPolicy::max_likelihood_component_mean: return "max_likelihood_component_mean";
    }
    return "?";
}

void FilterConfig::validate() const {
    if (kind != FilterKind::denkf) {
        trajectory.validate();
        if (burn_in < 0 || mixing_steps < 0) throw InvalidInput("burn_in and mixing_steps must be >= 0");
    }
    if (kind == FilterKind::clhmc || kind == FilterKind::mc_clhmc) {
        if (gmm.candidates.empty()) throw InvalidInput("GMM candidate list is empty");
        for (auto c : gmm.candidates)
            if (c == 0) throw InvalidInput("GMM candidates must be >= 1");
        if (gmm.min_members < 1) throw InvalidInput("min_members must be >= 1");
    }
    if (variance_blend < 0.0) throw InvalidInput("variance_blend must be >= 0");
    if (precision_radius < 0.0) throw InvalidInput("precision_radius must be >= 0");
    if (precision_radius > 0.0 && full_covariance)
        throw InvalidInput("precision_radius and full_covariance are mutually exclusive");
    if (kind == FilterKind::denkf && inflation < 1.0) throw InvalidInput("inflation must be >= 1");
}

FilterConfig default_filter_config(FilterKind kind, bool nonlinear_obs, bool qg) {
    FilterConfig c;
    c.kind = kind;
    c.trajectory.integrator = qg ? Integrator::three_stage : Integrator::verlet;
    c.burn_in = 50;
    c.mixing_steps = 15;
    if (kind == FilterKind::mc_clhmc) {
        c.trajectory.h = nonlinear_obs ? 0.0075 : 0.05;
        c.trajectory.m = 15;
        c.divide_h_by_n_c = qg;
        c.burn_in = 0;
        c.variance_blend = qg ? 5.0 : 0.0;
    } else {
        c.trajectory.h = nonlinear_obs ? 0.015 : 0.075;
        c.trajectory.m = 25;
    }
    if (!qg) {
        c.trajectory.h = 0.05;
        c.trajectory.m = 20;
        c.divide_h_by_n_c = false;
        c.burn_in = 0;
        c.init_policy = InitPolicy::max_likelihood_component_mean;
    }
    return c;
}

std::optional<double> CycleResult::acceptance_rate() const {
    std::size_t p = 0, a = 0;
    for (const auto& s : chain_stats) {
        p += s.proposals;
        a += s.acceptances;
    }
    if (p == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(p);
}

Ensemble forecast(const ModelPropagator& model, const Ensemble& analysis, int t_from, int t_to, unsigned threads) {
    validate(analysis);
    Ensemble out(Eigen::MatrixXd(analysis.members.rows(), analysis.members.cols()), t_to);
    parallel_for(
        analysis.size(),
        [&](std::size_t e) {
            StateVector x;
            try {
                x = model.advance(analysis.member(e), t_from, t_to);
            } catch (const std::exception& err) {
                throw ForecastFailure(e, err.what());
            }
            if (static_cast<std::size_t>(x.size()) != analysis.dim() || !x.allFinite())
                throw ForecastFailure(e, "model returned an invalid state");
            out.member(e) = x;
        },
        threads);
    return out;
}

Eigen::VectorXd blend_variances(const Eigen::VectorXd& var, const Eigen::VectorXd& global, double blend) {
    if (var.size() != global.size()) throw InvalidInput("blend_variances: size mismatch");
    Eigen::VectorXd out = var;
    if (blend <= 0.0) return out;
    for (Eigen::Index k = 0; k < out.size(); ++k)
        if (global(k) > 0.0) out(k) = 0.5 * (out(k) + blend);
    return out;
}

MassMatrix build_mass_matrix(const Ensemble& forecast, const std::optional<ComponentLabels>& labels,
                             double variance_blend) {
    validate(forecast, 2);
    const Eigen::VectorXd floor = default_variance_floor(forecast);
    const Eigen::VectorXd global = ensemble_covariance(forecast, true).diagonal();
    Eigen::VectorXd var = global;
    if (labels) {
        if (labels->labels.size() != forecast.size()) throw InvalidInput("one label per member required");
        std::vector<Eigen::Index> cols;
        for (std::size_t e = 0; e < forecast.size(); ++e)
            if (labels->labels[e] == labels->component) cols.push_back(static_cast<Eigen::Index>(e));
        if (cols.size() >= 2) {
            Ensemble sub(forecast.members(Eigen::all, cols));
            var = ensemble_covariance(sub, true).diagonal();
        }
    }
    return MassMatrix(blend_variances(var, global, variance_blend).cwiseMax(floor).cwiseInverse());
}

GaussianPriorSpec gaussian_prior_from_ensemble(const Ensemble& forecast, bool full_covariance,
                                               double variance_blend) {
    validate(forecast, 2);
    const Eigen::VectorXd floor = default_variance_floor(forecast);
    const Eigen::VectorXd global = ensemble_covariance(forecast, true).diagonal();
    CovarianceEstimate cov = ensemble_covariance(forecast, !full_covariance);
    if (cov.is_diagonal()) {
        cov = CovarianceEstimate::from_diagonal(blend_variances(cov.diagonal(), global, variance_blend).cwiseMax(floor));
    } else {
        Eigen::MatrixXd m = cov.matrix();
        const Eigen::VectorXd d = blend_variances(m.diagonal(), global, variance_blend).cwiseMax(floor);
        m.diagonal() = d;
        cov = CovarianceEstimate::from_full(std::move(m));
    }
    return {ensemble_mean(forecast), std::move(cov)};
}

GmmParams blend_mixture(const GmmParams& gmm, const Ensemble& forecast, double variance_blend) {
    if (variance_blend <= 0.0) return gmm;
    const Eigen::VectorXd global = ensemble_covariance(forecast, true).diagonal();
    std::vector<CovarianceEstimate> covs;
    for (std::size_t i = 0; i < gmm.n_components(); ++i) {
        const CovarianceEstimate& c = gmm.covariance(i);
        if (c.is_diagonal()) {
            covs.push_back(CovarianceEstimate::from_diagonal(blend_variances(c.diagonal(), global, variance_blend)));
        } else {
            Eigen::MatrixXd m = c.matrix();
            m.diagonal() = blend_variances(m.diagonal(), global, variance_blend);
            covs.push_back(CovarianceEstimate::from_full(std::move(m)));
        }
    }
    return GmmParams(gmm.weights(), gmm.means(), std::move(covs));
}

std::vector<double> component_log_weights(const GmmParams& gmm, const Observation& y, const ObservationOperator& op) {
    std::vector<double> out(gmm.n_components());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(gmm.weight(i)) - obs_misfit(gmm.mean(i), y, op);
    return out;
}

StateVector init_chain_position(const Ensemble& forecast, const GmmParams* gmm, InitPolicy policy,
                                const Observation* y, const ObservationOperator* op) {
    if (policy == InitPolicy::ensemble_mean) return ensemble_mean(forecast);
    if (!gmm) throw InvalidInput("component initialization policies need GMM parameters");
    std::size_t best = 0;
    if (policy == InitPolicy::max_weight_component_mean) {
        gmm->weights().maxCoeff(&best);
        return gmm->mean(best);
    }
    if (!y || !op) throw InvalidInput("max_likelihood_component_mean needs the observation and operator");
    const auto lw = component_log_weights(*gmm, *y, *op);
    best = static_cast<std::size_t>(std::max_element(lw.begin(), lw.end()) - lw.begin());
    return gmm->mean(best);
}

std::vector<std::size_t> allocate_counts(const std::vector<double>& log_raw, std::size_t n_ens) {
    const std::size_t nc = log_raw.size();
    if (nc == 0) throw InvalidInput("allocate_counts: no components");
    double top = -std::numeric_limits<double>::infinity();
    for (double v : log_raw)
        if (!std::isnan(v)) top = std::max(top, v);

    std::vector<double> p(nc, 0.0);
    std::size_t positive = 0;
    if (!std::isfinite(top)) {
        log_warning("chain allocation: every component likelihood underflows, allocating equally");
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(nc));
        positive = nc;
    } else {
        double sum = 0.0;
        for (std::size_t i = 0; i < nc; ++i) {
            if (std::isfinite(log_raw[i])) {
                p[i] = std::exp(log_raw[i] - top);
                ++positive;
            }
            sum += p[i];
        }
        for (auto& v : p) v /= sum;
    }
    if (positive > n_ens) throw InvalidInput("allocate_counts: fewer members than components");

    std::vector<std::size_t> counts(nc);
    std::vector<double> rem(nc);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < nc; ++i) {
        const double quota = static_cast<double>(n_ens) * p[i];
        counts[i] = static_cast<std::size_t>(std::floor(quota));
        rem[i] = quota - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(nc);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < n_ens; k = (k + 1) % nc) {
        ++counts[order[k]];
        ++assigned;
    }
    // Every component with positive weight keeps at least one sample.
    for (std::size_t i = 0; i < nc; ++i) {
        if (p[i] <= 0.0 || counts[i] > 0) continue;
        const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[donor];
        counts[i] = 1;
    }
    return counts;
}

std::vector<std::size_t> allocate_chain_sizes(const GmmParams& gmm, const Observation& y,
                                              const ObservationOperator& op, std::size_t n_ens) {
    return allocate_counts(component_log_weights(gmm, y, op), n_ens);
}

CycleResult hmc_analysis(const Ensemble& forecast, const Observation& y,
                         std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    check_dims(forecast, y, *op);
    cfg.validate();
    GaussianPotential potential(gaussian_prior_from_ensemble(forecast, cfg.full_covariance, cfg.variance_blend), y, op);
    const MassMatrix mass = build_mass_matrix(forecast, {}, cfg.variance_blend);

    ChainConfig chain;
    chain.burn_in = cfg.burn_in;
    chain.mixing_steps = cfg.mixing_steps;
    chain.seed = derive_seed(cfg.seed, kStreamChain);
    chain.initial = ensemble_mean(forecast);
    ChainResult res = run_chain(potential, mass, cfg.trajectory, chain, sample_count(forecast, cfg));

    CycleResult out;
    out.forecast = forecast;
    out.analysis = std::move(res.samples);
    out.analysis.time_index = forecast.time_index;
    out.chain_stats.push_back(res.stats);
    out.chain_sizes.push_back(sample_count(forecast, cfg));
    out.analysis_seconds = seconds_since(t0);
    return out;
}

CycleResult clhmc_analysis(const Ensemble& forecast, const Observation& y,
                           std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    check_dims(forecast, y, *op);
    cfg.validate();
    auto report = fit_prior(forecast, cfg);
    if (!report || report->selected_n_c == 1) return fallback_to_hmc(forecast, y, op, cfg, std::move(report));

    const GmmParams gmm = blend_mixture(report->selected().params, forecast, cfg.variance_blend);
    MixturePotential potential(MixturePriorSpec(gmm), y, op);
    const MassMatrix mass = build_mass_matrix(forecast, {}, cfg.variance_blend);

    ChainConfig chain;
    chain.burn_in = cfg.burn_in;
    chain.mixing_steps = cfg.mixing_steps;
    chain.seed = derive_seed(cfg.seed, kStreamChain);
    chain.initial = init_chain_position(forecast, &gmm, cfg.init_policy, &y, op.get());
    ChainResult res = run_chain(potential, mass, cfg.trajectory, chain, sample_count(forecast, cfg));

    CycleResult out;
    out.forecast = forecast;
    out.analysis = std::move(res.samples);
    out.analysis.time_index = forecast.time_index;
    out.chain_stats.push_back(res.stats);
    out.chain_sizes.push_back(sample_count(forecast, cfg));
    out.gmm = std::move(report);
    out.analysis_seconds = seconds_since(t0);
    return out;
}

CycleResult mc_clhmc_analysis(const Ensemble& forecast, const Observation& y,
                              std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    check_dims(forecast, y, *op);
    cfg.validate();
    auto report = fit_prior(forecast, cfg);
    if (!report || report->selected_n_c == 1) return fallback_to_hmc(forecast, y, op, cfg, std::move(report));

    const EmResult& fit = report->selected();
    const GmmParams gmm = blend_mixture(fit.params, forecast, cfg.variance_blend);
    const std::size_t nc = gmm.n_components();
    MixturePotential potential(MixturePriorSpec(gmm), y, op);
    const auto sizes = allocate_chain_sizes(gmm, y, *op, sample_count(forecast, cfg));
    const auto labels = fit.resp.hard_labels();

    TrajectoryParams traj = cfg.trajectory;
    if (cfg.divide_h_by_n_c) traj.h /= static_cast<double>(nc);

    std::vector<std::optional<ChainResult>> results(nc);
    parallel_for(
        nc,
        [&](std::size_t i) {
            if (sizes[i] == 0) return;
            const MassMatrix mass = build_mass_matrix(forecast, ComponentLabels{labels, i}, cfg.variance_blend);
            ChainConfig chain;
            chain.burn_in = cfg.burn_in;
            chain.mixing_steps = cfg.mixing_steps;
            chain.seed = derive_seed(cfg.seed, kStreamMultiChain, i);
            chain.initial = gmm.mean(i);
            results[i] = run_chain(potential, mass, traj, chain, sizes[i]);
        },
        cfg.threads);

    CycleResult out;
    out.forecast = forecast;
    out.analysis.members.resize(forecast.members.rows(), static_cast<Eigen::Index>(sample_count(forecast, cfg)));
    out.analysis.time_index = forecast.time_index;
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < nc; ++i) {
        if (!results[i]) continue;
        const auto& s = results[i]->samples.members;
        out.analysis.members.middleCols(col, s.cols()) = s;
        col += s.cols();
        out.chain_stats.push_back(results[i]->stats);
    }
    out.chain_sizes = sizes;
    out.gmm = std::move(report);
    out.analysis_seconds = seconds_since(t0);
    return out;
}

CycleResult denkf_analysis(const Ensemble& forecast, const Observation& y,
                           std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    check_dims(forecast, y, *op);
    cfg.validate();
    if (!op->is_linear()) throw InvalidInput("DEnKF requires a linear observation operator");

    const std::size_t n = forecast.size();
    const auto m = static_cast<Eigen::Index>(y.size());
    const StateVector mean = ensemble_mean(forecast);
    const Eigen::MatrixXd a = anomalies(forecast);
    const double scale = 1.0 / static_cast<double>(n - 1);

    Eigen::MatrixXd ha(m, static_cast<Eigen::Index>(n));
    for (Eigen::Index e = 0; e < ha.cols(); ++e) ha.col(e) = op->apply(a.col(e)) - op->apply(Eigen::VectorXd::Zero(a.rows()));
    const Eigen::VectorXd hmean = op->apply(mean);

    const bool localize = cfg.localization_radius > 0.0;
    const IndexDistance dist = index_distance(cfg);
    const auto anchors = op->anchors();

    Eigen::MatrixXd pht, hpht;
    if (!localize || anchors.size() == static_cast<std::size_t>(m)) {
        pht = scale * a * ha.transpose();
        hpht = scale * ha * ha.transpose();
        if (localize) {
            for (Eigen::Index j = 0; j < m; ++j) {
                for (Eigen::Index k = 0; k < pht.rows(); ++k)
                    pht(k, j) *= gaspari_cohn(dist(static_cast<std::size_t>(k), anchors[static_cast<std::size_t>(j)]),
                                              cfg.localization_radius);
                for (Eigen::Index i = 0; i < m; ++i)
                    hpht(i, j) *= gaspari_cohn(dist(anchors[static_cast<std::size_t>(i)], anchors[static_cast<std::size_t>(j)]),
                                               cfg.localization_radius);
            }
        }
    } else {
        // No observation locations: localize the full covariance and apply H column by column.
        const CovarianceEstimate b =
            apply_localization(ensemble_covariance(forecast, false), dist, cfg.localization_radius);
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(a.rows());
        const Eigen::VectorXd h0 = op->apply(zero);
        Eigen::MatrixXd h(m, a.rows());
        for (Eigen::Index k = 0; k < a.rows(); ++k) h.col(k) = op->apply(Eigen::VectorXd::Unit(a.rows(), k)) - h0;
        pht = b.matrix() * h.transpose();
        hpht = h * pht;
    }

    Eigen::MatrixXd s = hpht;
    s.diagonal() += y.error_variances;
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) {
        log_warning("DEnKF: innovation covariance is not positive definite, regularizing");
        s.diagonal().array() += 1e-10 * std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
        llt.compute(s);
        if (llt.info() != Eigen::Success) throw SolverError("DEnKF innovation solve failed", 0.0);
    }
    // K = PH^T S^{-1}, formed as (S^{-1} H P)^T.
    const Eigen::MatrixXd k = llt.solve(pht.transpose()).transpose();

    Ensemble analysis(Eigen::MatrixXd(a.rows(), a.cols()), forecast.time_index);
    const StateVector amean = mean + k * (y.values - hmean);
    const Eigen::MatrixXd aa = a - 0.5 * k * ha;
    analysis.members = (cfg.inflation * aa).colwise() + amean;

    CycleResult out;
    out.forecast = forecast;
    out.analysis = std::move(analysis);
    out.analysis_seconds = seconds_since(t0);
    return out;
}

CycleResult whitened_analysis(const Ensemble& forecast, const Observation& y,
                              std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    check_dims(forecast, y, *op);
    cfg.validate();
    if (cfg.kind == FilterKind::denkf) throw InvalidInput("whitened analysis applies to the sampling filters");
    LocalPrecisionOptions opts;
    opts.radius = cfg.precision_radius;
    auto transform = std::make_shared<const LocalPrecision>(estimate_local_precision(forecast, index_distance(cfg), opts));

    FilterConfig inner = cfg;
    inner.precision_radius = 0.0;
    inner.variance_blend = 0.0;
    CycleResult r = analysis_step(transform->whiten(forecast), y, std::make_shared<WhitenedOperator>(op, transform), inner);
    r.forecast = forecast;
    r.analysis = transform->color(r.analysis);
    r.analysis_seconds = seconds_since(t0);
    return r;
}

CycleResult analysis_step(const Ensemble& forecast, const Observation& y,
                          std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg) {
    if (cfg.precision_radius > 0.0 && cfg.kind != FilterKind::denkf) return whitened_analysis(forecast, y, std::move(op), cfg);
    switch (cfg.kind) {
        case FilterKind::hmc: return hmc_analysis(forecast, y, std::move(op), cfg);
        case FilterKind::clhmc: return clhmc_analysis(forecast, y, std::move(op), cfg);
        case FilterKind::mc_clhmc: return mc_clhmc_analysis(forecast, y, std::move(op), cfg);
        case FilterKind::denkf: return denkf_analysis(forecast, y, std::move(op), cfg);
    }
    throw InvalidInput("unknown filter kind");
}

}  // namespace hmcda
