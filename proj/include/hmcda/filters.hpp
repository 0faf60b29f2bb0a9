#pragma once

#include "hmcda/ensemble.hpp"
#include "hmcda/gmm.hpp"
#include "hmcda/hmc.hpp"
#include "hmcda/potentials.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hmcda {

/// Advances a state from model time t_from to t_to. Must be reentrant.
class ModelPropagator {
public:
    virtual ~ModelPropagator() = default;
    virtual StateVector advance(const StateVector& x, int t_from, int t_to) const = 0;
};

class FunctionPropagator final : public ModelPropagator {
public:
    using Fn = std::function<StateVector(const StateVector&, int, int)>;
    explicit FunctionPropagator(Fn fn) : fn_(std::move(fn)) {}
    StateVector advance(const StateVector& x, int t_from, int t_to) const override {
        return t_from == t_to ? x : fn_(x, t_from, t_to);
    }

private:
    Fn fn_;
};

enum class FilterKind { hmc, clhmc, mc_clhmc, denkf };
FilterKind parse_filter_kind(const std::string& name);
std::string to_string(FilterKind kind);

enum class InitPolicy { ensemble_mean, max_weight_component_mean, max_likelihood_component_mean };
InitPolicy parse_init_policy(const std::string& name);
std::string to_string(InitPolicy policy);

struct GmmSettings {
    Criterion criterion = Criterion::aic;
    std::vector<std::size_t> candidates{1, 2, 3, 4, 5};
    std::size_t min_members = 5;
    EmOptions em;
};

struct FilterConfig {
    FilterKind kind = FilterKind::hmc;
    TrajectoryParams trajectory;
    bool divide_h_by_n_c = false;  // MC-ClHMC: use h / n_c
    int burn_in = 50;
    int mixing_steps = 15;
    InitPolicy init_policy = InitPolicy::ensemble_mean;
    bool full_covariance = false;  // HMC prior: dense sample covariance instead of its diagonal
    GmmSettings gmm;
    double variance_blend = 0.0;   // MC-ClHMC local mass: average local variances with this value (0 = off)
    double localization_radius = 12.0;  // DEnKF; <= 0 disables localization
    double inflation = 1.06;
    double precision_radius = 0.0; // sampling filters: > 0 analyses in locally whitened coordinates
    IndexDistance distance;        // localization / precision metric; |i - j| when empty
    std::size_t n_samples = 0;     // sampling filters: analysis size, 0 = forecast size
    std::uint64_t seed = 0;
    unsigned threads = 0;          // 0 = default_threads()

    void validate() const;
};

/// Spec-level defaults for the QG experiments (three-stage integrator) or the
/// 1D example (Verlet).
FilterConfig default_filter_config(FilterKind kind, bool nonlinear_obs, bool qg);

struct CycleResult {
    Ensemble analysis;
    Ensemble forecast;
    std::optional<ModelSelectionReport> gmm;
    std::vector<ChainStats> chain_stats;
    std::vector<std::size_t> chain_sizes;
    bool fell_back_to_hmc = false;
    double forecast_seconds = 0.0;
    double analysis_seconds = 0.0;

    /// Proposal-weighted acceptance over all chains; empty when no chain ran.
    std::optional<double> acceptance_rate() const;
};

/// Advances every member; throws ForecastFailure naming the first failing member.
Ensemble forecast(const ModelPropagator& model, const Ensemble& analysis, int t_from, int t_to, unsigned threads = 0);

struct ComponentLabels {
    std::vector<std::size_t> labels;  // hard assignment per member
    std::size_t component = 0;
};

/// 0.5 * (var + blend) wherever global > 0; var unchanged when blend == 0.
Eigen::VectorXd blend_variances(const Eigen::VectorXd& var, const Eigen::VectorXd& global, double blend);

/// Diagonal mass from per-coordinate forecast precisions (global), or from the
/// members assigned to one component (local). Variances are blended, then
/// floored with default_variance_floor. Components with fewer than two members
/// use the global variances.
MassMatrix build_mass_matrix(const Ensemble& forecast, const std::optional<ComponentLabels>& labels = {},
                             double variance_blend = 0.0);

/// Gaussian prior from the ensemble mean and (diagonal or full) sample covariance,
/// with the diagonal blended and floored.
GaussianPriorSpec gaussian_prior_from_ensemble(const Ensemble& forecast, bool full_covariance,
                                               double variance_blend = 0.0);

/// Mixture with every component's variances blended against the forecast spread.
GmmParams blend_mixture(const GmmParams& gmm, const Ensemble& forecast, double variance_blend);

StateVector init_chain_position(const Ensemble& forecast, const GmmParams* gmm, InitPolicy policy,
                                const Observation* y = nullptr, const ObservationOperator* op = nullptr);

/// log(tau_i) - 1/2 ||y - H(mu_i)||^2_{R^-1} per component.
std::vector<double> component_log_weights(const GmmParams& gmm, const Observation& y, const ObservationOperator& op);

/// Splits n_ens over components in proportion to exp(log_raw), largest
/// remainder rounding, at least one for every component with finite log_raw.
std::vector<std::size_t> allocate_counts(const std::vector<double>& log_raw, std::size_t n_ens);

std::vector<std::size_t> allocate_chain_sizes(const GmmParams& gmm, const Observation& y,
                                              const ObservationOperator& op, std::size_t n_ens);

CycleResult hmc_analysis(const Ensemble& forecast, const Observation& y,
                         std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg);
CycleResult clhmc_analysis(const Ensemble& forecast, const Observation& y,
                           std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg);
CycleResult mc_clhmc_analysis(const Ensemble& forecast, const Observation& y,
                              std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg);
CycleResult denkf_analysis(const Ensemble& forecast, const Observation& y,
                           std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg);

/// Runs the sampling filter cfg.kind on the forecast whitened by a local
/// modified Cholesky factor (radius cfg.precision_radius), with the observation
/// operator composed accordingly, and maps the analysis back. Blending is
/// skipped in the whitened coordinates.
CycleResult whitened_analysis(const Ensemble& forecast, const Observation& y,
                              std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg);

/// Dispatches on cfg.kind; sampling filters go through whitened_analysis when
/// cfg.precision_radius > 0.
CycleResult analysis_step(const Ensemble& forecast, const Observation& y,
                          std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg);

}  // namespace hmcda
