#pragma once

#include "hmcda/config.hpp"
#include "hmcda/diagnostics.hpp"
#include "hmcda/qg.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hmcda {

inline constexpr const char* kVersion = "0.1.0";

// Seed streams derived from the master seed (recorded in the manifest).
namespace streams {
inline constexpr std::uint64_t spinup = 1;
inline constexpr std::uint64_t obs_noise = 2;
inline constexpr std::uint64_t obs_network = 3;
inline constexpr std::uint64_t filter = 4;
inline constexpr std::uint64_t ranks = 5;
inline constexpr std::uint64_t prior = 6;
}  // namespace streams

struct RunFailure {
    int cycle = -1;
    std::string stage;
    std::string message;
};

struct RunManifest {
    nlohmann::json config;             // resolved configuration
    std::string version = kVersion;
    nlohmann::json seeds;
    std::vector<std::string> artifacts;  // relative to the output directory
    nlohmann::json timings;            // written to timings.json, not the manifest
    std::optional<RunFailure> failure;
    nlohmann::json summary;

    nlohmann::json to_json() const;
};

/// Thrown by the run functions after the manifest recording the failure is written.
class RunError : public std::runtime_error {
public:
    RunError(RunFailure f)
        : std::runtime_error("cycle " + std::to_string(f.cycle) + ", " + f.stage + ": " + f.message),
          failure(std::move(f)) {}
    RunFailure failure;
};

/// Truth and initial ensemble for a QG twin experiment.
struct TwinSetup {
    std::shared_ptr<const qg::Model> model;
    StateVector truth0;  // stream function at cycle 0
    Ensemble initial;    // initial analysis ensemble (stream functions)
};

/// Spins the model up from a slightly perturbed rest state, takes the truth
/// from the end of the spin-up and the members from later snapshots.
TwinSetup make_twin_setup(const ExperimentConfig& cfg);

/// Observation operator for cycle `cycle` (fresh seeded offset each cycle).
std::shared_ptr<const ObservationOperator> make_obs_operator(const ExperimentConfig& cfg, const qg::Grid& grid,
                                                             int cycle);

struct TwinResult {
    RunManifest manifest;
    std::vector<CycleMetrics> metrics;
    std::vector<double> free_rmse;  // per cycle, empty when free_run is off
    RankHistogram ranks;
};

/// Runs the cycle loop and writes all artifacts under cfg.output_dir. A
/// precomputed setup (same config) skips the spin-up.
TwinResult run_twin_experiment(const ExperimentConfig& cfg, const TwinSetup* setup = nullptr);

/// The 5-component prior of the one-dimensional example.
GmmParams static_1d_truth_prior();

/// Posterior density of a 1D mixture prior times a Gaussian likelihood on an
/// evenly spaced grid (normalized by trapezoidal quadrature).
std::vector<double> grid_posterior_1d(const GmmParams& prior, double y, double r, const std::vector<double>& grid);

/// Mass per bin of the grid posterior, on `bins` equal bins over [lo, hi].
std::vector<double> posterior_bin_masses(const GmmParams& prior, double y, double r, std::size_t bins, double lo,
                                         double hi, std::size_t grid_points = 2001);

/// Normalized histogram (samples outside [lo, hi] count toward the total only).
std::vector<double> sample_bin_fractions(const std::vector<double>& samples, std::size_t bins, double lo, double hi);

/// 1/2 sum |p - q|, plus half the sample mass outside the histogram range.
double total_variation(const std::vector<double>& p, const std::vector<double>& q);

struct ModeCoverage {
    double center = 0.0;
    double lo = 0.0, hi = 0.0;     // basin bounds (density minima)
    double analytic_mass = 0.0;
    double sample_fraction = 0.0;
};

/// Splits the grid posterior into basins at interior density minima and
/// reports analytic mass and sample share per basin.
std::vector<ModeCoverage> mode_coverage(const GmmParams& prior, double y, double r, const std::vector<double>& samples,
                                        double lo, double hi, std::size_t grid_points = 2001);

/// MC-ClHMC sampling of a 1D mixture posterior with given parameters: one
/// chain per component started at its mean with mass 1/sigma_i^2.
struct StaticSampleResult {
    std::vector<double> samples;
    std::vector<std::size_t> chain_sizes;
    std::vector<ChainStats> stats;
};
StaticSampleResult mc_clhmc_sample_mixture(const GmmParams& prior, const Observation& y,
                                           std::shared_ptr<const ObservationOperator> op, const FilterConfig& cfg,
                                           std::size_t n_samples);

struct Static1dResult {
    RunManifest manifest;
    Ensemble prior;
    ModelSelectionReport selection;
    std::vector<double> clhmc_samples;
    std::vector<double> mc_clhmc_samples;
    double tv_clhmc = 0.0;
    double tv_mc_clhmc = 0.0;
};

/// Draws (or loads) the prior ensemble, fits a GMM, samples the posterior with
/// ClHMC and MC-ClHMC and writes histograms next to the grid posterior.
Static1dResult run_static_1d(const ExperimentConfig& cfg);

/// Dispatches on cfg.model and returns the manifest.
RunManifest run_experiment(const ExperimentConfig& cfg);

}  // namespace hmcda
