#pragma once

#include "hmcda/ensemble.hpp"
#include "hmcda/potential_function.hpp"
#include "hmcda/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <limits>
#include <string>

namespace hmcda {

/// Diagonal mass matrix M; entries are precisions (inverse variances).
class MassMatrix {
public:
    explicit MassMatrix(Eigen::VectorXd diagonal);
    static MassMatrix identity(std::size_t n) { return MassMatrix(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n))); }

    const Eigen::VectorXd& diagonal() const { return diag_; }
    const Eigen::VectorXd& inverse() const { return inv_; }
    std::size_t dim() const { return static_cast<std::size_t>(diag_.size()); }

private:
    Eigen::VectorXd diag_;
    Eigen::VectorXd inv_;
};

struct PhasePoint {
    StateVector x;
    Eigen::VectorXd p;
};

enum class Integrator { verlet, two_stage, three_stage };
Integrator parse_integrator(const std::string& name);
std::string to_string(Integrator integrator);

/// Symplectic integration settings; trajectory length T = m * h.
struct TrajectoryParams {
    double h = 0.05;
    int m = 20;
    Integrator integrator = Integrator::verlet;

    double length() const { return h * m; }
    void validate() const;
};

struct ChainConfig {
    int burn_in = 0;       // transitions discarded before the first kept state
    int mixing_steps = 0;  // transitions discarded between kept states
    std::uint64_t seed = 0;
    StateVector initial;
};

struct ChainStats {
    std::size_t proposals = 0;
    std::size_t acceptances = 0;
    double acceptance_rate = 0.0;
    double mean_abs_dH = 0.0;  // over finite energy errors
};
nlohmann::json to_json(const ChainStats& stats);

/// 1/2 p^T M^{-1} p.
double kinetic_energy(const Eigen::VectorXd& p, const MassMatrix& mass);

double total_energy(const PhasePoint& pt, const MassMatrix& mass, const PotentialFunction& potential);

/// One step of the selected kick-drift-kick splitting scheme for
/// dx/dt = M^{-1} p, dp/dt = -grad J(x). Throws TrajectoryDivergence on
/// non-finite state or gradient.
PhasePoint symplectic_step(const PhasePoint& pt, const TrajectoryParams& params, const MassMatrix& mass,
                           const PotentialFunction& potential);

/// m composed steps (gradients shared between adjacent steps).
PhasePoint integrate_trajectory(const PhasePoint& pt, const TrajectoryParams& params, const MassMatrix& mass,
                                const PotentialFunction& potential);

/// 1 ^ exp(-dH); zero for non-finite dH.
double acceptance_probability(double delta_h);

struct Transition {
    StateVector x;
    bool accepted = false;
    double delta_h = 0.0;  // +inf when the trajectory diverged
    double potential = 0.0;  // J at the returned x
};

/// One Metropolis-corrected HMC transition. `current_potential` is J(x_current)
/// when already known (NaN to recompute).
Transition propose_and_accept(const StateVector& x_current, const MassMatrix& mass,
                              const PotentialFunction& potential, const TrajectoryParams& params, Rng& rng,
                              double current_potential = std::numeric_limits<double>::quiet_NaN());

struct ChainResult {
    Ensemble samples;
    ChainStats stats;
};

/// Runs burn_in transitions, then keeps every (mixing_steps + 1)-th state
/// until n_samples states are collected.
ChainResult run_chain(const PotentialFunction& potential, const MassMatrix& mass, const TrajectoryParams& params,
                      const ChainConfig& cfg, std::size_t n_samples);

}  // namespace hmcda
