#include "hmcda/hmc.hpp"

#include "hmcda/error.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <span>

namespace hmcda {

namespace {

// Kick-drift-...-kick splitting coefficients, as fractions of h. A scheme with
// D drifts has D + 1 kicks; the last kick of one step and the first of the next
// act at the same position and share a gradient evaluation.
struct Scheme {
    std::array<double, 4> kick{};
    std::array<double, 3> drift{};
    int drifts = 0;
};

constexpr double kTwoStageB = 0.193183327503784;
constexpr double kThreeStageB = 0.118880109665480;
constexpr double kThreeStageA = 0.296195042611266;

Scheme scheme_for(Integrator integrator) {
    switch (integrator) {
        case Integrator::verlet:
            return {{0.5, 0.5, 0.0, 0.0}, {1.0, 0.0, 0.0}, 1};
        case Integrator::two_stage:
            return {{kTwoStageB, 1.0 - 2.0 * kTwoStageB, kTwoStageB, 0.0}, {0.5, 0.5, 0.0}, 2};
        case Integrator::three_stage:
            return {{kThreeStageB, 0.5 - kThreeStageB, 0.5 - kThreeStageB, kThreeStageB},
                    {kThreeStageA, 1.0 - 2.0 * kThreeStageA, kThreeStageA},
                    3};
    }
    throw InvalidInput("unknown integrator");
}

Eigen::VectorXd checked_gradient(const PotentialFunction& potential, const Eigen::VectorXd& x) {
    if (!x.allFinite()) throw TrajectoryDivergence("non-finite position along trajectory");
    Eigen::VectorXd g = potential.gradient(x);
    if (!g.allFinite()) throw TrajectoryDivergence("non-finite potential gradient along trajectory");
    return g;
}

// Advances pt in place by `steps` steps; `grad` holds grad J(pt.x) on entry and exit.
void advance(PhasePoint& pt, Eigen::VectorXd& grad, const TrajectoryParams& params, const MassMatrix& mass,
             const PotentialFunction& potential, int steps) {
    const Scheme s = scheme_for(params.integrator);
    const double h = params.h;
    for (int step = 0; step < steps; ++step) {
        for (int k = 0; k < s.drifts; ++k) {
            pt.p.noalias() -= (s.kick[static_cast<std::size_t>(k)] * h) * grad;
            pt.x += (s.drift[static_cast<std::size_t>(k)] * h) * pt.p.cwiseProduct(mass.inverse());
            grad = checked_gradient(potential, pt.x);
        }
        pt.p.noalias() -= (s.kick[static_cast<std::size_t>(s.drifts)] * h) * grad;
    }
    if (!pt.p.allFinite()) throw TrajectoryDivergence("non-finite momentum along trajectory");
}

void check_dims(const PhasePoint& pt, const MassMatrix& mass, const PotentialFunction& potential) {
    if (pt.x.size() != pt.p.size() || static_cast<std::size_t>(pt.x.size()) != mass.dim() ||
        potential.dim() != mass.dim())
        throw InvalidInput("phase point, mass matrix and potential dimensions disagree");
}

}  // namespace

MassMatrix::MassMatrix(Eigen::VectorXd diagonal) : diag_(std::move(diagonal)) {
    if (diag_.size() == 0) throw InvalidInput("mass matrix is empty");
    if (!((diag_.array() > 0.0).all() && diag_.allFinite()))
        throw InvalidInput("mass matrix diagonal must be positive and finite");
    inv_ = diag_.cwiseInverse();
}

Integrator parse_integrator(const std::string& name) {
    if (name == "verlet") return Integrator::verlet;
    if (name == "two_stage" || name == "2-stage") return Integrator::two_stage;
    if (name == "three_stage" || name == "3-stage") return Integrator::three_stage;
    throw InvalidInput("unknown integrator '" + name + "'");
}

std::string to_string(Integrator integrator) {
    switch (integrator) {
        case Integrator::verlet: return "verlet";
        case Integrator::two_stage: return "two_stage";
        case Integrator::three_stage: return "three_stage";
    }
    return "?";
}

void TrajectoryParams::validate() const {
    if (!(h > 0.0) || !std::isfinite(h)) throw InvalidInput("trajectory step size h must be positive");
    if (m < 1) throw InvalidInput("trajectory step count m must be >= 1");
}

nlohmann::json to_json(const ChainStats& s) {
    return {{"proposals", s.proposals},
            {"acceptances", s.acceptances},
            {"acceptance_rate", s.acceptance_rate},
            {"mean_abs_dH", s.mean_abs_dH}};
}

double kinetic_energy(const Eigen::VectorXd& p, const MassMatrix& mass) {
    if (static_cast<std::size_t>(p.size()) != mass.dim()) throw InvalidInput("kinetic_energy: dimension mismatch");
    return 0.5 * (p.array().square() * mass.inverse().array()).sum();
}

double total_energy(const PhasePoint& pt, const MassMatrix& mass, const PotentialFunction& potential) {
    return kinetic_energy(pt.p, mass) + potential.value(pt.x);
}

PhasePoint symplectic_step(const PhasePoint& pt, const TrajectoryParams& params, const MassMatrix& mass,
                           const PotentialFunction& potential) {
    params.validate();
    check_dims(pt, mass, potential);
    PhasePoint out = pt;
    Eigen::VectorXd grad = checked_gradient(potential, out.x);
    advance(out, grad, params, mass, potential, 1);
    return out;
}

PhasePoint integrate_trajectory(const PhasePoint& pt, const TrajectoryParams& params, const MassMatrix& mass,
                                const PotentialFunction& potential) {
    params.validate();
    check_dims(pt, mass, potential);
    PhasePoint out = pt;
    Eigen::VectorXd grad = checked_gradient(potential, out.x);
    advance(out, grad, params, mass, potential, params.m);
    return out;
}

double acceptance_probability(double delta_h) {
    if (std::isnan(delta_h) || delta_h == std::numeric_limits<double>::infinity()) return 0.0;
    return delta_h <= 0.0 ? 1.0 : std::exp(-delta_h);
}

Transition propose_and_accept(const StateVector& x_current, const MassMatrix& mass,
                              const PotentialFunction& potential, const TrajectoryParams& params, Rng& rng,
                              double current_potential) {
    const auto n = static_cast<Eigen::Index>(mass.dim());
    if (x_current.size() != n) throw InvalidInput("propose_and_accept: dimension mismatch");
    if (std::isnan(current_potential)) current_potential = potential.value(x_current);
    if (!std::isfinite(current_potential)) throw InvalidInput("potential is not finite at the current state");

    PhasePoint start{x_current, Eigen::VectorXd(n)};
    for (Eigen::Index j = 0; j < n; ++j) start.p(j) = std::sqrt(mass.diagonal()(j)) * rng.normal();
    const double h0 = kinetic_energy(start.p, mass) + current_potential;

    double delta_h = std::numeric_limits<double>::infinity();
    double proposal_potential = 0.0;
    PhasePoint proposal;
    try {
        proposal = integrate_trajectory(start, params, mass, potential);
        proposal_potential = potential.value(proposal.x);
        const double h1 = kinetic_energy(proposal.p, mass) + proposal_potential;
        if (std::isfinite(h1)) delta_h = h1 - h0;
    } catch (const TrajectoryDivergence&) {
    }
    const double u = rng.uniform();
    if (acceptance_probability(delta_h) > u) return {std::move(proposal.x), true, delta_h, proposal_potential};
    return {x_current, false, delta_h, current_potential};
}

ChainResult run_chain(const PotentialFunction& potential, const MassMatrix& mass, const TrajectoryParams& params,
                      const ChainConfig& cfg, std::size_t n_samples) {
    params.validate();
    if (n_samples < 1) throw InvalidInput("run_chain: n_samples must be >= 1");
    if (cfg.burn_in < 0 || cfg.mixing_steps < 0) throw InvalidInput("run_chain: negative burn-in or mixing steps");
    if (static_cast<std::size_t>(cfg.initial.size()) != mass.dim() || potential.dim() != mass.dim())
        throw InvalidInput("run_chain: initial state, mass matrix and potential dimensions disagree");

    Rng rng(cfg.seed);
    StateVector x = cfg.initial;
    double j = potential.value(x);
    if (!std::isfinite(j)) throw FitFailure("run_chain: potential is not finite at the initial state");

    for (int b = 0; b < cfg.burn_in; ++b) {
        Transition t = propose_and_accept(x, mass, potential, params, rng, j);
        x = std::move(t.x);
        j = t.potential;
    }

    ChainResult out;
    out.samples.members.resize(static_cast<Eigen::Index>(mass.dim()), static_cast<Eigen::Index>(n_samples));
    double sum_abs_dh = 0.0;
    std::size_t finite_dh = 0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (int k = 0; k <= cfg.mixing_steps; ++k) {
            Transition t = propose_and_accept(x, mass, potential, params, rng, j);
            ++out.stats.proposals;
            if (t.accepted) ++out.stats.acceptances;
            if (std::isfinite(t.delta_h)) {
                sum_abs_dh += std::abs(t.delta_h);
                ++finite_dh;
            }
            x = std::move(t.x);
            j = t.potential;
        }
        out.samples.members.col(static_cast<Eigen::Index>(s)) = x;
    }
    out.stats.acceptance_rate =
        static_cast<double>(out.stats.acceptances) / static_cast<double>(out.stats.proposals);
    out.stats.mean_abs_dH = finite_dh ? sum_abs_dh / static_cast<double>(finite_dh) : 0.0;
    return out;
}

}  // namespace hmcda
