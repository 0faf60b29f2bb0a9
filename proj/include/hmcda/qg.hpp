#pragma once

#include "hmcda/ensemble.hpp"
#include "hmcda/potentials.hpp"

#include <Eigen/Sparse>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <utility>
#include <string>
#include <vector>

namespace hmcda::qg {

/// Uniform grid on [0,1]x[0,1], boundary nodes included. Fields are stored
/// row-major: index(i, j) = j * nx + i with i along x and j along y.
struct Grid {
    int nx = 65;
    int ny = 65;

    static Grid square(int n);
    void validate() const;

    double dx() const { return 1.0 / (nx - 1); }
    double dy() const { return 1.0 / (ny - 1); }
    std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i); }
    int col(std::size_t k) const { return static_cast<int>(k % static_cast<std::size_t>(nx)); }
    int row(std::size_t k) const { return static_cast<int>(k / static_cast<std::size_t>(nx)); }
    bool on_boundary(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }
};

struct Params {
    double F = 1600.0;
    double epsilon = 1e-5;
    double A = 2e-12;
    double dt = 1.25;
    double beta_sign = 1.0;  // sign of the psi_x term
    double forcing = 1.0;    // multiplies 2 pi sin(2 pi y)
};

using Field = Eigen::VectorXd;

/// Zero-Dirichlet 5-point Laplacian; boundary nodes of the result are zero.
Field laplacian(const Field& f, const Grid& grid);

/// q = lap(psi) - F psi.
Field vorticity_from_psi(const Field& psi, const Grid& grid, double F);

/// Arakawa's energy- and enstrophy-conserving form of psi_x q_y - psi_y q_x on
/// interior nodes; boundary nodes of the result are zero.
Field jacobian_term(const Field& psi, const Field& q, const Grid& grid);

/// Central-difference d/dx on interior nodes (zero on the boundary).
Field ddx(const Field& f, const Grid& grid);

enum class SolverKind { automatic, direct, conjugate_gradient };

/// Solves (lap - F) psi = q with psi = 0 on the boundary.
class HelmholtzSolver {
public:
    HelmholtzSolver(const Grid& grid, double F, SolverKind kind = SolverKind::automatic);

    /// Throws SolverError when the max-norm residual exceeds 1e-8 ||q||_inf.
    Field solve(const Field& q) const;
    bool direct() const { return direct_; }

private:
    Grid grid_;
    double F_;
    bool direct_;
    Eigen::SparseMatrix<double> a_;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
    std::unique_ptr<Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper>> cg_;
};

Field psi_from_vorticity(const Field& q, const Grid& grid, double F);

/// The QG-1.5 model: q_t = s psi_x - eps J(psi, q) - A lap^3 psi + 2 pi sin(2 pi y).
class Model {
public:
    Model(Grid grid, Params params, SolverKind solver = SolverKind::automatic);

    const Grid& grid() const { return grid_; }
    const Params& params() const { return params_; }

    Field psi_from_q(const Field& q) const { return solver_.solve(q); }
    Field q_from_psi(const Field& psi) const { return vorticity_from_psi(psi, grid_, params_.F); }

    /// dq/dt for vorticity q (psi recovered internally).
    Field tendency(const Field& q) const;
    /// Same assembly given an already inverted psi.
    Field tendency(const Field& q, const Field& psi) const;

    /// Classical RK4 with dt = params.dt; throws ModelBlowUp on non-finite output.
    Field rk4_step(const Field& q) const;

    /// Advances a stream-function state by `steps` model steps.
    Field advance(const Field& psi, int steps) const;

    Field forcing_field() const;

private:
    Grid grid_;
    Params params_;
    HelmholtzSolver solver_;
    Field forcing_;
};

Field qg_tendency(const Field& q, const Grid& grid, const Params& params);
Field rk4_step(const Field& q, const Grid& grid, const Params& params);

/// Explicit RK4 for a generic right-hand side (used by the model and tests).
template <class Rhs>
Field rk4(const Field& q, double dt, const Rhs& rhs) {
    const Field k1 = rhs(q);
    const Field k2 = rhs(q + 0.5 * dt * k1);
    const Field k3 = rhs(q + 0.5 * dt * k2);
    const Field k4 = rhs(q + dt * k3);
    return q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Evenly strided indices with a seeded offset in [0, stride).
std::vector<std::size_t> strided_indices(std::size_t n_var, std::size_t m_obs, std::uint64_t seed, bool random_offset);

std::shared_ptr<SelectionOperator> linear_obs_operator(const Grid& grid, std::size_t m_obs, std::uint64_t seed,
                                                       bool random_offset = true);

/// sqrt(u^2 + v^2 + eta^2) with u = d psi/dy, v = -d psi/dx at selected nodes.
class WindMagnitudeOperator final : public ObservationOperator {
public:
    static constexpr double kEta = 1e-10;

    WindMagnitudeOperator(const Grid& grid, std::vector<std::size_t> indices);

    std::size_t state_dim() const override { return grid_.size(); }
    std::size_t obs_dim() const override { return index_.size(); }
    bool is_linear() const override { return false; }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const override;
    std::span<const std::size_t> anchors() const override { return index_; }

    /// (u, v) at every observed node.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> velocity(const Eigen::VectorXd& x) const;

private:
    struct Tap {
        std::size_t index;
        double weight;
    };
    struct Stencil {
        std::array<Tap, 2> dx;
        std::array<Tap, 2> dy;
    };

    Grid grid_;
    std::vector<std::size_t> index_;
    std::vector<Stencil> stencil_;
};

std::shared_ptr<WindMagnitudeOperator> wind_magnitude_operator(const Grid& grid, std::size_t m_obs,
                                                               std::uint64_t seed, bool random_offset = true);

/// Euclidean distance between the 2D grid coordinates of two state indices, in cells.
IndexDistance grid_distance(const Grid& grid);

// Field I/O: CSV (ny rows of nx values) and QG1 binary checkpoints
// ("QG1\0", nx, ny as uint32 little-endian, then float64 little-endian row-major).
void write_field_csv(std::ostream& out, const Field& f, const Grid& grid);
void write_qg1(std::ostream& out, const Field& f, const Grid& grid);
void write_qg1(const std::string& path, const Field& f, const Grid& grid);
std::pair<Grid, Field> read_qg1(std::istream& in);
std::pair<Grid, Field> read_qg1(const std::string& path);

}  // namespace hmcda::qg
