#include "hmcda/qg.hpp"

#include "hmcda/error.hpp"
#include "hmcda/rng.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace hmcda::qg {

namespace {

void check_field(const Field& f, const Grid& grid) {
    if (static_cast<std::size_t>(f.size()) != grid.size()) throw InvalidInput("field does not match grid");
}

// Interior unknown numbering for the Helmholtz system.
std::size_t interior_index(const Grid& g, int i, int j) {
    return static_cast<std::size_t>(j - 1) * static_cast<std::size_t>(g.nx - 2) + static_cast<std::size_t>(i - 1);
}

}  // namespace

Grid Grid::square(int n) {
    Grid g{n, n};
    g.validate();
    return g;
}

void Grid::validate() const {
    if (nx < 5 || ny < 5) throw InvalidInput("QG grid needs at least 5 nodes per direction");
}

Field laplacian(const Field& f, const Grid& g) {
    check_field(f, g);
    const double ix2 = 1.0 / (g.dx() * g.dx());
    const double iy2 = 1.0 / (g.dy() * g.dy());
    Field out = Field::Zero(f.size());
    const auto nx = static_cast<Eigen::Index>(g.nx);
    for (int j = 1; j < g.ny - 1; ++j) {
        for (int i = 1; i < g.nx - 1; ++i) {
            const auto k = static_cast<Eigen::Index>(g.index(i, j));
            out(k) = (f(k + 1) + f(k - 1) - 2.0 * f(k)) * ix2 + (f(k + nx) + f(k - nx) - 2.0 * f(k)) * iy2;
        }
    }
    return out;
}

Field vorticity_from_psi(const Field& psi, const Grid& g, double F) {
    Field q = laplacian(psi, g) - F * psi;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            if (g.on_boundary(i, j)) q(static_cast<Eigen::Index>(g.index(i, j))) = 0.0;
    return q;
}

Field ddx(const Field& f, const Grid& g) {
    check_field(f, g);
    const double c = 1.0 / (2.0 * g.dx());
    Field out = Field::Zero(f.size());
    for (int j = 1; j < g.ny - 1; ++j)
        for (int i = 1; i < g.nx - 1; ++i) {
            const auto k = static_cast<Eigen::Index>(g.index(i, j));
            out(k) = (f(k + 1) - f(k - 1)) * c;
        }
    return out;
}

Field jacobian_term(const Field& p, const Field& q, const Grid& g) {
    check_field(p, g);
    check_field(q, g);
    const double c = 1.0 / (12.0 * g.dx() * g.dy());
    const auto nx = static_cast<Eigen::Index>(g.nx);
    Field out = Field::Zero(p.size());
    for (int j = 1; j < g.ny - 1; ++j) {
        for (int i = 1; i < g.nx - 1; ++i) {
            const auto k = static_cast<Eigen::Index>(g.index(i, j));
            const Eigen::Index e = k + 1, w = k - 1, n = k + nx, s = k - nx;
            const Eigen::Index ne = n + 1, nw = n - 1, se = s + 1, sw = s - 1;
            const double jpp = (p(e) - p(w)) * (q(n) - q(s)) - (p(n) - p(s)) * (q(e) - q(w));
            const double jpx = p(e) * (q(ne) - q(se)) - p(w) * (q(nw) - q(sw)) - p(n) * (q(ne) - q(nw)) +
                               p(s) * (q(se) - q(sw));
            const double jxp = p(ne) * (q(n) - q(e)) - p(sw) * (q(w) - q(s)) - p(nw) * (q(n) - q(w)) +
                               p(se) * (q(e) - q(s));
            out(k) = (jpp + jpx + jxp) * c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

HelmholtzSolver::HelmholtzSolver(const Grid& grid, double F, SolverKind kind) : grid_(grid), F_(F) {
    grid_.validate();
    if (!(F >= 0.0)) throw InvalidInput("Helmholtz coefficient F must be non-negative");
    const int mx = grid_.nx - 2;
    const int my = grid_.ny - 2;
    const auto n = static_cast<Eigen::Index>(mx) * my;
    direct_ = kind == SolverKind::direct || (kind == SolverKind::automatic && grid_.size() <= 100 * 100);

    // A = -(lap - F) restricted to interior nodes; symmetric positive definite.
    const double ix2 = 1.0 / (grid_.dx() * grid_.dx());
    const double iy2 = 1.0 / (grid_.dy() * grid_.dy());
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(n) * 5);
    for (int j = 1; j <= my; ++j) {
        for (int i = 1; i <= mx; ++i) {
            const auto r = static_cast<int>(interior_index(grid_, i, j));
            t.emplace_back(r, r, 2.0 * ix2 + 2.0 * iy2 + F);
            if (i > 1) t.emplace_back(r, static_cast<int>(interior_index(grid_, i - 1, j)), -ix2);
            if (i < mx) t.emplace_back(r, static_cast<int>(interior_index(grid_, i + 1, j)), -ix2);
            if (j > 1) t.emplace_back(r, static_cast<int>(interior_index(grid_, i, j - 1)), -iy2);
            if (j < my) t.emplace_back(r, static_cast<int>(interior_index(grid_, i, j + 1)), -iy2);
        }
    }
    a_.resize(n, n);
    a_.setFromTriplets(t.begin(), t.end());
    if (direct_) {
        llt_.compute(a_);
        if (llt_.info() != Eigen::Success) throw SolverError("Helmholtz factorization failed", 0.0);
    } else {
        cg_ = std::make_unique<Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper>>();
        cg_->setTolerance(1e-10);
        cg_->setMaxIterations(10 * static_cast<int>(n));
        cg_->compute(a_);
    }
}

Field HelmholtzSolver::solve(const Field& q) const {
    check_field(q, grid_);
    const int mx = grid_.nx - 2;
    const int my = grid_.ny - 2;
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(mx) * my);
    for (int j = 1; j <= my; ++j)
        for (int i = 1; i <= mx; ++i)
            rhs(static_cast<Eigen::Index>(interior_index(grid_, i, j))) = -q(static_cast<Eigen::Index>(grid_.index(i, j)));
    Eigen::VectorXd sol = direct_ ? Eigen::VectorXd(llt_.solve(rhs)) : Eigen::VectorXd(cg_->solve(rhs));

    Field psi = Field::Zero(q.size());
    for (int j = 1; j <= my; ++j)
        for (int i = 1; i <= mx; ++i)
            psi(static_cast<Eigen::Index>(grid_.index(i, j))) = sol(static_cast<Eigen::Index>(interior_index(grid_, i, j)));

    const double resid = (a_ * sol - rhs).lpNorm<Eigen::Infinity>();
    const double scale = q.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(resid) || resid > 1e-8 * scale)
        throw SolverError("Helmholtz solve did not converge", scale > 0 ? resid / scale : resid);
    return psi;
}

Field psi_from_vorticity(const Field& q, const Grid& grid, double F) { return HelmholtzSolver(grid, F).solve(q); }

// ---------------------------------------------------------------------------

Model::Model(Grid grid, Params params, SolverKind solver)
    : grid_(grid), params_(params), solver_(grid, params.F, solver) {
    if (!(params_.dt > 0.0)) throw InvalidInput("QG time step must be positive");
    if (params_.epsilon < 0.0 || params_.A < 0.0) throw InvalidInput("QG coefficients must be non-negative");
    forcing_ = forcing_field();
}

Field Model::forcing_field() const {
    Field f = Field::Zero(static_cast<Eigen::Index>(grid_.size()));
    const double two_pi = 2.0 * std::numbers::pi;
    for (int j = 1; j < grid_.ny - 1; ++j)
        for (int i = 1; i < grid_.nx - 1; ++i)
            f(static_cast<Eigen::Index>(grid_.index(i, j))) = params_.forcing * two_pi * std::sin(two_pi * j * grid_.dy());
    return f;
}

Field Model::tendency(const Field& q, const Field& psi) const {
    Field out = forcing_;
    if (params_.beta_sign != 0.0) out += params_.beta_sign * ddx(psi, grid_);
    if (params_.epsilon != 0.0) out -= params_.epsilon * jacobian_term(psi, q, grid_);
    if (params_.A != 0.0) out -= params_.A * laplacian(laplacian(laplacian(psi, grid_), grid_), grid_);
    return out;
}

Field Model::tendency(const Field& q) const { return tendency(q, psi_from_q(q)); }

Field Model::rk4_step(const Field& q) const {
    check_field(q, grid_);
    Field next = rk4(q, params_.dt, [this](const Field& s) { return tendency(s); });
    if (!next.allFinite()) throw ModelBlowUp("QG state became non-finite");
    for (int j = 0; j < grid_.ny; ++j)
        for (int i = 0; i < grid_.nx; ++i)
            if (grid_.on_boundary(i, j)) next(static_cast<Eigen::Index>(grid_.index(i, j))) = 0.0;
    return next;
}

Field Model::advance(const Field& psi, int steps) const {
    if (steps < 0) throw InvalidInput("cannot advance a negative number of steps");
    if (steps == 0) return psi;
    Field q = q_from_psi(psi);
    for (int s = 0; s < steps; ++s) q = rk4_step(q);
    return psi_from_q(q);
}

Field qg_tendency(const Field& q, const Grid& grid, const Params& params) { return Model(grid, params).tendency(q); }

Field rk4_step(const Field& q, const Grid& grid, const Params& params) { return Model(grid, params).rk4_step(q); }

// ---------------------------------------------------------------------------

std::vector<std::size_t> strided_indices(std::size_t n_var, std::size_t m_obs, std::uint64_t seed, bool random_offset) {
    if (m_obs == 0 || m_obs > n_var) throw InvalidInput("need 1 <= m_obs <= n_var");
    const std::size_t stride = n_var / m_obs;
    std::size_t offset = 0;
    if (random_offset && stride > 1) {
        Rng rng(seed);
        offset = rng.index(stride);
    }
    std::vector<std::size_t> idx(m_obs);
    for (std::size_t k = 0; k < m_obs; ++k) idx[k] = offset + k * stride;
    return idx;
}

std::shared_ptr<SelectionOperator> linear_obs_operator(const Grid& grid, std::size_t m_obs, std::uint64_t seed,
                                                       bool random_offset) {
    return std::make_shared<SelectionOperator>(strided_indices(grid.size(), m_obs, seed, random_offset), grid.size());
}

WindMagnitudeOperator::WindMagnitudeOperator(const Grid& grid, std::vector<std::size_t> indices)
    : grid_(grid), index_(std::move(indices)) {
    grid_.validate();
    if (index_.empty()) throw InvalidInput("wind operator needs at least one observation");
    // Central differences where both neighbours exist, one-sided at boundary nodes.
    auto taps = [&](int i, int j, bool along_x) {
        const int n = along_x ? grid_.nx : grid_.ny;
        const int c = along_x ? i : j;
        const double h = along_x ? grid_.dx() : grid_.dy();
        auto at = [&](int o) { return along_x ? grid_.index(o, j) : grid_.index(i, o); };
        if (c == 0) return std::array<Tap, 2>{Tap{at(1), 1.0 / h}, Tap{at(0), -1.0 / h}};
        if (c == n - 1) return std::array<Tap, 2>{Tap{at(n - 1), 1.0 / h}, Tap{at(n - 2), -1.0 / h}};
        return std::array<Tap, 2>{Tap{at(c + 1), 0.5 / h}, Tap{at(c - 1), -0.5 / h}};
    };
    for (auto k : index_) {
        if (k >= grid_.size()) throw InvalidInput("wind operator index out of range");
        const int i = grid_.col(k), j = grid_.row(k);
        stencil_.push_back({taps(i, j, true), taps(i, j, false)});
    }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> WindMagnitudeOperator::velocity(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != grid_.size()) throw InvalidInput("wind operator: state length mismatch");
    const auto m = static_cast<Eigen::Index>(index_.size());
    Eigen::VectorXd u(m), v(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& s = stencil_[static_cast<std::size_t>(k)];
        double px = 0.0, py = 0.0;
        for (const auto& t : s.dx) px += t.weight * x(static_cast<Eigen::Index>(t.index));
        for (const auto& t : s.dy) py += t.weight * x(static_cast<Eigen::Index>(t.index));
        u(k) = py;
        v(k) = -px;
    }
    return {u, v};
}

Eigen::VectorXd WindMagnitudeOperator::apply(const Eigen::VectorXd& x) const {
    const auto [u, v] = velocity(x);
    return (u.array().square() + v.array().square() + kEta * kEta).sqrt();
}

Eigen::VectorXd WindMagnitudeOperator::adjoint_apply(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
    if (static_cast<std::size_t>(w.size()) != index_.size()) throw InvalidInput("wind operator adjoint: length mismatch");
    const auto [u, v] = velocity(x);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        const double mag = std::sqrt(u(k) * u(k) + v(k) * v(k) + kEta * kEta);
        const double cu = w(k) * u(k) / mag;   // d|w|/du
        const double cv = -w(k) * v(k) / mag;  // d|w|/d(psi_x) since v = -psi_x
        const auto& s = stencil_[static_cast<std::size_t>(k)];
        for (const auto& t : s.dy) out(static_cast<Eigen::Index>(t.index)) += cu * t.weight;
        for (const auto& t : s.dx) out(static_cast<Eigen::Index>(t.index)) += cv * t.weight;
    }
    return out;
}

std::shared_ptr<WindMagnitudeOperator> wind_magnitude_operator(const Grid& grid, std::size_t m_obs, std::uint64_t seed,
                                                               bool random_offset) {
    return std::make_shared<WindMagnitudeOperator>(grid, strided_indices(grid.size(), m_obs, seed, random_offset));
}

IndexDistance grid_distance(const Grid& grid) {
    return [grid](std::size_t a, std::size_t b) {
        const double di = grid.col(a) - grid.col(b);
        const double dj = grid.row(a) - grid.row(b);
        return std::sqrt(di * di + dj * dj);
    };
}

// ---------------------------------------------------------------------------

void write_field_csv(std::ostream& out, const Field& f, const Grid& g) {
    check_field(f, g);
    out << std::setprecision(17);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            if (i) out << ',';
            out << f(static_cast<Eigen::Index>(g.index(i, j)));
        }
        out << '\n';
    }
}

namespace {

constexpr char kMagic[4] = {'Q', 'G', '1', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof v);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_le(std::istream& in, int bytes) {
    unsigned char b[8] = {};
    if (!in.read(reinterpret_cast<char*>(b), bytes)) throw InvalidInput("QG1: truncated stream");
    std::uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    return v;
}

}  // namespace

void write_qg1(std::ostream& out, const Field& f, const Grid& g) {
    check_field(f, g);
    out.write(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(g.nx));
    put_u32(out, static_cast<std::uint32_t>(g.ny));
    for (Eigen::Index k = 0; k < f.size(); ++k) put_f64(out, f(k));
}

void write_qg1(const std::string& path, const Field& f, const Grid& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_qg1(out, f, g);
}

std::pair<Grid, Field> read_qg1(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw InvalidInput("QG1: bad magic");
    Grid g;
    g.nx = static_cast<int>(get_le(in, 4));
    g.ny = static_cast<int>(get_le(in, 4));
    g.validate();
    Field f(static_cast<Eigen::Index>(g.size()));
    for (Eigen::Index k = 0; k < f.size(); ++k) {
        const std::uint64_t v = get_le(in, 8);
        double d;
        std::memcpy(&d, &v, sizeof d);
        f(k) = d;
    }
    return {g, f};
}

std::pair<Grid, Field> read_qg1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path);
    return read_qg1(in);
}

}  // namespace hmcda::qg
