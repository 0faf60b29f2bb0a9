#pragma once

#include "hmcda/ensemble.hpp"
#include "hmcda/potentials.hpp"

#include <Eigen/SparseCore>

#include <memory>

namespace hmcda {

/// Sparse modified Cholesky factorization B^{-1} = L^T D^{-1} L of a forecast
/// covariance, with L unit lower triangular. Row i of L regresses coordinate i
/// on earlier coordinates within a radius. Defines the whitening map
/// u = D^{-1/2} L (x - mean) and its inverse.
struct LocalPrecision {
    StateVector mean;
    Eigen::SparseMatrix<double, Eigen::RowMajor> L;
    Eigen::VectorXd sqrt_d;

    std::size_t dim() const { return static_cast<std::size_t>(sqrt_d.size()); }
    Eigen::VectorXd whiten(const Eigen::VectorXd& x) const;
    Eigen::VectorXd color(const Eigen::VectorXd& u) const;
    /// Gradient with respect to u given the gradient g with respect to x = color(u).
    Eigen::VectorXd color_adjoint(const Eigen::VectorXd& g) const;
    /// B^{-1} v.
    Eigen::VectorXd precision_times(const Eigen::VectorXd& v) const;

    Ensemble whiten(const Ensemble& ens) const;
    Ensemble color(const Ensemble& ens) const;
};

struct LocalPrecisionOptions {
    double radius = 2.0;
    /// Added to the predictor correlation matrix.
    double ridge = 0.05;
    /// Lower bound on the residual variance as a fraction of the marginal variance.
    double min_residual = 1e-2;
};

/// Estimate from ensemble anomalies. Coordinates with zero spread are kept
/// independent with the floored variance. At most n_ens - 2 nearest
/// predecessors are used per row.
LocalPrecision estimate_local_precision(const Ensemble& ens, const IndexDistance& distance,
                                        const LocalPrecisionOptions& options = {});

/// H(color(u)) for an operator H acting on the original coordinates.
class WhitenedOperator final : public ObservationOperator {
public:
    WhitenedOperator(std::shared_ptr<const ObservationOperator> op, std::shared_ptr<const LocalPrecision> transform);

    std::size_t state_dim() const override { return op_->state_dim(); }
    std::size_t obs_dim() const override { return op_->obs_dim(); }
    bool is_linear() const override { return op_->is_linear(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& u) const override { return op_->apply(t_->color(u)); }
    Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const override {
        return t_->color_adjoint(op_->adjoint_apply(t_->color(u), v));
    }

private:
    std::shared_ptr<const ObservationOperator> op_;
    std::shared_ptr<const LocalPrecision> t_;
};

}  // namespace hmcda
