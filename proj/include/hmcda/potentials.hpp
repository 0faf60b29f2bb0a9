#pragma once

#include "hmcda/ensemble.hpp"
#include "hmcda/gmm.hpp"
#include "hmcda/potential_function.hpp"

#include <memory>
#include <span>
#include <vector>

namespace hmcda {

/// Maps a state to observation space; `adjoint_apply(x, v)` is H^T v with H
/// the Jacobian at x.
class ObservationOperator {
public:
    virtual ~ObservationOperator() = default;

    virtual std::size_t state_dim() const = 0;
    virtual std::size_t obs_dim() const = 0;
    virtual bool is_linear() const = 0;
    virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const = 0;

    /// State index each observation sits at (used for localization); empty if undefined.
    virtual std::span<const std::size_t> anchors() const { return {}; }
};

class IdentityOperator final : public ObservationOperator {
public:
    explicit IdentityOperator(std::size_t n);

    std::size_t state_dim() const override { return index_.size(); }
    std::size_t obs_dim() const override { return index_.size(); }
    bool is_linear() const override { return true; }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return x; }
    Eigen::VectorXd adjoint_apply(const Eigen::VectorXd&, const Eigen::VectorXd& v) const override { return v; }
    std::span<const std::size_t> anchors() const override { return index_; }

private:
    std::vector<std::size_t> index_;
};

/// Gathers a subset of state entries; the adjoint scatters.
class SelectionOperator final : public ObservationOperator {
public:
    SelectionOperator(std::vector<std::size_t> indices, std::size_t state_dim);

    std::size_t state_dim() const override { return n_; }
    std::size_t obs_dim() const override { return index_.size(); }
    bool is_linear() const override { return true; }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const override;
    std::span<const std::size_t> anchors() const override { return index_; }
    const std::vector<std::size_t>& indices() const { return index_; }

private:
    std::vector<std::size_t> index_;
    std::size_t n_;
};

/// Dense linear map y = H x.
class MatrixOperator final : public ObservationOperator {
public:
    explicit MatrixOperator(Eigen::MatrixXd h) : h_(std::move(h)) {}

    std::size_t state_dim() const override { return static_cast<std::size_t>(h_.cols()); }
    std::size_t obs_dim() const override { return static_cast<std::size_t>(h_.rows()); }
    bool is_linear() const override { return true; }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return h_ * x; }
    Eigen::VectorXd adjoint_apply(const Eigen::VectorXd&, const Eigen::VectorXd& v) const override {
        return h_.transpose() * v;
    }
    const Eigen::MatrixXd& matrix() const { return h_; }

private:
    Eigen::MatrixXd h_;
};

/// 1/2 ||y - H(x)||^2 in the R^{-1} norm (R diagonal).
double obs_misfit(const Eigen::VectorXd& x, const Observation& y, const ObservationOperator& op);
/// H^T R^{-1} (H(x) - y).
Eigen::VectorXd obs_misfit_gradient(const Eigen::VectorXd& x, const Observation& y, const ObservationOperator& op);

struct GaussianPriorSpec {
    StateVector background;
    CovarianceEstimate covariance;
};

/// J(x) = 1/2 ||x - xb||^2_{B^-1} + 1/2 ||y - H(x)||^2_{R^-1}.
class GaussianPotential final : public PotentialFunction {
public:
    /// Throws InvalidInput if B is singular.
    GaussianPotential(GaussianPriorSpec prior, Observation y, std::shared_ptr<const ObservationOperator> op);

    std::size_t dim() const override { return static_cast<std::size_t>(prior_.background.size()); }
    double value(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override;

    double prior_term(const Eigen::VectorXd& x) const;
    const GaussianPriorSpec& prior() const { return prior_; }

private:
    Eigen::VectorXd precision_times(const Eigen::VectorXd& v) const;

    GaussianPriorSpec prior_;
    Observation y_;
    std::shared_ptr<const ObservationOperator> op_;
    Eigen::VectorXd inv_diag_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// GMM prior with cached log(tau_i / sqrt|Sigma_i|).
class MixturePriorSpec {
public:
    explicit MixturePriorSpec(GmmParams gmm);

    const GmmParams& gmm() const { return gmm_; }
    std::size_t n_components() const { return gmm_.n_components(); }
    double log_coefficient(std::size_t i) const { return log_coef_[i]; }

private:
    GmmParams gmm_;
    std::vector<double> log_coef_;
};

struct ValueGradient {
    double value;
    Eigen::VectorXd gradient;
};

/// J_i(x) = 1/2 ||x - mu_i||^2_{Sigma_i^-1} and Sigma_i^{-1}(x - mu_i).
ValueGradient component_quadratic(const Eigen::VectorXd& x, std::size_t i, const MixturePriorSpec& spec);

/// Mixture-prior potential evaluated relative to the leading term at x:
/// J = misfit + J_(1) - log(tau_(1)/sqrt|Sigma_(1)|) - log(1 + sum c_i), with
/// c_i = exp(a_i - a_(1)) and a_i = log tau_i - 1/2 log|Sigma_i| - J_i(x).
double mixture_potential(const Eigen::VectorXd& x, const MixturePriorSpec& spec, const Observation& y,
                         const ObservationOperator& op);
Eigen::VectorXd mixture_potential_gradient(const Eigen::VectorXd& x, const MixturePriorSpec& spec,
                                           const Observation& y, const ObservationOperator& op);
ValueGradient mixture_potential_value_gradient(const Eigen::VectorXd& x, const MixturePriorSpec& spec,
                                               const Observation& y, const ObservationOperator& op);

class MixturePotential final : public PotentialFunction {
public:
    MixturePotential(MixturePriorSpec prior, Observation y, std::shared_ptr<const ObservationOperator> op);

    std::size_t dim() const override { return prior_.gmm().dim(); }
    double value(const Eigen::VectorXd& x) const override { return mixture_potential(x, prior_, y_, *op_); }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override {
        return mixture_potential_gradient(x, prior_, y_, *op_);
    }
    const MixturePriorSpec& prior() const { return prior_; }

private:
    MixturePriorSpec prior_;
    Observation y_;
    std::shared_ptr<const ObservationOperator> op_;
};

}  // namespace hmcda
