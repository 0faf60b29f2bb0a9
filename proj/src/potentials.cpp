#include "hmcda/potentials.hpp"

#include "hmcda/error.hpp"

#include <cmath>
#include <numeric>

namespace hmcda {

namespace {

void check_obs(const Eigen::VectorXd& x, const Observation& y, const ObservationOperator& op) {
    if (static_cast<std::size_t>(x.size()) != op.state_dim())
        throw InvalidInput("state length does not match observation operator");
    if (y.size() != op.obs_dim()) throw InvalidInput("observation length does not match observation operator");
}

// a_i = log tau_i - 1/2 log|Sigma_i| - J_i(x) for every component.
Eigen::VectorXd log_terms(const Eigen::VectorXd& x, const MixturePriorSpec& spec) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(spec.n_components()));
    for (std::size_t i = 0; i < spec.n_components(); ++i)
        a(static_cast<Eigen::Index>(i)) = spec.log_coefficient(i) - 0.5 * spec.gmm().mahalanobis_sq(x, i);
    return a;
}

}  // namespace

IdentityOperator::IdentityOperator(std::size_t n) : index_(n) {
    std::iota(index_.begin(), index_.end(), std::size_t{0});
}

SelectionOperator::SelectionOperator(std::vector<std::size_t> indices, std::size_t state_dim)
    : index_(std::move(indices)), n_(state_dim) {
    if (index_.empty()) throw InvalidInput("selection operator needs at least one index");
    for (auto i : index_)
        if (i >= n_) throw InvalidInput("selection index out of range");
}

Eigen::VectorXd SelectionOperator::apply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(index_.size()));
    for (std::size_t k = 0; k < index_.size(); ++k) out(static_cast<Eigen::Index>(k)) = x(static_cast<Eigen::Index>(index_[k]));
    return out;
}

Eigen::VectorXd SelectionOperator::adjoint_apply(const Eigen::VectorXd&, const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    for (std::size_t k = 0; k < index_.size(); ++k) out(static_cast<Eigen::Index>(index_[k])) += v(static_cast<Eigen::Index>(k));
    return out;
}

double obs_misfit(const Eigen::VectorXd& x, const Observation& y, const ObservationOperator& op) {
    check_obs(x, y, op);
    const Eigen::VectorXd d = y.values - op.apply(x);
    return 0.5 * (d.array().square() / y.error_variances.array()).sum();
}

Eigen::VectorXd obs_misfit_gradient(const Eigen::VectorXd& x, const Observation& y, const ObservationOperator& op) {
    check_obs(x, y, op);
    const Eigen::VectorXd w = (op.apply(x) - y.values).cwiseQuotient(y.error_variances);
    return op.adjoint_apply(x, w);
}

// ---------------------------------------------------------------------------

GaussianPotential::GaussianPotential(GaussianPriorSpec prior, Observation y,
                                     std::shared_ptr<const ObservationOperator> op)
    : prior_(std::move(prior)), y_(std::move(y)), op_(std::move(op)) {
    validate(y_);
    if (!op_) throw InvalidInput("GaussianPotential: null observation operator");
    const auto n = static_cast<std::size_t>(prior_.background.size());
    if (prior_.covariance.dim() != n || op_->state_dim() != n || op_->obs_dim() != y_.size())
        throw InvalidInput("GaussianPotential: dimension mismatch");
    if (prior_.covariance.is_diagonal()) {
        const auto& d = prior_.covariance.diagonal();
        if ((d.array() <= 0.0).any()) throw InvalidInput("GaussianPotential: singular diagonal background covariance");
        inv_diag_ = d.cwiseInverse();
    } else {
        llt_.compute(prior_.covariance.matrix());
        if (llt_.info() != Eigen::Success) throw InvalidInput("GaussianPotential: background covariance is not positive definite");
    }
}

Eigen::VectorXd GaussianPotential::precision_times(const Eigen::VectorXd& v) const {
    return prior_.covariance.is_diagonal() ? Eigen::VectorXd(v.cwiseProduct(inv_diag_)) : Eigen::VectorXd(llt_.solve(v));
}

double GaussianPotential::prior_term(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd d = x - prior_.background;
    if (prior_.covariance.is_diagonal()) return 0.5 * (d.array().square() * inv_diag_.array()).sum();
    return 0.5 * llt_.matrixL().solve(d).squaredNorm();
}

double GaussianPotential::value(const Eigen::VectorXd& x) const { return prior_term(x) + obs_misfit(x, y_, *op_); }

Eigen::VectorXd GaussianPotential::gradient(const Eigen::VectorXd& x) const {
    return precision_times(x - prior_.background) + obs_misfit_gradient(x, y_, *op_);
}

// ---------------------------------------------------------------------------

MixturePriorSpec::MixturePriorSpec(GmmParams gmm) : gmm_(std::move(gmm)) {
    for (std::size_t i = 0; i < gmm_.n_components(); ++i)
        log_coef_.push_back(std::log(gmm_.weight(i)) - 0.5 * gmm_.log_det(i));
}

ValueGradient component_quadratic(const Eigen::VectorXd& x, std::size_t i, const MixturePriorSpec& spec) {
    if (i >= spec.n_components()) throw InvalidInput("component index out of range");
    const Eigen::VectorXd d = x - spec.gmm().mean(i);
    return {0.5 * spec.gmm().mahalanobis_sq(x, i), spec.gmm().precision_times(i, d)};
}

double mixture_potential(const Eigen::VectorXd& x, const MixturePriorSpec& spec, const Observation& y,
                         const ObservationOperator& op) {
    const Eigen::VectorXd a = log_terms(x, spec);
    Eigen::Index lead = 0;
    const double a_lead = a.maxCoeff(&lead);
    double tail = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (i != lead) tail += std::exp(a(i) - a_lead);
    // a_lead = log(tau_(1)/sqrt|Sigma_(1)|) - J_(1)(x)
    return obs_misfit(x, y, op) - a_lead - std::log1p(tail);
}

ValueGradient mixture_potential_value_gradient(const Eigen::VectorXd& x, const MixturePriorSpec& spec,
                                               const Observation& y, const ObservationOperator& op) {
    const Eigen::VectorXd a = log_terms(x, spec);
    Eigen::Index lead = 0;
    const double a_lead = a.maxCoeff(&lead);
    const auto lead_i = static_cast<std::size_t>(lead);
    const Eigen::VectorXd g_lead = spec.gmm().precision_times(lead_i, x - spec.gmm().mean(lead_i));

    double tail = 0.0;
    Eigen::VectorXd correction = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (i == lead) continue;
        const double c = std::exp(a(i) - a_lead);
        if (c == 0.0) continue;
        tail += c;
        const auto ii = static_cast<std::size_t>(i);
        correction += c * (g_lead - spec.gmm().precision_times(ii, x - spec.gmm().mean(ii)));
    }
    ValueGradient out;
    out.value = obs_misfit(x, y, op) - a_lead - std::log1p(tail);
    out.gradient = obs_misfit_gradient(x, y, op) + g_lead - correction / (1.0 + tail);
    return out;
}

Eigen::VectorXd mixture_potential_gradient(const Eigen::VectorXd& x, const MixturePriorSpec& spec,
                                           const Observation& y, const ObservationOperator& op) {
    return mixture_potential_value_gradient(x, spec, y, op).gradient;
}

MixturePotential::MixturePotential(MixturePriorSpec prior, Observation y, std::shared_ptr<const ObservationOperator> op)
    : prior_(std::move(prior)), y_(std::move(y)), op_(std::move(op)) {
    validate(y_);
    if (!op_) throw InvalidInput("MixturePotential: null observation operator");
    if (op_->state_dim() != prior_.gmm().dim() || op_->obs_dim() != y_.size())
        throw InvalidInput("MixturePotential: dimension mismatch");
}

}  // namespace hmcda
