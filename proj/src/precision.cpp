#include "hmcda/precision.hpp"

#include "hmcda/error.hpp"
#include "hmcda/gmm.hpp"

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace hmcda {

Eigen::VectorXd LocalPrecision::whiten(const Eigen::VectorXd& x) const {
    return (L * (x - mean)).cwiseQuotient(sqrt_d);
}

Eigen::VectorXd LocalPrecision::color(const Eigen::VectorXd& u) const {
    Eigen::VectorXd v = u.cwiseProduct(sqrt_d);
    L.triangularView<Eigen::UnitLower>().solveInPlace(v);
    return mean + v;
}

Eigen::VectorXd LocalPrecision::color_adjoint(const Eigen::VectorXd& g) const {
    Eigen::VectorXd v = g;
    L.transpose().triangularView<Eigen::UnitUpper>().solveInPlace(v);
    return v.cwiseProduct(sqrt_d);
}

Eigen::VectorXd LocalPrecision::precision_times(const Eigen::VectorXd& v) const {
    const Eigen::VectorXd w = (L * v).cwiseQuotient(sqrt_d.cwiseAbs2());
    return L.transpose() * w;
}

Ensemble LocalPrecision::whiten(const Ensemble& ens) const {
    Ensemble out(Eigen::MatrixXd(ens.members.rows(), ens.members.cols()), ens.time_index);
    for (std::size_t e = 0; e < ens.size(); ++e) out.member(e) = whiten(Eigen::VectorXd(ens.member(e)));
    return out;
}

Ensemble LocalPrecision::color(const Ensemble& ens) const {
    Ensemble out(Eigen::MatrixXd(ens.members.rows(), ens.members.cols()), ens.time_index);
    for (std::size_t e = 0; e < ens.size(); ++e) out.member(e) = color(Eigen::VectorXd(ens.member(e)));
    return out;
}

LocalPrecision estimate_local_precision(const Ensemble& ens, const IndexDistance& distance,
                                        const LocalPrecisionOptions& options) {
    validate(ens, 3);
    if (options.radius < 0.0 || options.ridge < 0.0 || options.min_residual <= 0.0 || options.min_residual > 1.0)
        throw InvalidInput("estimate_local_precision: invalid options");
    const auto n = static_cast<Eigen::Index>(ens.dim());
    const double dof = static_cast<double>(ens.size() - 1);
    const Eigen::VectorXd floor = default_variance_floor(ens);

    Eigen::MatrixXd z = anomalies(ens);
    Eigen::VectorXd sd(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        sd(k) = std::sqrt(z.row(k).squaredNorm() / dof);
        if (sd(k) > 0.0) z.row(k) /= sd(k);
    }
    const std::size_t max_pred = ens.size() - 2;

    LocalPrecision out;
    out.mean = ensemble_mean(ens);
    out.sqrt_d.resize(n);
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<std::pair<double, Eigen::Index>> cand;
    for (Eigen::Index i = 0; i < n; ++i) {
        trip.emplace_back(i, i, 1.0);
        if (sd(i) == 0.0) {
            out.sqrt_d(i) = std::sqrt(floor(i));
            continue;
        }
        cand.clear();
        for (Eigen::Index j = 0; j < i; ++j) {
            if (sd(j) == 0.0) continue;
            const double d = distance(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            if (d <= options.radius) cand.emplace_back(d, j);
        }
        if (cand.size() > max_pred) {
            std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            cand.resize(max_pred);
        }
        double resid = 1.0;
        if (!cand.empty()) {
            const auto p = static_cast<Eigen::Index>(cand.size());
            Eigen::MatrixXd zp(p, z.cols());
            for (Eigen::Index r = 0; r < p; ++r) zp.row(r) = z.row(cand[static_cast<std::size_t>(r)].second);
            Eigen::MatrixXd g = zp * zp.transpose() / dof;
            g.diagonal().array() += options.ridge;
            const Eigen::VectorXd c = zp * z.row(i).transpose() / dof;
            const Eigen::VectorXd beta = g.ldlt().solve(c);
            resid = (z.row(i) - beta.transpose() * zp).squaredNorm() / dof;
            for (Eigen::Index r = 0; r < p; ++r) {
                const Eigen::Index j = cand[static_cast<std::size_t>(r)].second;
                trip.emplace_back(i, j, -beta(r) * sd(i) / sd(j));
            }
        }
        resid = std::clamp(resid, options.min_residual, 1.0);
        out.sqrt_d(i) = std::sqrt(std::max(resid * sd(i) * sd(i), floor(i)));
    }
    out.L.resize(n, n);
    out.L.setFromTriplets(trip.begin(), trip.end());
    return out;
}

WhitenedOperator::WhitenedOperator(std::shared_ptr<const ObservationOperator> op,
                                   std::shared_ptr<const LocalPrecision> transform)
    : op_(std::move(op)), t_(std::move(transform)) {
    if (!op_ || !t_) throw InvalidInput("WhitenedOperator: null argument");
    if (t_->dim() != op_->state_dim()) throw InvalidInput("WhitenedOperator: dimension mismatch");
}

}  // namespace hmcda
