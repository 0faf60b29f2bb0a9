#include "hmcda/diagnostics.hpp"

#include "hmcda/error.hpp"
#include "hmcda/log.hpp"
#include "hmcda/rng.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace hmcda {

double rmse(const Eigen::VectorXd& x, const Eigen::VectorXd& truth) {
    if (x.size() != truth.size() || x.size() == 0) throw InvalidInput("rmse: length mismatch");
    return std::sqrt((x - truth).squaredNorm() / static_cast<double>(x.size()));
}

std::vector<std::size_t> rank_of_truth(const Ensemble& ens, const StateVector& truth, std::size_t stride,
                                       std::uint64_t seed) {
    if (stride == 0) throw InvalidInput("rank stride must be >= 1");
    if (static_cast<std::size_t>(truth.size()) != ens.dim()) throw InvalidInput("rank_of_truth: length mismatch");
    Rng rng(seed);
    std::vector<std::size_t> ranks;
    for (std::size_t k = 0; k < ens.dim(); k += stride) {
        const double t = truth(static_cast<Eigen::Index>(k));
        std::size_t r = 0;
        for (std::size_t e = 0; e < ens.size(); ++e) {
            const double v = ens.members(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(e));
            if (v < t) ++r;
            else if (v == t && rng.uniform() < 0.5) ++r;
        }
        ranks.push_back(r);
    }
    return ranks;
}

std::size_t RankHistogram::total() const { return std::accumulate(bins.begin(), bins.end(), std::size_t{0}); }

RankHistogram accumulate_rank_histogram(const std::vector<std::vector<std::size_t>>& ranks, std::size_t n_ens,
                                        std::size_t stride) {
    RankHistogram h;
    h.bins.assign(n_ens + 1, 0);
    h.stride = stride;
    h.cycles = ranks.size();
    for (const auto& cycle : ranks) {
        for (auto r : cycle) {
            if (r > n_ens) throw InvalidInput("rank outside [0, n_ens]");
            ++h.bins[r];
        }
    }
    return h;
}

double rank_uniformity_pvalue(const RankHistogram& hist) {
    const std::size_t k = hist.bins.size();
    const double n = static_cast<double>(hist.total());
    if (k < 2 || n == 0.0) throw InvalidInput("rank histogram is empty");
    const double expected = n / static_cast<double>(k);
    double stat = 0.0;
    for (auto b : hist.bins) stat += (static_cast<double>(b) - expected) * (static_cast<double>(b) - expected) / expected;
    boost::math::chi_squared_distribution<double> dist(static_cast<double>(k - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

QqData chi_square_qq(const Ensemble& ens, double radius, const IndexDistance& distance, std::size_t dense_limit) {
    validate(ens, 2);
    const std::size_t n = ens.size();
    const std::size_t d = ens.dim();
    const Eigen::MatrixXd a = anomalies(ens);
    QqData qq;
    std::vector<double> dist(n);

    auto diagonal_distances = [&] {
        const Eigen::VectorXd var = ensemble_covariance(ens, true).diagonal();
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        for (Eigen::Index k = 0; k < inv.size(); ++k)
            if (var(k) > 0.0) inv(k) = 1.0 / var(k);
        for (std::size_t e = 0; e < n; ++e)
            dist[e] = (a.col(static_cast<Eigen::Index>(e)).array().square() * inv.array()).sum();
        qq.covariance = "diagonal";
    };

    bool dense = false;
    if (d < n || (distance && radius > 0.0 && d <= dense_limit)) {
        CovarianceEstimate cov = ensemble_covariance(ens, false);
        const bool localized = d >= n;
        if (localized) cov = apply_localization(cov, distance, radius);
        Eigen::LLT<Eigen::MatrixXd> llt(cov.matrix());
        if (llt.info() == Eigen::Success) {
            const Eigen::MatrixXd z = llt.matrixL().solve(a);
            for (std::size_t e = 0; e < n; ++e) dist[e] = z.col(static_cast<Eigen::Index>(e)).squaredNorm();
            qq.covariance = localized ? "localized" : "full";
            dense = true;
        } else {
            log_warning("chi_square_qq: covariance not positive definite, using its diagonal");
        }
    }
    if (!dense) diagonal_distances();
    qq.d_eff = d < n ? static_cast<double>(d) : static_cast<double>(n - 1);

    std::sort(dist.begin(), dist.end());
    qq.distances = dist;
    boost::math::chi_squared_distribution<double> chi(qq.d_eff);
    qq.quantiles.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        qq.quantiles[i] = boost::math::quantile(chi, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    return qq;
}

nlohmann::json to_json(const RankHistogram& hist) {
    return {{"bins", hist.bins}, {"stride", hist.stride}, {"cycles", hist.cycles}};
}

nlohmann::json to_json(const QqData& qq) {
    return {{"distances", qq.distances}, {"quantiles", qq.quantiles}, {"d_eff", qq.d_eff}, {"covariance", qq.covariance}};
}

void write_metrics_csv(std::ostream& out, const std::vector<CycleMetrics>& rows) {
    out << "cycle,rmse_forecast,rmse_analysis,acceptance_rate\n" << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.cycle << ',' << r.rmse_forecast << ',' << r.rmse_analysis << ',';
        if (r.acceptance_rate) out << *r.acceptance_rate;
        out << '\n';
    }
}

}  // namespace hmcda
