#pragma once

#include "hmcda/ensemble.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hmcda {

/// sqrt(mean((x - truth)^2)).
double rmse(const Eigen::VectorXd& x, const Eigen::VectorXd& truth);

/// For every stride-th variable: number of members strictly below the truth,
/// plus each tied member counted below with probability 1/2.
std::vector<std::size_t> rank_of_truth(const Ensemble& ens, const StateVector& truth, std::size_t stride,
                                       std::uint64_t seed);

struct RankHistogram {
    std::vector<std::size_t> bins;  // n_ens + 1 entries
    std::size_t stride = 1;
    std::size_t cycles = 0;

    std::size_t total() const;
};

/// Bins per-cycle rank lists; ranks must lie in [0, n_ens].
RankHistogram accumulate_rank_histogram(const std::vector<std::vector<std::size_t>>& ranks, std::size_t n_ens,
                                        std::size_t stride = 1);

/// Pearson chi-square goodness-of-fit p-value against a flat histogram.
double rank_uniformity_pvalue(const RankHistogram& hist);

struct QqData {
    std::vector<double> distances;  // sorted squared Mahalanobis distances
    std::vector<double> quantiles;  // chi-square(d_eff) quantiles at (i - 1/2)/n
    double d_eff = 0.0;
    std::string covariance;  // "full", "localized" or "diagonal"
};

/// Squared Mahalanobis distance of each member from the ensemble mean.
/// Uses the sample covariance when n_var < n_ens; otherwise the localized
/// covariance (when `distance` is given and n_var <= dense_limit) or its
/// diagonal, with d_eff = n_ens - 1.
QqData chi_square_qq(const Ensemble& ens, double radius, const IndexDistance& distance = {},
                     std::size_t dense_limit = 2000);

nlohmann::json to_json(const RankHistogram& hist);
nlohmann::json to_json(const QqData& qq);

struct CycleMetrics {
    int cycle = 0;
    double rmse_forecast = 0.0;
    double rmse_analysis = 0.0;
    std::optional<double> acceptance_rate;  // empty for filters without chains
};

/// `cycle,rmse_forecast,rmse_analysis,acceptance_rate`; a missing rate is written empty.
void write_metrics_csv(std::ostream& out, const std::vector<CycleMetrics>& rows);

}  // namespace hmcda
