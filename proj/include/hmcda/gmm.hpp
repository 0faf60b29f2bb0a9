#pragma once

#include "hmcda/ensemble.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hmcda {

/// Gaussian mixture parameters. Log-determinants (and Cholesky factors for
/// full covariances) are computed once at construction.
class GmmParams {
public:
    GmmParams(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
              std::vector<CovarianceEstimate> covariances);

    std::size_t n_components() const { return static_cast<std::size_t>(weights_.size()); }
    std::size_t dim() const { return static_cast<std::size_t>(means_.front().size()); }
    bool diagonal() const { return diagonal_; }

    const Eigen::VectorXd& weights() const { return weights_; }
    double weight(std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }
    const std::vector<Eigen::VectorXd>& means() const { return means_; }
    const Eigen::VectorXd& mean(std::size_t i) const { return means_[i]; }
    const CovarianceEstimate& covariance(std::size_t i) const { return covariances_[i]; }
    const std::vector<CovarianceEstimate>& covariances() const { return covariances_; }
    double log_det(std::size_t i) const { return log_dets_[i]; }

    /// ||x - mu_i||^2 in the Sigma_i^{-1} norm.
    double mahalanobis_sq(const Eigen::VectorXd& x, std::size_t i) const;
    /// Sigma_i^{-1} v.
    Eigen::VectorXd precision_times(std::size_t i, const Eigen::VectorXd& v) const;
    /// log N(x; mu_i, Sigma_i).
    double log_component_density(const Eigen::VectorXd& x, std::size_t i) const;
    /// Lower Cholesky factor of Sigma_i applied to z (sqrt of variances for diagonal).
    Eigen::VectorXd scale_by_sqrt_cov(std::size_t i, const Eigen::VectorXd& z) const;

private:
    Eigen::VectorXd weights_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<CovarianceEstimate> covariances_;
    std::vector<double> log_dets_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_;
    bool diagonal_ = true;
};

/// r(e, i) membership probabilities and effective counts w_i.
struct Responsibilities {
    Eigen::MatrixXd r;  // n_ens x n_c
    Eigen::VectorXd w;  // column sums

    /// argmax_i r(e, i) for every member.
    std::vector<std::size_t> hard_labels() const;
    std::vector<std::size_t> hard_counts() const;
};

double gmm_log_pdf(const Eigen::VectorXd& x, const GmmParams& params);

/// Observed-data log-likelihood sum_e log sum_i tau_i N(x_e; Theta_i).
double gmm_log_likelihood(const Ensemble& data, const GmmParams& params);

Responsibilities e_step(const Ensemble& data, const GmmParams& params);

/// Throws DegenerateComponent when some w_i == 0. No variance floor applied.
GmmParams m_step(const Ensemble& data, const Responsibilities& resp, bool diagonal_only);

struct EmOptions {
    int max_iter = 200;
    double rel_tol = 1e-6;
    bool diagonal_only = true;
    /// Absolute variance floor; a negative value selects 1e-8 x per-coordinate data variance.
    double var_floor = -1.0;
    int restarts = 3;
};

struct EmResult {
    GmmParams params;
    Responsibilities resp;
    double log_likelihood;
    std::vector<double> ll_history;  // initial parameters first
    int iterations;
};

EmResult em_fit(const Ensemble& data, std::size_t n_components, std::uint64_t seed,
                const EmOptions& options = {});

/// Per-coordinate floor used when EmOptions::var_floor is negative.
Eigen::VectorXd default_variance_floor(const Ensemble& data);

enum class Criterion { aic, bic };
Criterion parse_criterion(const std::string& name);
std::string to_string(Criterion c);

/// Free-parameter count for an n_c component mixture in dimension d.
double free_parameter_count(std::size_t n_components, std::size_t dim, bool diagonal);

double criterion_value(const GmmParams& params, const Ensemble& data, Criterion kind);

struct ModelSelectionReport {
    std::vector<std::size_t> candidates;
    std::vector<double> criterion_values;  // NaN where the candidate failed to fit
    std::vector<bool> admissible;          // passed the membership lower bound
    std::size_t selected_n_c = 1;
    std::vector<std::optional<EmResult>> fits;

    const EmResult& selected() const;
};

ModelSelectionReport select_model(const Ensemble& data, const std::vector<std::size_t>& candidates,
                                  Criterion criterion, std::size_t min_members, std::uint64_t seed,
                                  const EmOptions& options = {});

struct JointMoments {
    StateVector mean;
    CovarianceEstimate covariance;
};

/// Mixture mean and covariance (within plus between component spread).
/// With diagonal_only only the diagonal of the covariance is formed.
JointMoments gmm_joint_moments(const GmmParams& params, bool diagonal_only = false);

Ensemble sample_gmm(const GmmParams& params, std::size_t n, std::uint64_t seed);

// JSON: {"weights":[...],"means":[[...]],"variances":[[...]],"diagonal":true}
// Full covariances use "covariances":[[[...]]] with "diagonal":false.
nlohmann::json to_json(const GmmParams& params);
GmmParams gmm_from_json(const nlohmann::json& j);

}  // namespace hmcda
