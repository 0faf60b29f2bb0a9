#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>

namespace hmcda {

using StateVector = Eigen::VectorXd;

/// A set of model states; member e is column e of `members`.
struct Ensemble {
    Eigen::MatrixXd members;
    int time_index = 0;

    Ensemble() = default;
    explicit Ensemble(Eigen::MatrixXd m, int t = 0) : members(std::move(m)), time_index(t) {}

    std::size_t size() const { return static_cast<std::size_t>(members.cols()); }
    std::size_t dim() const { return static_cast<std::size_t>(members.rows()); }
    auto member(std::size_t e) const { return members.col(static_cast<Eigen::Index>(e)); }
    auto member(std::size_t e) { return members.col(static_cast<Eigen::Index>(e)); }
};

/// Throws InvalidInput unless the ensemble has >= min_members members and finite entries.
void validate(const Ensemble& ens, std::size_t min_members = 1);

/// Sample covariance, either dense or reduced to its diagonal (variances).
class CovarianceEstimate {
public:
    enum class Kind { full, diagonal };

    static CovarianceEstimate from_full(Eigen::MatrixXd m);
    static CovarianceEstimate from_diagonal(Eigen::VectorXd d);

    Kind kind() const { return kind_; }
    bool is_diagonal() const { return kind_ == Kind::diagonal; }
    std::size_t dim() const;

    const Eigen::MatrixXd& matrix() const;     // full only
    const Eigen::VectorXd& diagonal() const;   // diagonal only
    Eigen::VectorXd variances() const;         // either kind
    Eigen::MatrixXd dense() const;             // either kind

private:
    CovarianceEstimate() = default;
    Kind kind_ = Kind::diagonal;
    Eigen::MatrixXd full_;
    Eigen::VectorXd diag_;
};

/// Observation vector and the diagonal of its error covariance R.
struct Observation {
    Eigen::VectorXd values;
    Eigen::VectorXd error_variances;

    std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};
void validate(const Observation& obs);

StateVector ensemble_mean(const Ensemble& ens);

/// Member-minus-mean matrix (n_var x n_ens).
Eigen::MatrixXd anomalies(const Ensemble& ens);

/// Unbiased (n_ens - 1) sample covariance.
CovarianceEstimate ensemble_covariance(const Ensemble& ens, bool diagonal_only);

/// (a-b)^T C (a-b) where `weight` holds C (already an inverse covariance).
double weighted_norm_sq(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                        const CovarianceEstimate& weight);

/// Fifth-order piecewise rational compactly supported correlation function
/// with half-width `radius`; zero beyond 2 * radius.
double gaspari_cohn(double distance, double radius);

using IndexDistance = std::function<double(std::size_t, std::size_t)>;

/// Schur (Hadamard) product of cov with gaspari_cohn(distance(i, j), radius).
/// Diagonal covariances are returned unchanged.
CovarianceEstimate apply_localization(const CovarianceEstimate& cov,
                                      const IndexDistance& distance, double radius);

/// Scales anomalies about the ensemble mean by delta >= 1.
Ensemble inflate(const Ensemble& ens, double delta);

// CSV: header `member_id,x_0,...,x_{n-1}`, one member per row.
void write_ensemble_csv(std::ostream& out, const Ensemble& ens);
void write_ensemble_csv(const std::string& path, const Ensemble& ens);
Ensemble read_ensemble_csv(std::istream& in);
Ensemble read_ensemble_csv(const std::string& path);

}  // namespace hmcda
