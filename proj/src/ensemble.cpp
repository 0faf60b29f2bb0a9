#include "hmcda/ensemble.hpp"

#include "hmcda/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace hmcda {

void validate(const Ensemble& ens, std::size_t min_members) {
    if (ens.size() < min_members)
        throw InvalidInput("ensemble has " + std::to_string(ens.size()) + " members, need at least " +
                           std::to_string(min_members));
    if (ens.dim() == 0) throw InvalidInput("ensemble members have zero length");
    if (!ens.members.allFinite()) throw InvalidInput("ensemble contains non-finite entries");
}

void validate(const Observation& obs) {
    if (obs.values.size() == 0) throw InvalidInput("observation vector is empty");
    if (obs.error_variances.size() != obs.values.size())
        throw InvalidInput("observation error variances do not match observation length");
    if ((obs.error_variances.array() <= 0.0).any())
        throw InvalidInput("observation error variances must be positive");
    if (!obs.values.allFinite()) throw InvalidInput("observation contains non-finite values");
}

CovarianceEstimate CovarianceEstimate::from_full(Eigen::MatrixXd m) {
    if (m.rows() != m.cols()) throw InvalidInput("covariance matrix must be square");
    CovarianceEstimate c;
    c.kind_ = Kind::full;
    c.full_ = std::move(m);
    return c;
}

CovarianceEstimate CovarianceEstimate::from_diagonal(Eigen::VectorXd d) {
    if ((d.array() < 0.0).any()) throw InvalidInput("diagonal covariance has negative entries");
    CovarianceEstimate c;
    c.kind_ = Kind::diagonal;
    c.diag_ = std::move(d);
    return c;
}

std::size_t CovarianceEstimate::dim() const {
    return static_cast<std::size_t>(is_diagonal() ? diag_.size() : full_.rows());
}

const Eigen::MatrixXd& CovarianceEstimate::matrix() const {
    if (is_diagonal()) throw InvalidInput("covariance is diagonal; no dense matrix stored");
    return full_;
}

const Eigen::VectorXd& CovarianceEstimate::diagonal() const {
    if (!is_diagonal()) throw InvalidInput("covariance is full; use variances()");
    return diag_;
}

Eigen::VectorXd CovarianceEstimate::variances() const {
    return is_diagonal() ? diag_ : Eigen::VectorXd(full_.diagonal());
}

Eigen::MatrixXd CovarianceEstimate::dense() const {
    return is_diagonal() ? Eigen::MatrixXd(diag_.asDiagonal()) : full_;
}

StateVector ensemble_mean(const Ensemble& ens) {
    if (ens.size() == 0) throw InvalidInput("ensemble_mean of an empty ensemble");
    return ens.members.rowwise().mean();
}

Eigen::MatrixXd anomalies(const Ensemble& ens) {
    return ens.members.colwise() - ensemble_mean(ens);
}

CovarianceEstimate ensemble_covariance(const Ensemble& ens, bool diagonal_only) {
    if (ens.size() < 2) throw InvalidInput("ensemble_covariance needs at least 2 members");
    const Eigen::MatrixXd a = anomalies(ens);
    const double denom = static_cast<double>(ens.size() - 1);
    if (diagonal_only) return CovarianceEstimate::from_diagonal(a.rowwise().squaredNorm() / denom);
    Eigen::MatrixXd c = (a * a.transpose()) / denom;
    return CovarianceEstimate::from_full(std::move(c));
}

double weighted_norm_sq(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                        const CovarianceEstimate& weight) {
    if (a.size() != b.size() || static_cast<std::size_t>(a.size()) != weight.dim())
        throw InvalidInput("weighted_norm_sq: dimension mismatch");
    const Eigen::VectorXd d = a - b;
    if (weight.is_diagonal()) return (d.array().square() * weight.diagonal().array()).sum();
    return d.dot(weight.matrix() * d);
}

double gaspari_cohn(double distance, double radius) {
    if (!(distance >= 0.0)) throw InvalidInput("gaspari_cohn: negative distance");
    if (!(radius > 0.0)) throw InvalidInput("gaspari_cohn: radius must be positive");
    const double z = distance / radius;
    if (z >= 2.0) return 0.0;
    if (z <= 1.0) {
        return (((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0;
    }
    return ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z);
}

CovarianceEstimate apply_localization(const CovarianceEstimate& cov, const IndexDistance& distance,
                                      double radius) {
    if (cov.is_diagonal()) return cov;
    Eigen::MatrixXd m = cov.matrix();
    const auto n = static_cast<std::size_t>(m.rows());
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = j + 1; i < n; ++i) {
            const double w = gaspari_cohn(distance(i, j), radius);
            m(i, j) *= w;
            m(j, i) = m(i, j);
        }
        m(j, j) *= gaspari_cohn(distance(j, j), radius);
    }
    return CovarianceEstimate::from_full(std::move(m));
}

Ensemble inflate(const Ensemble& ens, double delta) {
    if (!(delta >= 1.0)) throw InvalidInput("inflation factor must be >= 1");
    validate(ens);
    const StateVector mean = ensemble_mean(ens);
    Eigen::MatrixXd m = (delta * (ens.members.colwise() - mean)).colwise() + mean;
    return Ensemble(std::move(m), ens.time_index);
}

void write_ensemble_csv(std::ostream& out, const Ensemble& ens) {
    out << "member_id";
    for (std::size_t j = 0; j < ens.dim(); ++j) out << ",x_" << j;
    out << '\n' << std::setprecision(17);
    for (std::size_t e = 0; e < ens.size(); ++e) {
        out << e;
        for (std::size_t j = 0; j < ens.dim(); ++j) out << ',' << ens.members(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(e));
        out << '\n';
    }
}

void write_ensemble_csv(const std::string& path, const Ensemble& ens) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_ensemble_csv(out, ens);
}

Ensemble read_ensemble_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InvalidInput("ensemble CSV is empty");
    const auto n_var = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (line.rfind("member_id", 0) != 0 || n_var == 0)
        throw InvalidInput("ensemble CSV header must start with member_id,x_0");
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // member_id
        std::size_t count = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw InvalidInput("ensemble CSV: bad number '" + cell + "'");
            }
            ++count;
        }
        if (count != n_var) throw InvalidInput("ensemble CSV: row " + std::to_string(rows) + " has wrong length");
        ++rows;
    }
    Eigen::MatrixXd m(n_var, rows);
    for (std::size_t e = 0; e < rows; ++e)
        for (std::size_t j = 0; j < n_var; ++j)
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(e)) = values[e * n_var + j];
    return Ensemble(std::move(m));
}

Ensemble read_ensemble_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    return read_ensemble_csv(in);
}

}  // namespace hmcda
