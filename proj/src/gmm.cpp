#include "hmcda/gmm.hpp"

#include "hmcda/error.hpp"
#include "hmcda/log.hpp"
#include "hmcda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace hmcda {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

// Row e, column i: log tau_i + log N(x_e; Theta_i).
Eigen::MatrixXd weighted_log_densities(const Ensemble& data, const GmmParams& params) {
    if (data.dim() != params.dim()) throw InvalidInput("GMM dimension does not match data");
    const auto n = static_cast<Eigen::Index>(data.size());
    const auto k = static_cast<Eigen::Index>(params.n_components());
    Eigen::MatrixXd out(n, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto ci = static_cast<std::size_t>(i);
        const double log_tau = std::log(params.weight(ci));
        for (Eigen::Index e = 0; e < n; ++e)
            out(e, i) = log_tau + params.log_component_density(data.members.col(e), ci);
    }
    return out;
}

Eigen::VectorXd floor_vector(const Ensemble& data, const EmOptions& opt) {
    if (opt.var_floor >= 0.0) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(data.dim()), opt.var_floor);
    return default_variance_floor(data);
}

CovarianceEstimate apply_floor(const CovarianceEstimate& c, const Eigen::VectorXd& floor) {
    if (c.is_diagonal()) return CovarianceEstimate::from_diagonal(c.diagonal().cwiseMax(floor));
    Eigen::MatrixXd m = c.matrix();
    for (Eigen::Index j = 0; j < m.rows(); ++j) m(j, j) = std::max(m(j, j), floor(j));
    return CovarianceEstimate::from_full(std::move(m));
}

GmmParams floored(const GmmParams& p, const Eigen::VectorXd& floor) {
    std::vector<CovarianceEstimate> covs;
    covs.reserve(p.n_components());
    for (const auto& c : p.covariances()) covs.push_back(apply_floor(c, floor));
    return GmmParams(p.weights(), p.means(), std::move(covs));
}

GmmParams initial_params(const Ensemble& data, std::size_t n_c, const EmOptions& opt,
                         const Eigen::VectorXd& floor, Rng& rng) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: first n_c entries become a sample without replacement.
    for (std::size_t i = 0; i < n_c; ++i) {
        const std::size_t j = i + rng.index(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    const CovarianceEstimate pooled =
        data.size() >= 2 ? ensemble_covariance(data, opt.diagonal_only)
                         : CovarianceEstimate::from_diagonal(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.dim())));
    std::vector<Eigen::VectorXd> means;
    std::vector<CovarianceEstimate> covs;
    for (std::size_t i = 0; i < n_c; ++i) {
        means.emplace_back(data.member(idx[i]));
        covs.push_back(apply_floor(pooled, floor));
    }
    Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_c), 1.0 / static_cast<double>(n_c));
    return GmmParams(std::move(w), std::move(means), std::move(covs));
}

}  // namespace

// ---------------------------------------------------------------------------

GmmParams::GmmParams(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                     std::vector<CovarianceEstimate> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0) throw InvalidInput("GMM needs at least one component");
    if (means_.size() != k || covariances_.size() != k)
        throw InvalidInput("GMM weights, means and covariances disagree on component count");
    if ((weights_.array() <= 0.0).any()) throw InvalidInput("GMM weights must be positive");
    if (std::abs(weights_.sum() - 1.0) > 1e-10) throw InvalidInput("GMM weights must sum to one");
    const auto d = means_.front().size();
    diagonal_ = covariances_.front().is_diagonal();
    for (std::size_t i = 0; i < k; ++i) {
        if (means_[i].size() != d || covariances_[i].dim() != static_cast<std::size_t>(d))
            throw InvalidInput("GMM component dimensions disagree");
        if (covariances_[i].is_diagonal() != diagonal_)
            throw InvalidInput("GMM components mix diagonal and full covariances");
        if (diagonal_) {
            const auto& v = covariances_[i].diagonal();
            if ((v.array() <= 0.0).any()) throw InvalidInput("GMM component variance must be positive");
            log_dets_.push_back(v.array().log().sum());
        } else {
            Eigen::LLT<Eigen::MatrixXd> llt(covariances_[i].matrix());
            if (llt.info() != Eigen::Success) throw InvalidInput("GMM component covariance is not positive definite");
            log_dets_.push_back(2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum());
            chol_.push_back(std::move(llt));
        }
    }
}

double GmmParams::mahalanobis_sq(const Eigen::VectorXd& x, std::size_t i) const {
    if (diagonal_) return ((x - means_[i]).array().square() / covariances_[i].diagonal().array()).sum();
    const Eigen::VectorXd z = chol_[i].matrixL().solve(x - means_[i]);
    return z.squaredNorm();
}

Eigen::VectorXd GmmParams::precision_times(std::size_t i, const Eigen::VectorXd& v) const {
    if (diagonal_) return v.cwiseQuotient(covariances_[i].diagonal());
    return chol_[i].solve(v);
}

double GmmParams::log_component_density(const Eigen::VectorXd& x, std::size_t i) const {
    const double d = static_cast<double>(dim());
    return -0.5 * (d * kLog2Pi + log_dets_[i] + mahalanobis_sq(x, i));
}

Eigen::VectorXd GmmParams::scale_by_sqrt_cov(std::size_t i, const Eigen::VectorXd& z) const {
    if (diagonal_) return z.cwiseProduct(covariances_[i].diagonal().cwiseSqrt());
    return chol_[i].matrixL() * z;
}

std::vector<std::size_t> Responsibilities::hard_labels() const {
    std::vector<std::size_t> labels(static_cast<std::size_t>(r.rows()));
    for (Eigen::Index e = 0; e < r.rows(); ++e) {
        Eigen::Index best = 0;
        r.row(e).maxCoeff(&best);
        labels[static_cast<std::size_t>(e)] = static_cast<std::size_t>(best);
    }
    return labels;
}

std::vector<std::size_t> Responsibilities::hard_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(r.cols()), 0);
    for (auto l : hard_labels()) ++counts[l];
    return counts;
}

double gmm_log_pdf(const Eigen::VectorXd& x, const GmmParams& params) {
    if (static_cast<std::size_t>(x.size()) != params.dim()) throw InvalidInput("gmm_log_pdf: dimension mismatch");
    if (!x.allFinite()) throw InvalidInput("gmm_log_pdf: non-finite input");
    Eigen::VectorXd terms(static_cast<Eigen::Index>(params.n_components()));
    for (std::size_t i = 0; i < params.n_components(); ++i)
        terms(static_cast<Eigen::Index>(i)) = std::log(params.weight(i)) + params.log_component_density(x, i);
    return log_sum_exp(terms);
}

double gmm_log_likelihood(const Ensemble& data, const GmmParams& params) {
    const Eigen::MatrixXd lw = weighted_log_densities(data, params);
    double ll = 0.0;
    for (Eigen::Index e = 0; e < lw.rows(); ++e) ll += log_sum_exp(lw.row(e).transpose());
    return ll;
}

Responsibilities e_step(const Ensemble& data, const GmmParams& params) {
    const Eigen::MatrixXd lw = weighted_log_densities(data, params);
    Responsibilities out;
    out.r.resize(lw.rows(), lw.cols());
    for (Eigen::Index e = 0; e < lw.rows(); ++e) {
        const double lse = log_sum_exp(lw.row(e).transpose());
        if (!std::isfinite(lse)) {
            // Every component density underflowed: hard-assign to the nearest mean.
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < params.n_components(); ++i) {
                const double d = (data.member(static_cast<std::size_t>(e)) - params.mean(i)).squaredNorm();
                if (d < best_d) { best_d = d; best = i; }
            }
            log_warning("e_step: all component densities underflowed for member " + std::to_string(e) +
                        "; assigned to nearest mean");
            out.r.row(e).setZero();
            out.r(e, static_cast<Eigen::Index>(best)) = 1.0;
            continue;
        }
        out.r.row(e) = (lw.row(e).array() - lse).exp();
    }
    out.w = out.r.colwise().sum().transpose();
    return out;
}

GmmParams m_step(const Ensemble& data, const Responsibilities& resp, bool diagonal_only) {
    const auto k = static_cast<std::size_t>(resp.r.cols());
    if (static_cast<std::size_t>(resp.r.rows()) != data.size()) throw InvalidInput("m_step: responsibilities do not match data");
    const double n = static_cast<double>(data.size());
    Eigen::VectorXd weights(static_cast<Eigen::Index>(k));
    std::vector<Eigen::VectorXd> means;
    std::vector<CovarianceEstimate> covs;
    for (std::size_t i = 0; i < k; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double w = resp.w(ii);
        if (!(w > 0.0)) throw DegenerateComponent(i);
        const Eigen::VectorXd ri = resp.r.col(ii) / w;
        weights(ii) = w / n;
        Eigen::VectorXd mu = data.members * ri;
        const Eigen::MatrixXd dev = data.members.colwise() - mu;
        if (diagonal_only) {
            covs.push_back(CovarianceEstimate::from_diagonal(dev.array().square().matrix() * ri));
        } else {
            Eigen::MatrixXd c = dev * ri.asDiagonal() * dev.transpose();
            covs.push_back(CovarianceEstimate::from_full(0.5 * (c + c.transpose())));
        }
        means.push_back(std::move(mu));
    }
    weights /= weights.sum();
    // Construct without validation of positive-definiteness: the caller floors first.
    std::vector<CovarianceEstimate> safe;
    const Eigen::VectorXd tiny = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(data.dim()), std::numeric_limits<double>::min());
    for (auto& c : covs) safe.push_back(apply_floor(c, tiny));
    return GmmParams(std::move(weights), std::move(means), std::move(safe));
}

Eigen::VectorXd default_variance_floor(const Ensemble& data) {
    Eigen::VectorXd var = data.size() >= 2 ? ensemble_covariance(data, true).diagonal()
                                           : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.dim()));
    for (Eigen::Index j = 0; j < var.size(); ++j) var(j) = var(j) > 0.0 ? 1e-8 * var(j) : 1e-12;
    return var;
}

EmResult em_fit(const Ensemble& data, std::size_t n_c, std::uint64_t seed, const EmOptions& opt) {
    validate(data);
    if (n_c == 0 || n_c > data.size()) throw InvalidInput("em_fit: need 1 <= n_c <= n_ens");
    if (opt.max_iter < 1) throw InvalidInput("em_fit: max_iter must be >= 1");
    const Eigen::VectorXd floor = floor_vector(data, opt);

    std::optional<EmResult> best;
    for (int attempt = 0; attempt <= opt.restarts; ++attempt) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        try {
            GmmParams params = initial_params(data, n_c, opt, floor, rng);
            double ll = gmm_log_likelihood(data, params);
            std::vector<double> history{ll};
            int it = 0;
            for (; it < opt.max_iter; ++it) {
                const Responsibilities resp = e_step(data, params);
                params = floored(m_step(data, resp, opt.diagonal_only), floor);
                const double next = gmm_log_likelihood(data, params);
                history.push_back(next);
                const bool converged = std::abs(next - ll) <= opt.rel_tol * std::max(std::abs(ll), 1e-300);
                ll = next;
                if (converged) { ++it; break; }
            }
            Responsibilities resp = e_step(data, params);
            if (!best || ll > best->log_likelihood)
                best = EmResult{std::move(params), std::move(resp), ll, std::move(history), it};
        } catch (const DegenerateComponent&) {
            continue;
        }
        if (n_c == 1) break;  // initialization is deterministic for a single component
    }
    if (!best) throw FitFailure("em_fit: every restart produced a degenerate component (n_c=" + std::to_string(n_c) + ")");
    return std::move(*best);
}

Criterion parse_criterion(const std::string& name) {
    if (name == "aic" || name == "AIC") return Criterion::aic;
    if (name == "bic" || name == "BIC") return Criterion::bic;
    throw InvalidInput("unknown model selection criterion '" + name + "'");
}

std::string to_string(Criterion c) { return c == Criterion::aic ? "aic" : "bic"; }

double free_parameter_count(std::size_t n_c, std::size_t dim, bool diagonal) {
    const double k = static_cast<double>(n_c);
    const double d = static_cast<double>(dim);
    const double cov = diagonal ? d : d * (d + 1.0) / 2.0;
    return (k - 1.0) + k * d + k * cov;
}

double criterion_value(const GmmParams& params, const Ensemble& data, Criterion kind) {
    const double ll = gmm_log_likelihood(data, params);
    const double k = free_parameter_count(params.n_components(), params.dim(), params.diagonal());
    const double penalty = kind == Criterion::aic ? 2.0 : std::log(static_cast<double>(data.size()));
    return -2.0 * ll + penalty * k;
}

const EmResult& ModelSelectionReport::selected() const {
    for (std::size_t c = 0; c < candidates.size(); ++c)
        if (candidates[c] == selected_n_c && fits[c]) return *fits[c];
    throw FitFailure("model selection report holds no fit for the selected component count");
}

ModelSelectionReport select_model(const Ensemble& data, const std::vector<std::size_t>& candidates,
                                  Criterion criterion, std::size_t min_members, std::uint64_t seed,
                                  const EmOptions& options) {
    if (candidates.empty()) throw InvalidInput("select_model: empty candidate list");
    if (min_members < 1) throw InvalidInput("select_model: min_members must be >= 1");
    ModelSelectionReport rep;
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best_nc;
    for (std::size_t n_c : candidates) {
        rep.candidates.push_back(n_c);
        std::optional<EmResult> fit;
        double value = std::numeric_limits<double>::quiet_NaN();
        bool ok = false;
        if (n_c >= 1 && n_c <= data.size()) {
            try {
                fit = em_fit(data, n_c, derive_seed(seed, n_c), options);
                value = criterion_value(fit->params, data, criterion);
                const auto counts = fit->resp.hard_counts();
                ok = std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c >= min_members; });
            } catch (const FitFailure& e) {
                log_warning(e.what());
            }
        }
        rep.criterion_values.push_back(value);
        rep.admissible.push_back(ok);
        // Strict comparison keeps the smallest n_c on exact ties (candidates ascending).
        if (ok && (value < best || (value == best && best_nc && n_c < *best_nc))) {
            best = value;
            best_nc = n_c;
        }
        rep.fits.push_back(std::move(fit));
    }
    if (best_nc) {
        rep.selected_n_c = *best_nc;
        return rep;
    }
    rep.selected_n_c = 1;
    const auto it = std::find(rep.candidates.begin(), rep.candidates.end(), std::size_t{1});
    if (it == rep.candidates.end() || !rep.fits[static_cast<std::size_t>(it - rep.candidates.begin())]) {
        rep.candidates.push_back(1);
        EmResult fit = em_fit(data, 1, derive_seed(seed, 1), options);
        rep.criterion_values.push_back(criterion_value(fit.params, data, criterion));
        rep.admissible.push_back(false);
        rep.fits.emplace_back(std::move(fit));
    }
    return rep;
}

JointMoments gmm_joint_moments(const GmmParams& p, bool diagonal_only) {
    const auto d = static_cast<Eigen::Index>(p.dim());
    StateVector mean = StateVector::Zero(d);
    for (std::size_t i = 0; i < p.n_components(); ++i) mean += p.weight(i) * p.mean(i);
    if (diagonal_only) {
        Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
        for (std::size_t i = 0; i < p.n_components(); ++i)
            var += p.weight(i) * (p.covariance(i).variances() + (p.mean(i) - mean).cwiseAbs2());
        return {std::move(mean), CovarianceEstimate::from_diagonal(std::move(var))};
    }
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < p.n_components(); ++i) {
        const Eigen::VectorXd dm = p.mean(i) - mean;
        cov += p.weight(i) * (p.covariance(i).dense() + dm * dm.transpose());
    }
    return {std::move(mean), CovarianceEstimate::from_full(std::move(cov))};
}

Ensemble sample_gmm(const GmmParams& p, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InvalidInput("sample_gmm: n must be >= 1");
    Rng rng(seed);
    const auto d = static_cast<Eigen::Index>(p.dim());
    Eigen::MatrixXd out(d, static_cast<Eigen::Index>(n));
    Eigen::VectorXd z(d);
    for (std::size_t s = 0; s < n; ++s) {
        const double u = rng.uniform();
        std::size_t comp = p.n_components() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < p.n_components(); ++i) {
            acc += p.weight(i);
            if (u < acc) { comp = i; break; }
        }
        for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
        out.col(static_cast<Eigen::Index>(s)) = p.mean(comp) + p.scale_by_sqrt_cov(comp, z);
    }
    return Ensemble(std::move(out));
}

nlohmann::json to_json(const GmmParams& p) {
    nlohmann::json j;
    j["weights"] = std::vector<double>(p.weights().data(), p.weights().data() + p.weights().size());
    auto means = nlohmann::json::array();
    for (const auto& m : p.means()) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
    j["means"] = means;
    j["diagonal"] = p.diagonal();
    if (p.diagonal()) {
        auto vars = nlohmann::json::array();
        for (const auto& c : p.covariances()) {
            const auto& v = c.diagonal();
            vars.push_back(std::vector<double>(v.data(), v.data() + v.size()));
        }
        j["variances"] = vars;
    } else {
        auto covs = nlohmann::json::array();
        for (const auto& c : p.covariances()) {
            auto rows = nlohmann::json::array();
            const auto& m = c.matrix();
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                std::vector<double> row(static_cast<std::size_t>(m.cols()));
                for (Eigen::Index col = 0; col < m.cols(); ++col) row[static_cast<std::size_t>(col)] = m(r, col);
                rows.push_back(row);
            }
            covs.push_back(rows);
        }
        j["covariances"] = covs;
    }
    return j;
}

GmmParams gmm_from_json(const nlohmann::json& j) {
    try {
        auto to_vec = [](const std::vector<double>& v) { return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))); };
        const auto w = j.at("weights").get<std::vector<double>>();
        std::vector<Eigen::VectorXd> means;
        for (const auto& m : j.at("means")) means.push_back(to_vec(m.get<std::vector<double>>()));
        std::vector<CovarianceEstimate> covs;
        if (j.value("diagonal", true)) {
            for (const auto& v : j.at("variances")) covs.push_back(CovarianceEstimate::from_diagonal(to_vec(v.get<std::vector<double>>())));
        } else {
            for (const auto& c : j.at("covariances")) {
                const auto rows = c.get<std::vector<std::vector<double>>>();
                Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    if (rows[r].size() != rows.size()) throw InvalidInput("GMM JSON: covariance is not square");
                    for (std::size_t col = 0; col < rows.size(); ++col)
                        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = rows[r][col];
                }
                covs.push_back(CovarianceEstimate::from_full(std::move(m)));
            }
        }
        return GmmParams(to_vec(w), std::move(means), std::move(covs));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("GMM JSON: ") + e.what());
    }
}

}  // namespace hmcda
