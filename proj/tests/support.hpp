#pragma once

#include "hmcda/ensemble.hpp"
#include "hmcda/potential_function.hpp"
#include "hmcda/rng.hpp"

#include <cmath>

namespace testing {

inline Eigen::VectorXd randn(std::size_t n, hmcda::Rng& rng, double scale = 1.0) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

inline hmcda::Ensemble random_ensemble(std::size_t dim, std::size_t n, std::uint64_t seed, double scale = 1.0) {
    hmcda::Rng rng(seed);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
    for (auto& x : m.reshaped()) x = scale * rng.normal();
    return hmcda::Ensemble(m);
}

// Central differences with a step scaled to |x|.
inline Eigen::VectorXd fd_gradient(const hmcda::PotentialFunction& f, const Eigen::VectorXd& x, double step = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = step * std::max(1.0, std::abs(x(k)));
        Eigen::VectorXd a = x, b = x;
        a(k) += h;
        b(k) -= h;
        g(k) = (f.value(a) - f.value(b)) / (2.0 * h);
    }
    return g;
}

inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing
