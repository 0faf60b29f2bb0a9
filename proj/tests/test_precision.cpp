#include <doctest.h>

#include "hmcda/precision.hpp"
#include "support.hpp"

using namespace hmcda;

namespace {

IndexDistance line() {
    return [](std::size_t i, std::size_t j) { return std::abs(double(i) - double(j)); };
}

// AR(1) ensemble along a line: strong nearest-neighbour correlation.
Ensemble ar1(std::size_t dim, std::size_t n, double phi, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
    for (Eigen::Index e = 0; e < m.cols(); ++e) {
        m(0, e) = 2.0 + rng.normal();
        for (Eigen::Index k = 1; k < m.rows(); ++k) m(k, e) = 2.0 + phi * (m(k - 1, e) - 2.0) + std::sqrt(1 - phi * phi) * rng.normal();
    }
    return Ensemble(m);
}

}  // namespace

TEST_CASE("whiten and color are inverse maps") {
    const Ensemble ens = ar1(12, 30, 0.8, 1);
    const auto t = estimate_local_precision(ens, line());
    Rng rng(2);
    const Eigen::VectorXd x = testing::randn(12, rng);
    CHECK((t.color(t.whiten(x)) - x).norm() < 1e-12);
    const Eigen::VectorXd u = testing::randn(12, rng);
    CHECK((t.whiten(t.color(u)) - u).norm() < 1e-12);
    CHECK((t.color(t.whiten(ens)).members - ens.members).norm() < 1e-10);

    // L is unit lower triangular with support inside the radius.
    for (int i = 0; i < t.L.outerSize(); ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(t.L, i); it; ++it) {
            CHECK(it.col() <= it.row());
            if (it.col() == it.row()) CHECK(it.value() == 1.0);
            CHECK(std::abs(it.row() - it.col()) <= 2);
        }
}

TEST_CASE("color_adjoint is the transpose of the coloring Jacobian") {
    const Ensemble ens = ar1(10, 25, 0.6, 3);
    const auto t = estimate_local_precision(ens, line());
    Rng rng(4);
    const Eigen::VectorXd u = testing::randn(10, rng), g = testing::randn(10, rng);
    // color is affine: J u = color(u) - color(0).
    const Eigen::VectorXd ju = t.color(u) - t.color(Eigen::VectorXd::Zero(10));
    CHECK(std::abs(ju.dot(g) - u.dot(t.color_adjoint(g))) < 1e-10);
}

TEST_CASE("precision_times matches the inverse of the implied covariance") {
    const Ensemble ens = ar1(8, 40, 0.7, 5);
    const auto t = estimate_local_precision(ens, line());
    Eigen::MatrixXd c(8, 8);
    for (int k = 0; k < 8; ++k) c.col(k) = t.color(Eigen::VectorXd::Unit(8, k)) - t.color(Eigen::VectorXd::Zero(8));
    const Eigen::MatrixXd b = c * c.transpose();
    Rng rng(6);
    const Eigen::VectorXd v = testing::randn(8, rng);
    CHECK((t.precision_times(v) - b.ldlt().solve(v)).norm() < 1e-8 * v.norm() * b.inverse().norm());
    // With strong correlation the implied covariance picks it up.
    CHECK(b(3, 4) / std::sqrt(b(3, 3) * b(4, 4)) > 0.4);
}

TEST_CASE("whitened forecast has near-unit spread") {
    const Ensemble ens = ar1(15, 60, 0.8, 7);
    const auto t = estimate_local_precision(ens, line());
    const Eigen::VectorXd var = ensemble_covariance(t.whiten(ens), true).diagonal();
    CHECK(var.minCoeff() > 0.5);
    CHECK(var.maxCoeff() < 1.5);
    CHECK(ensemble_mean(t.whiten(ens)).norm() < 1e-10);
}

TEST_CASE("zero-spread coordinates stay independent") {
    Ensemble ens = ar1(5, 10, 0.5, 8);
    ens.members.row(2).setConstant(4.0);
    const auto t = estimate_local_precision(ens, line());
    CHECK(t.sqrt_d.allFinite());
    CHECK(t.L.row(2).sum() == 1.0);
    CHECK(t.color(t.whiten(ens)).members.isApprox(ens.members, 1e-10));
}

TEST_CASE("WhitenedOperator") {
    const Ensemble ens = ar1(9, 20, 0.6, 9);
    auto t = std::make_shared<const LocalPrecision>(estimate_local_precision(ens, line()));
    auto sel = std::make_shared<SelectionOperator>(std::vector<std::size_t>{0, 4, 8}, 9);
    WhitenedOperator w(sel, t);
    Rng rng(10);
    const Eigen::VectorXd u = testing::randn(9, rng), v = testing::randn(3, rng);
    CHECK(w.apply(u) == sel->apply(t->color(u)));
    const Eigen::VectorXd lin = w.apply(u) - w.apply(Eigen::VectorXd::Zero(9));
    CHECK(std::abs(lin.dot(v) - u.dot(w.adjoint_apply(u, v))) < 1e-10);
    CHECK(w.anchors().empty());
    CHECK(w.is_linear());
}
