#include <doctest.h>

#include "hmcda/diagnostics.hpp"
#include "hmcda/error.hpp"
#include "support.hpp"

#include <sstream>

using namespace hmcda;

TEST_CASE("rmse") {
    const Eigen::Vector2d t(1.0, -2.0);
    CHECK(rmse(t, t) == 0.0);
    CHECK(rmse(Eigen::Vector3d(2, 3, 4), Eigen::Vector3d(1, 2, 3)) == 1.0);
    CHECK(rmse(Eigen::Vector2d(3, 4), Eigen::Vector2d::Zero()) == doctest::Approx(std::sqrt(12.5)));
    CHECK(rmse(Eigen::Vector2d(3, 4), Eigen::Vector2d::Zero()) == doctest::Approx(3.5355).epsilon(1e-4));
    CHECK_THROWS_AS(rmse(Eigen::Vector2d::Zero(), Eigen::Vector3d::Zero()), InvalidInput);

    Rng rng(1);
    for (int k = 0; k < 20; ++k) {
        const Eigen::VectorXd x = testing::randn(7, rng), y = testing::randn(7, rng), z = testing::randn(7, rng);
        CHECK(rmse(x, y) == rmse(y, x));
        CHECK(rmse(x, z) <= rmse(x, y) + rmse(y, z) + 1e-15);
    }
}

TEST_CASE("rank_of_truth") {
    const Ensemble ens(Eigen::RowVectorXd::LinSpaced(5, 1.0, 5.0));
    CHECK(rank_of_truth(ens, Eigen::VectorXd::Constant(1, 0.0), 1, 0) == std::vector<std::size_t>{0});
    CHECK(rank_of_truth(ens, Eigen::VectorXd::Constant(1, 9.0), 1, 0) == std::vector<std::size_t>{5});
    CHECK(rank_of_truth(ens, Eigen::VectorXd::Constant(1, 3.5), 1, 0) == std::vector<std::size_t>{3});

    // Ties: each tied member counts below with probability 1/2.
    const Ensemble tied(Eigen::MatrixXd::Zero(1, 4));
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 400; ++s) mean += static_cast<double>(rank_of_truth(tied, Eigen::VectorXd::Zero(1), 1, s)[0]);
    CHECK(mean / 400 == doctest::Approx(2.0).epsilon(0.1));

    const Ensemble wide = testing::random_ensemble(40, 5, 2);
    CHECK(rank_of_truth(wide, Eigen::VectorXd::Zero(40), 16, 0).size() == 3);
}

TEST_CASE("rank histogram of a calibrated ensemble is flat") {
    Rng rng(3);
    const std::size_t n_ens = 10;
    std::vector<std::vector<std::size_t>> ranks;
    for (int c = 0; c < 100; ++c) {
        const Ensemble ens = testing::random_ensemble(50, n_ens, 100 + c);
        ranks.push_back(rank_of_truth(ens, testing::randn(50, rng), 1, c));
    }
    const auto hist = accumulate_rank_histogram(ranks, n_ens, 1);
    CHECK(hist.bins.size() == n_ens + 1);
    CHECK(hist.total() == 50 * 100);
    CHECK(hist.cycles == 100);
    CHECK(rank_uniformity_pvalue(hist) > 0.01);

    // A biased truth is detected.
    std::vector<std::vector<std::size_t>> biased;
    for (int c = 0; c < 100; ++c) {
        const Ensemble ens = testing::random_ensemble(50, n_ens, 500 + c);
        biased.push_back(rank_of_truth(ens, testing::randn(50, rng).array() + 1.0, 1, c));
    }
    CHECK(rank_uniformity_pvalue(accumulate_rank_histogram(biased, n_ens)) < 1e-6);
}

TEST_CASE("accumulate_rank_histogram") {
    const auto h = accumulate_rank_histogram({{2, 2}, {2}}, 4);
    CHECK(h.bins == std::vector<std::size_t>{0, 0, 3, 0, 0});
    const auto empty = accumulate_rank_histogram({}, 3);
    CHECK(empty.bins == std::vector<std::size_t>{0, 0, 0, 0});
    CHECK(empty.total() == 0);
    CHECK_THROWS_AS(accumulate_rank_histogram({{5}}, 4), InvalidInput);
    const auto j = to_json(h);
    CHECK(j.at("bins").size() == 5);
}

TEST_CASE("chi_square_qq") {
    const Ensemble ens = testing::random_ensemble(3, 2000, 4);
    const auto qq = chi_square_qq(ens, 0.0);
    CHECK(qq.covariance == "full");
    CHECK(qq.d_eff == 3.0);
    REQUIRE(qq.distances.size() == 2000);
    CHECK(std::is_sorted(qq.distances.begin(), qq.distances.end()));
    CHECK(std::is_sorted(qq.quantiles.begin(), qq.quantiles.end()));
    for (std::size_t i = 200; i < 1990; ++i) CHECK(std::abs(qq.distances[i] / qq.quantiles[i] - 1.0) < 0.2);

    // d = 1: standardized squared deviations.
    const Ensemble one = testing::random_ensemble(1, 8, 5);
    const auto q1 = chi_square_qq(one, 0.0);
    const double var = ensemble_covariance(one, true).diagonal()(0);
    std::vector<double> z;
    const Eigen::MatrixXd an = anomalies(one);
    for (double v : an.row(0)) z.push_back(v * v / var);
    std::sort(z.begin(), z.end());
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(q1.distances[i] == doctest::Approx(z[i]));

    // Duplicated members: zero distances through the fallback.
    const auto dup = chi_square_qq(Ensemble(Eigen::Vector2d(1, 2).replicate(1, 5)), 0.0);
    CHECK(dup.covariance == "diagonal");
    for (double v : dup.distances) CHECK(v == 0.0);

    // n_var >= n_ens: localized or diagonal, with d_eff = n_ens - 1.
    const Ensemble wide = testing::random_ensemble(30, 10, 6);
    const IndexDistance line = [](std::size_t i, std::size_t j) { return std::abs(double(i) - double(j)); };
    const auto loc = chi_square_qq(wide, 3.0, line);
    CHECK(loc.covariance == "localized");
    CHECK(loc.d_eff == 9.0);
    CHECK(chi_square_qq(wide, 3.0).covariance == "diagonal");

    // Member order does not matter.
    Eigen::MatrixXd rev = wide.members.rowwise().reverse();
    const auto loc_rev = chi_square_qq(Ensemble(rev), 3.0, line);
    for (std::size_t i = 0; i < loc.distances.size(); ++i) CHECK(loc_rev.distances[i] == doctest::Approx(loc.distances[i]));
    CHECK(to_json(loc).at("d_eff") == 9.0);
}

TEST_CASE("metrics CSV") {
    std::ostringstream out;
    write_metrics_csv(out, {{1, 2.5, 1.5, 0.9}, {2, 2.0, 1.0, std::nullopt}});
    CHECK(out.str() == "cycle,rmse_forecast,rmse_analysis,acceptance_rate\n1,2.5,1.5,0.90000000000000002\n2,2,1,\n");
}
