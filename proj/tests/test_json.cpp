#include "capfa/error.hpp"
#include "capfa/json_io.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace capfa;

TEST_SUITE("json") {

TEST_CASE("matrices round-trip row-major, including non-finite values") {
    Eigen::MatrixXd m(2, 3);
    m << 0.1, -1.0 / 3.0, 1e-300, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 7;
    const auto j = matrix_to_json(m);
    CHECK(j["rows"] == 2);
    CHECK(j["cols"] == 3);
    CHECK(j["data"][1].get<double>() == -1.0 / 3.0);
    CHECK(j["data"][3] == "inf");
    CHECK(matrix_from_json(j) == m);

    Eigen::MatrixXd n(1, 1);
    n(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const auto jn = matrix_to_json(n);
    CHECK(jn["data"][0].is_null());
    CHECK(std::isnan(matrix_from_json(jn)(0, 0)));

    CHECK(matrix_from_json(matrix_to_json(Eigen::MatrixXd(4, 0))).cols() == 0);
    CHECK_THROWS_AS(matrix_from_json(nlohmann::json{{"rows", 2}, {"cols", 2}, {"data", {1, 2, 3}}}), DataError);
}

TEST_CASE("unrotated solution round-trip") {
    std::mt19937_64 rng(101);
    auto s = test::random_solution(7, 2, rng);
    s.discrepancy = 0.123456789;
    s.baseline_discrepancy = 4.5;
    s.iterations = 17;
    s.ridge_applied = true;
    s.heywood[3] = true;
    const auto back = unrotated_from_json(to_json(s));
    CHECK(back.labels == s.labels);
    CHECK(back.loadings == s.loadings);
    CHECK(back.uniquenesses == s.uniquenesses);
    CHECK(back.discrepancy == s.discrepancy);
    CHECK(back.baseline_discrepancy == s.baseline_discrepancy);
    CHECK(back.n == s.n);
    CHECK(back.k == s.k);
    CHECK(back.ridge_applied);
    CHECK(back.heywood == s.heywood);
    CHECK(to_json(s).contains("fit"));
}

TEST_CASE("rotated solution round-trip") {
    std::mt19937_64 rng(102);
    const auto s = test::random_solution(8, 3, rng);
    const auto rs = rotate_oblimin(s);
    const auto back = rotated_from_json(to_json(rs));
    CHECK(back.labels == rs.labels);
    CHECK(back.pattern == rs.pattern);
    CHECK(back.structure == rs.structure);
    CHECK(back.phi == rs.phi);
    CHECK(back.uniquenesses == rs.uniquenesses);
    CHECK(back.method == rs.method);
    CHECK(back.criterion == rs.criterion);
}

TEST_CASE("hull result round-trip") {
    HullResult h;
    h.candidates = {{0, 0.5, 10, 0.5}, {1, 0.8, 5, 0.2}, {2, 0.9, 1, 0.1}};
    h.hull_members = {true, false, true};
    h.st_values = {std::nan(""), 2.5, std::nan("")};
    h.selected_k = 1;
    h.fallback_to_scree = true;
    const auto back = hull_from_json(to_json(h));
    CHECK(back.candidates.size() == 3);
    CHECK(back.candidates[1].f == 0.8);
    CHECK(back.candidates[2].df == 1);
    CHECK(back.hull_members == h.hull_members);
    CHECK(std::isnan(back.st_values[0]));
    CHECK(back.st_values[1] == 2.5);
    CHECK(back.selected_k == 1);
    CHECK(back.fallback_to_scree);
}

TEST_CASE("Bayesian posterior round-trip") {
    BayesPosterior bp;
    bp.labels = {"a", "b"};
    bp.k_distribution = {0.0, 0.25, 0.75};
    bp.modal_k = 2;
    bp.draws = 400;
    for (int j = 0; j < 2; ++j) {
        TaskPosterior t;
        t.distribution = {0.1, 0.2 + 0.5 * j, 0.7 - 0.5 * j};
        t.modal_factor = 2 - j;
        t.modal_mass = 0.7;
        t.loading_mean = 0.61 + j;
        t.loading_lo = 0.4;
        t.loading_hi = 0.8;
        bp.tasks.push_back(t);
    }
    bp.diagnostics.acceptance_rates = {0.2, 0.3};
    bp.diagnostics.split_rhat["k"] = 1.01;
    bp.diagnostics.non_mixing = false;
    const auto back = bayes_from_json(to_json(bp));
    CHECK(back.labels == bp.labels);
    CHECK(back.k_distribution == bp.k_distribution);
    CHECK(back.modal_k == 2);
    CHECK(back.draws == 400);
    CHECK(back.tasks[1].distribution == bp.tasks[1].distribution);
    CHECK(back.tasks[0].modal_factor == 2);
    CHECK(back.tasks[1].loading_mean == bp.tasks[1].loading_mean);
    CHECK(back.diagnostics.acceptance_rates == bp.diagnostics.acceptance_rates);
    CHECK(back.diagnostics.split_rhat == bp.diagnostics.split_rhat);
}

TEST_CASE("files") {
    const auto dir = test::scratch_dir("json_files");
    write_json(dir / "a.json", nlohmann::json{{"x", 1}});
    const std::string text = test::read_text(dir / "a.json");
    CHECK(text == "{\n  \"x\": 1\n}\n");
    CHECK(read_json(dir / "a.json")["x"] == 1);
    CHECK_THROWS_WITH_AS(read_json(dir / "missing.json"), doctest::Contains("file not found"), DataError);
    test::write_text(dir / "bad.json", "{ nope");
    CHECK_THROWS_AS(read_json(dir / "bad.json"), DataError);
}

}  // TEST_SUITE
