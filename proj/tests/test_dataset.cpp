#include "capfa/csv.hpp"
#include "capfa/dataset.hpp"
#include "capfa/error.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace capfa;

namespace {

std::vector<TaskSpec> specs_for(const std::vector<std::string>& ids) {
    std::vector<TaskSpec> specs;
    for (const auto& id : ids) specs.push_back({id, id, "acc", Direction::HigherBetter, Annotation::Other});
    return specs;
}

PerformanceMatrix two_columns(const std::vector<double>& a, const std::vector<double>& b) {
    Eigen::MatrixXd s(static_cast<Eigen::Index>(a.size()), 2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        s(static_cast<Eigen::Index>(i), 0) = a[i];
        s(static_cast<Eigen::Index>(i), 1) = b[i];
    }
    return test::make_matrix(s);
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("csv parser handles quotes, doubled quotes, CRLF and blank lines") {
    const auto rows = csv::parse("a,\"b,c\",\"say \"\"hi\"\"\"\r\n\r\n1,,3\n");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == csv::Row{"a", "b,c", "say \"hi\""});
    CHECK(rows[1] == csv::Row{"1", "", "3"});
    CHECK_THROWS_AS(csv::parse("\"open"), DataError);
}

TEST_CASE("csv join quotes only when needed and parses back") {
    const csv::Row fields{"plain", "with,comma", "with \"quote\"", ""};
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::parse(csv::join(fields)).front() == fields);
}

TEST_CASE("csv doubles round-trip exactly") {
    for (double v : {0.1, -1.0 / 3.0, 3.66e11, 1e-300, 0.0}) {
        bool ok = false;
        CHECK(csv::parse_double(csv::format_double(v), ok) == v);
        CHECK(ok);
    }
}

TEST_CASE("performance matrix loads with a missing-cell mask") {
    const auto dir = test::scratch_dir("perf_load");
    const auto path = test::write_text(dir / "p.csv", "system,a,b,c\nx,1,2,3\ny,4,,6\nz,7,8,NA\n");
    const auto m = load_performance_matrix(path, specs_for({"a", "b", "c"}));
    CHECK(m.n_systems() == 3);
    CHECK(m.n_tasks() == 3);
    CHECK(m.systems == std::vector<std::string>{"x", "y", "z"});
    CHECK(m.present(1, 1) == false);
    CHECK(m.present(2, 2) == false);
    CHECK(m.missing_in_row(0) == 0);
    CHECK(m.scores(1, 2) == 6.0);
}

TEST_CASE("performance matrix errors") {
    const auto dir = test::scratch_dir("perf_errors");
    const auto specs = specs_for({"a", "b"});
    SUBCASE("empty file") {
        const auto path = test::write_text(dir / "empty.csv", "");
        CHECK_THROWS_WITH_AS(load_performance_matrix(path, specs), doctest::Contains("no data rows"), DataError);
    }
    SUBCASE("header only") {
        const auto path = test::write_text(dir / "header.csv", "system,a,b\n");
        CHECK_THROWS_WITH_AS(load_performance_matrix(path, specs), doctest::Contains("no data rows"), DataError);
    }
    SUBCASE("duplicate system") {
        const auto path = test::write_text(dir / "dup.csv", "system,a,b\nGPT-J,1,2\nBLOOM,1,2\nGPT-J,3,4\n");
        CHECK_THROWS_WITH_AS(load_performance_matrix(path, specs), doctest::Contains("GPT-J"), DataError);
    }
    SUBCASE("unknown task column") {
        const auto path = test::write_text(dir / "unknown.csv", "system,a,zz\nx,1,2\n");
        CHECK_THROWS_WITH_AS(load_performance_matrix(path, specs), doctest::Contains("zz"), DataError);
    }
    SUBCASE("ragged row") {
        const auto path = test::write_text(dir / "ragged.csv", "system,a,b\nx,1\n");
        CHECK_THROWS_AS(load_performance_matrix(path, specs), DataError);
    }
    SUBCASE("non-numeric cell") {
        const auto path = test::write_text(dir / "text.csv", "system,a,b\nx,1,abc\n");
        CHECK_THROWS_AS(load_performance_matrix(path, specs), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(load_performance_matrix(dir / "nope.csv", specs), doctest::Contains("file not found"),
                             DataError);
    }
}

TEST_CASE("performance matrix write/reload reproduces scores and mask exactly") {
    const auto dir = test::scratch_dir("perf_roundtrip");
    Eigen::MatrixXd s(3, 2);
    s << 0.1, -1.0 / 3.0, 2.5e-7, 1e10, 7.0, 0.0;
    auto m = test::make_matrix(s);
    m.present(1, 0) = false;
    m.scores(1, 0) = 0.0;
    write_performance_matrix(dir / "m.csv", m);
    const auto back = load_performance_matrix(dir / "m.csv");
    CHECK(back.systems == m.systems);
    CHECK(back.tasks == m.tasks);
    CHECK(back.present == m.present);
    CHECK(back.scores == m.scores);
}

TEST_CASE("metadata parses table rows") {
    const auto dir = test::scratch_dir("meta");
    const auto path = test::write_text(dir / "m.csv",
                                       "name,size_b,total_tokens,release_date,it,rlhf\n"
                                       "BLOOM,176.00,3.66E+11,01/07/2022,0,0\n"
                                       "Cohere Command beta,52.4,?,03/01/2023,1,?\n");
    const auto meta = load_system_metadata(path);
    REQUIRE(meta.size() == 2);
    CHECK(meta[0].name == "BLOOM");
    CHECK(meta[0].size_b == 176.0);
    CHECK(meta[0].total_tokens.value() == 3.66e11);
    CHECK(meta[0].release_date.value() == Date{2022, 7, 1});
    CHECK(meta[0].instruction_tuned.value() == false);
    CHECK(meta[0].rlhf.value() == false);
    CHECK_FALSE(meta[1].total_tokens.has_value());
    CHECK(meta[1].size_b == 52.4);
    CHECK(meta[1].release_date.value() == Date{2023, 1, 3});
    CHECK(meta[1].instruction_tuned.value() == true);
    CHECK_FALSE(meta[1].rlhf.has_value());

    write_system_metadata(dir / "again.csv", meta);
    const auto back = load_system_metadata(dir / "again.csv");
    CHECK(back[1].name == meta[1].name);
    CHECK(back[0].total_tokens == meta[0].total_tokens);
    CHECK(back[1].release_date == meta[1].release_date);
}

TEST_CASE("metadata errors") {
    const auto dir = test::scratch_dir("meta_errors");
    const std::string header = "name,size_b,total_tokens,release_date,it,rlhf\n";
    CHECK_THROWS_WITH_AS(load_system_metadata(test::write_text(dir / "a.csv", header + "X,-5,?,01/01/2022,0,0\n")),
                         doctest::Contains("positive"), DataError);
    CHECK_THROWS_AS(load_system_metadata(test::write_text(dir / "b.csv", header + "X,big,?,01/01/2022,0,0\n")),
                    DataError);
    CHECK_THROWS_WITH_AS(load_system_metadata(test::write_text(dir / "c.csv", header + "X,5,?,2022-01-01,0,0\n")),
                         doctest::Contains("date"), DataError);
    CHECK_THROWS_AS(load_system_metadata(test::write_text(dir / "d.csv", header + "X,5,?,31/02/2022,0,0\n")),
                    DataError);
}

TEST_CASE("task specs round-trip") {
    const auto dir = test::scratch_dir("specs");
    const std::vector<TaskSpec> specs{{"ice", "ICE", "bits_per_byte", Direction::LowerBetter, Annotation::LanguageModeling},
                                      {"gsm", "GSM8K", "exact_match", Direction::HigherBetter, Annotation::Reasoning}};
    write_task_specs(dir / "t.csv", specs);
    const auto back = load_task_specs(dir / "t.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "ice");
    CHECK(back[0].direction == Direction::LowerBetter);
    CHECK(back[0].annotation == Annotation::LanguageModeling);
    CHECK(back[1].display_name == "GSM8K");
    CHECK_THROWS_AS(parse_direction("sideways"), DataError);
}

TEST_CASE("filter_systems keeps rows with at most max_missing absent cells in order") {
    Eigen::MatrixXd s = Eigen::MatrixXd::Ones(4, 5);
    auto m = test::make_matrix(s);
    m.present.row(1).head(3).setConstant(false);  // 3 missing
    m.present.row(2).head(2).setConstant(false);  // 2 missing
    const auto f = filter_systems(m, 2);
    CHECK(f.systems == std::vector<std::string>{"s0", "s2", "s3"});
    CHECK(f.present.row(1) == m.present.row(2));

    const auto full = test::make_matrix(s);
    const auto same = filter_systems(full, 2);
    CHECK(same.systems == full.systems);
    CHECK(same.scores == full.scores);

    m.present.setConstant(false);
    CHECK_THROWS_AS(filter_systems(m, 2), DataError);
    CHECK_THROWS_AS(filter_systems(full, -1), UsageError);
}

TEST_CASE("harmonize_directions negates lower-is-better columns once") {
    auto m = two_columns({0.8, 1.2}, {0.5, 0.6});
    const std::vector<TaskSpec> specs{{"t0", "bpb", "bits_per_byte", Direction::LowerBetter, Annotation::LanguageModeling},
                                      {"t1", "acc", "accuracy", Direction::HigherBetter, Annotation::Reasoning}};
    const auto h = harmonize_directions(m, specs);
    CHECK(h.scores(0, 0) == -0.8);
    CHECK(h.scores(1, 0) == -1.2);
    CHECK(h.scores.col(1) == m.scores.col(1));
    CHECK(h.present == m.present);
    CHECK(h.harmonized);
    CHECK_THROWS_AS(harmonize_directions(h, specs), UsageError);
    CHECK_THROWS_AS(harmonize_directions(m, {specs[1]}), DataError);
}

TEST_CASE("standardize z-scores present cells") {
    const auto z = standardize(two_columns({1, 2, 3}, {10, 30, 20}));
    CHECK(z.scores(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(z.scores(1, 0) == doctest::Approx(0.0));
    CHECK(z.scores(2, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_WITH_AS(standardize(two_columns({5, 5, 5}, {1, 2, 3})), doctest::Contains("t0"), DataError);
}

TEST_CASE("standardize ignores absent cells and is idempotent") {
    std::mt19937_64 rng(3);
    auto m = test::make_matrix(test::random_normal(12, 4, rng) * 3.0 + Eigen::MatrixXd::Constant(12, 4, 5.0));
    m.present(2, 1) = false;
    m.scores(2, 1) = 1e6;
    const auto z = standardize(m);
    for (Eigen::Index j = 0; j < 4; ++j) {
        double sum = 0, sq = 0;
        int n = 0;
        for (Eigen::Index i = 0; i < 12; ++i)
            if (z.present(i, j)) {
                sum += z.scores(i, j);
                sq += z.scores(i, j) * z.scores(i, j);
                ++n;
            }
        CHECK(std::abs(sum / n) < 1e-12);
        CHECK((sq - sum * sum / n) / (n - 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto zz = standardize(z);
    for (Eigen::Index i = 0; i < 12; ++i)
        for (Eigen::Index j = 0; j < 4; ++j)
            if (z.present(i, j)) CHECK(std::abs(zz.scores(i, j) - z.scores(i, j)) < 1e-12);
}

TEST_CASE("harmonize then standardize equals standardize of pre-negated data") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd s = test::random_normal(10, 2, rng);
    const std::vector<TaskSpec> specs{{"t0", "a", "bpb", Direction::LowerBetter, Annotation::Other},
                                      {"t1", "b", "acc", Direction::HigherBetter, Annotation::Other}};
    const auto a = standardize(harmonize_directions(test::make_matrix(s), specs));
    Eigen::MatrixXd neg = s;
    neg.col(0) *= -1.0;
    const auto b = standardize(test::make_matrix(neg));
    CHECK((a.scores - b.scores).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("impute_column_means fills with the present mean") {
    auto m = two_columns({1, 2, 6}, {1, 1, 2});
    m.present(2, 0) = false;
    const auto f = impute_column_means(m);
    CHECK(f.complete());
    CHECK(f.scores(2, 0) == 1.5);
}

}  // TEST_SUITE
