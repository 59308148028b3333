#include "capfa/error.hpp"
#include "capfa/json_io.hpp"
#include "capfa/pipeline.hpp"

#include "support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <map>

using namespace capfa;
namespace fs = std::filesystem;

namespace {

// Synthetic inputs plus a configuration small enough for a unit test.
PipelineConfig small_config(const fs::path& dir) {
    PipelineConfig cfg;
    cfg.out_dir = dir / "data";
    cfg.synth_n = 80;
    cfg.synth_per_block = 4;
    cfg.seed = 7;
    run_synth(cfg);
    cfg.performance = cfg.out_dir / "performance.csv";
    cfg.tasks = cfg.out_dir / "tasks.csv";
    cfg.metadata = cfg.out_dir / "metadata.csv";
    cfg.out_dir = dir / "out";
    cfg.bayes.iterations = 600;
    cfg.bayes.burn_in = 200;
    cfg.bayes.chains = 2;
    return cfg;
}

// Short chains may be flagged as non-mixing; every output is still written.
void full_allowing_diagnostic(const PipelineConfig& cfg) {
    try {
        run_full(cfg);
    } catch (const DiagnosticError&) {
    }
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = test::read_text(e.path());
    return files;
}

int cli(const std::string& args) {
    const int status = std::system((std::string(CAPFA_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("a missing input is a data error named by its module") {
    const auto dir = test::scratch_dir("pipeline_missing");
    PipelineConfig cfg;
    cfg.out_dir = dir;
    cfg.performance = dir / "nope.csv";
    cfg.tasks = dir / "tasks.csv";
    write_task_specs(cfg.tasks, {{"t1", "Task 1", "em", Direction::HigherBetter, Annotation::Reasoning}});
    try {
        run_ingest(cfg);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).rfind("dataset: file not found", 0) == 0);
    }
}

TEST_CASE("stages need their predecessors") {
    const auto dir = test::scratch_dir("pipeline_order");
    PipelineConfig cfg;
    cfg.out_dir = dir;
    CHECK_THROWS_WITH_AS(run_correlate(cfg), doctest::Contains("ingest"), UsageError);
    CHECK_THROWS_AS(run_report(cfg), UsageError);
}

TEST_CASE("configuration keys are strict and round-trip") {
    PipelineConfig cfg;
    CHECK_THROWS_AS(apply_config_json(cfg, nlohmann::json{{"sede", 1}}), UsageError);
    CHECK_THROWS_AS(apply_config_json(cfg, nlohmann::json{{"bayes", {{"iters", 5}}}}), UsageError);
    CHECK_THROWS_AS(apply_config_json(cfg, nlohmann::json{{"seed", "x"}}), UsageError);
    CHECK_THROWS_AS(apply_config_json(cfg, nlohmann::json{{"rotate", {{"method", "promax"}}}}), UsageError);

    cfg.seed = 99;
    cfg.forced_k = 4;
    cfg.rotation = RotationMethod::Varimax;
    cfg.bayes.iterations = 1234;
    cfg.agreement_threshold = 0.25;
    PipelineConfig back;
    apply_config_json(back, config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
    CHECK(back.forced_k == 4);

    const auto dir = test::scratch_dir("pipeline_config");
    test::write_text(dir / "run.json", R"({"inputs": {"performance": "p.csv"}, "seed": 3})");
    const auto loaded = load_config(dir / "run.json");
    CHECK(loaded.performance == dir / "p.csv");
    CHECK(loaded.seed == 3);
    CHECK_THROWS_AS(load_config(dir / "absent.json"), UsageError);
}

TEST_CASE("full run writes the report and honours a forced k") {
    const auto dir = test::scratch_dir("pipeline_full");
    auto cfg = small_config(dir);
    full_allowing_diagnostic(cfg);
    const auto manifest = read_json(cfg.out_dir / "run_manifest.json");
    CHECK(manifest["results"]["k_override"] == false);
    CHECK(manifest["results"]["k_used"] == manifest["results"]["selected_k"]);
    CHECK(manifest["config"] == config_to_json(cfg));
    for (const char* f : {"tables/loadings.csv", "tables/variance_explained.csv", "tables/factor_correlations.csv",
                          "figures/loadings.svg", "figures/hull.svg", "figures/factor_scores.svg"})
        CHECK(fs::exists(cfg.out_dir / f));

    cfg.forced_k = 4;
    full_allowing_diagnostic(cfg);
    const auto forced = read_json(cfg.out_dir / "run_manifest.json");
    CHECK(forced["results"]["k_override"] == true);
    CHECK(forced["results"]["k_used"] == 4);
    CHECK(forced["results"]["selected_k"] == manifest["results"]["selected_k"]);
}

TEST_CASE("stagewise and full runs agree byte for byte; same seed, same bytes") {
    const auto dir = test::scratch_dir("pipeline_repro");
    auto cfg = small_config(dir);
    full_allowing_diagnostic(cfg);
    const auto first = snapshot(cfg.out_dir);
    full_allowing_diagnostic(cfg);
    CHECK(snapshot(cfg.out_dir) == first);

    cfg.out_dir = dir / "stagewise";
    run_ingest(cfg);
    run_correlate(cfg);
    run_select(cfg);
    run_efa(cfg);
    run_rotate(cfg);
    try {
        run_bayes(cfg);
    } catch (const DiagnosticError&) {
    }
    run_scores(cfg);
    run_analyze(cfg);
    run_report(cfg);
    auto staged = snapshot(cfg.out_dir);
    REQUIRE(staged.size() == first.size());
    for (const auto& [name, bytes] : first) {
        INFO(name);
        if (name == "run_manifest.json") continue;  // records out_dir
        CHECK(staged[name] == bytes);
    }
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
    const auto dir = test::scratch_dir("cli");
    CHECK(cli("") == 1);
    CHECK(cli("--bogus") == 1);
    CHECK(cli("--help") == 0);
    CHECK(cli("ingest --performance " + (dir / "none.csv").string() + " --tasks " + (dir / "none.csv").string()) == 2);
    CHECK(cli("--config " + (dir / "none.json").string() + " full") == 1);

    CHECK(cli("--out-dir " + (dir / "data").string() + " --seed 5 synth --n 60") == 0);
    const std::string in = " --performance " + (dir / "data" / "performance.csv").string() + " --tasks " +
                           (dir / "data" / "tasks.csv").string() + " --metadata " +
                           (dir / "data" / "metadata.csv").string();
    const std::string out = "--out-dir " + (dir / "out").string();
    // chains this short do not mix: the report is still written, exit code 4
    CHECK(cli(out + " full" + in + " --iterations 600 --burn-in 200") == 4);
    CHECK(fs::exists(dir / "out" / "run_manifest.json"));
    CHECK(cli(out + " full" + in + " --iterations 3000 --burn-in 1000") == 0);
    CHECK(cli(out + " efa --k 40") == 1);
}

}  // TEST_SUITE
