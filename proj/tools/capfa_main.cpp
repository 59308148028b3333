// capfa command-line pipeline: ingest -> correlate -> select -> efa -> rotate
// -> bayes -> scores -> analyze -> report.

#include "capfa/error.hpp"
#include "capfa/pipeline.hpp"

#include <CLI11.hpp>

#include <functional>
#include <map>
#include <sstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

template <typename T>
std::string dflt(const T& v) {
    std::ostringstream os;
    os << " (default " << v << ")";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    const capfa::PipelineConfig defaults;
    CLI::App app{"capfa: latent capability factors from a systems x tasks benchmark table"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    app.footer(
        "Every tunable (EFA, rotation, MCMC priors, thresholds) can be set in the JSON file given by --config;\n"
        "run with --print-config to see all keys and their defaults. Flags override the file.\n"
        "Exit codes: 0 ok, 1 usage, 2 data, 3 numerical, 4 diagnostic (MCMC non-mixing).");

    std::optional<std::uint64_t> seed;
    std::optional<double> level;
    std::string config_path, out_dir;
    bool print_config = false;
    app.add_option("--seed", seed, "Seed for rotation starts, MCMC chains and synth" + dflt(defaults.seed));
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--out-dir", out_dir, "Output directory" + dflt(defaults.out_dir.string()));
    app.add_option("--confidence-level", level,
                   "Level of Fisher intervals, credible intervals and fit bands" + dflt(defaults.confidence_level))
        ->check(CLI::Range(0.5, 0.999));
    app.add_flag("--print-config", print_config, "Print the effective configuration as JSON and exit");

    std::string performance, tasks, metadata, method;
    std::optional<int> max_missing, min_pairs, k_max, k, iterations, burn_in, chains, n;
    std::optional<double> ridge;

    auto inputs = [&](CLI::App* sub) {
        sub->add_option("--performance", performance, "Score table CSV (system, task columns)");
        sub->add_option("--tasks", tasks, "Task-spec CSV (id, display_name, metric, direction, annotation)");
        sub->add_option("--metadata", metadata, "System metadata CSV (name, size_b, total_tokens, release_date, it, rlhf)");
        sub->add_option("--max-missing", max_missing, "Drop systems with more absent cells" + dflt(defaults.max_missing));
    };
    auto selection = [&](CLI::App* sub) {
        sub->add_option("--k-max", k_max, "Largest Hull candidate; 0 = min(largest identified k, 8)" + dflt(defaults.k_max));
    };
    auto efa = [&](CLI::App* sub) { sub->add_option("--k", k, "Force the number of factors instead of the Hull choice"); };
    auto bayes = [&](CLI::App* sub) {
        sub->add_option("--iterations", iterations, "MCMC iterations per chain" + dflt(defaults.bayes.iterations));
        sub->add_option("--burn-in", burn_in, "Discarded iterations per chain" + dflt(defaults.bayes.burn_in));
        sub->add_option("--chains", chains, "Independent chains" + dflt(defaults.bayes.chains));
    };
    auto rotation = [&](CLI::App* sub) {
        sub->add_option("--method", method, "Rotation: oblimin or varimax (default oblimin)")
            ->check(CLI::IsMember({"oblimin", "varimax"}));
    };

    std::map<std::string, std::function<void(const capfa::PipelineConfig&)>> stages{
        {"ingest", capfa::run_ingest},   {"correlate", capfa::run_correlate}, {"select", capfa::run_select},
        {"efa", capfa::run_efa},         {"rotate", capfa::run_rotate},       {"bayes", capfa::run_bayes},
        {"scores", capfa::run_scores},   {"analyze", capfa::run_analyze},     {"report", capfa::run_report},
        {"synth", capfa::run_synth},     {"full", capfa::run_full}};

    inputs(app.add_subcommand("ingest", "Load, filter, harmonize and standardize the score table"));
    app.add_subcommand("correlate", "Pairwise task correlation matrix")
        ->add_option("--min-pairs", min_pairs, "Minimum jointly observed systems per pair" + dflt(defaults.min_pairs));
    selection(app.add_subcommand("select", "Choose the number of factors (Hull method, scree)"));
    efa(app.add_subcommand("efa", "Maximum-likelihood factor extraction"));
    rotation(app.add_subcommand("rotate", "Oblique (oblimin) or orthogonal (varimax) rotation"));
    bayes(app.add_subcommand("bayes", "Bayesian dedicated-structure factor analysis"));
    app.add_subcommand("scores", "Regression factor scores per system")
        ->add_option("--ridge", ridge, "Ridge on the task correlation inverse" + dflt(defaults.score_ridge));
    app.add_subcommand("analyze", "Correlate factor scores with system characteristics");
    app.add_subcommand("report", "Tables, figures and the run manifest");
    app.add_subcommand("synth", "Write a synthetic dataset (performance, tasks, metadata CSVs)")
        ->add_option("--n", n, "Number of systems" + dflt(defaults.synth_n));
    auto* full = app.add_subcommand("full", "Run every stage in order");
    inputs(full);
    selection(full);
    efa(full);
    rotation(full);
    bayes(full);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        capfa::PipelineConfig cfg = config_path.empty() ? capfa::PipelineConfig{} : capfa::load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (level) cfg.confidence_level = *level;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!performance.empty()) cfg.performance = performance;
        if (!tasks.empty()) cfg.tasks = tasks;
        if (!metadata.empty()) cfg.metadata = metadata;
        if (max_missing) cfg.max_missing = *max_missing;
        if (min_pairs) cfg.min_pairs = *min_pairs;
        if (k_max) cfg.k_max = *k_max;
        if (k) cfg.forced_k = *k;
        if (!method.empty()) cfg.rotation = method == "varimax" ? capfa::RotationMethod::Varimax : capfa::RotationMethod::Oblimin;
        if (iterations) cfg.bayes.iterations = *iterations;
        if (burn_in) cfg.bayes.burn_in = *burn_in;
        if (chains) cfg.bayes.chains = *chains;
        if (ridge) cfg.score_ridge = *ridge;
        if (n) cfg.synth_n = *n;

        if (print_config) {
            std::cout << capfa::config_to_json(cfg).dump(2) << '\n';
            return 0;
        }
        const auto subs = app.get_subcommands();
        if (subs.empty()) {
            std::cout << app.help();
            return 1;
        }
        stages.at(subs.front()->get_name())(cfg);
    } catch (const capfa::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const capfa::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const capfa::NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const capfa::DiagnosticError& e) {
        std::cerr << "diagnostic failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
