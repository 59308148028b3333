#include "capfa/pipeline.hpp"

#include "capfa/correlation.hpp"
#include "capfa/csv.hpp"
#include "capfa/dataset.hpp"
#include "capfa/error.hpp"
#include "capfa/factor_selection.hpp"
#include "capfa/json_io.hpp"
#include "capfa/report.hpp"
#include "capfa/scores_analysis.hpp"
#include "capfa/synth.hpp"

#include <boost/version.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace capfa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

fs::path work_dir(const PipelineConfig& cfg) { return cfg.out_dir / "work"; }

fs::path work_file(const PipelineConfig& cfg, const char* name) { return work_dir(cfg) / name; }

// Rethrows with the stage's module name prefixed, preserving the error class.
template <typename F>
void stage(const char* name, F&& f) {
    const std::string prefix = std::string(name) + ": ";
    auto msg = [&](const std::exception& e) {
        const std::string m = e.what();
        return m.rfind(prefix, 0) == 0 ? m : prefix + m;
    };
    try {
        f();
    } catch (const DiagnosticError& e) {
        throw DiagnosticError(msg(e));
    } catch (const DataError& e) {
        throw DataError(msg(e));
    } catch (const NumericalError& e) {
        throw NumericalError(msg(e));
    } catch (const UsageError& e) {
        throw UsageError(msg(e));
    } catch (const fs::filesystem_error& e) {
        throw DataError(msg(e));
    }
}

void require(const fs::path& path, const char* produced_by) {
    if (!fs::exists(path))
        throw UsageError("missing " + path.filename().string() + " (run '" + produced_by + "' first)");
}

int systems_in_work(const PipelineConfig& cfg) {
    const fs::path f = work_file(cfg, "ingest.json");
    require(f, "ingest");
    return read_json(f).at("systems_kept").get<int>();
}

std::string fnv1a(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "";
    std::uint64_t h = 1469598103934665603ull;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_scores_csv(const fs::path& path, const FactorScores& fs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    csv::Row header{"system"};
    for (Eigen::Index f = 0; f < fs.scores.cols(); ++f) header.push_back("F" + std::to_string(f + 1));
    out << csv::join(header) << '\n';
    for (Eigen::Index i = 0; i < fs.scores.rows(); ++i) {
        csv::Row row{fs.systems[static_cast<std::size_t>(i)]};
        for (Eigen::Index f = 0; f < fs.scores.cols(); ++f) row.push_back(csv::format_double(fs.scores(i, f)));
        out << csv::join(row) << '\n';
    }
}

FactorScores read_scores_csv(const fs::path& path, double ridge) {
    const auto rows = csv::read_file(path);
    if (rows.size() < 2) throw DataError("scores: no data rows in " + path.string());
    FactorScores fs;
    fs.ridge = ridge;
    const auto k = static_cast<Eigen::Index>(rows[0].size() - 1);
    fs.scores.resize(static_cast<Eigen::Index>(rows.size() - 1), k);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != k + 1) throw DataError("scores: wrong field count");
        fs.systems.push_back(rows[r][0]);
        for (Eigen::Index f = 0; f < k; ++f) {
            bool ok = false;
            fs.scores(static_cast<Eigen::Index>(r - 1), f) = csv::parse_double(rows[r][static_cast<std::size_t>(f + 1)], ok);
            if (!ok) throw DataError("scores: non-numeric cell");
        }
    }
    return fs;
}

void write_characteristics_csv(const fs::path& path, const std::vector<CharacteristicCorrelation>& corrs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "characteristic,factor,r,ci_lo,ci_hi,n,dropped\n";
    for (const auto& c : corrs)
        out << csv::join({to_string(c.characteristic), std::to_string(c.factor + 1), csv::format_double(c.r),
                          csv::format_double(c.ci.lo), csv::format_double(c.ci.hi), std::to_string(c.n),
                          std::to_string(c.dropped)})
            << '\n';
}

std::vector<CharacteristicCorrelation> read_characteristics_csv(const fs::path& path) {
    const auto rows = csv::read_file(path);
    std::vector<CharacteristicCorrelation> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != 7) throw DataError("characteristics: wrong field count");
        CharacteristicCorrelation c;
        if (row[0] == "log_size") c.characteristic = Characteristic::LogSize;
        else if (row[0] == "instruction_tuned") c.characteristic = Characteristic::InstructionTuned;
        else if (row[0] == "total_tokens") c.characteristic = Characteristic::TotalTokens;
        else throw DataError("characteristics: unknown characteristic '" + row[0] + "'");
        bool ok1 = false, ok2 = false, ok3 = false;
        c.factor = std::stoi(row[1]) - 1;
        c.r = csv::parse_double(row[2], ok1);
        c.ci.lo = csv::parse_double(row[3], ok2);
        c.ci.hi = csv::parse_double(row[4], ok3);
        if (!ok1 || !ok2 || !ok3) throw DataError("characteristics: non-numeric cell");
        c.n = std::stoi(row[5]);
        c.dropped = std::stoi(row[6]);
        out.push_back(c);
    }
    return out;
}

RotatedSolution single_factor(const UnrotatedSolution& s) {
    RotatedSolution rs;
    rs.labels = s.labels;
    rs.pattern = s.loadings;
    rs.phi = Eigen::MatrixXd::Identity(1, 1);
    rs.structure = rs.pattern;
    rs.uniquenesses = s.uniquenesses;
    canonicalize(rs);
    return rs;
}

// Typed field access that reports the offending key as a usage error.
template <typename T>
T get(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw UsageError("config: bad value for '" + key + "'");
    }
}

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw UsageError("config: '" + section + "' must be an object");
    for (const auto& [key, v] : j.items()) {
        (void)v;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw UsageError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    }
}

}  // namespace

json config_to_json(const PipelineConfig& cfg) {
    const auto& b = cfg.bayes;
    return {
        {"inputs", {{"performance", cfg.performance.string()}, {"tasks", cfg.tasks.string()}, {"metadata", cfg.metadata.string()}}},
        {"out_dir", cfg.out_dir.string()},
        {"seed", cfg.seed},
        {"confidence_level", cfg.confidence_level},
        {"ingest", {{"max_missing", cfg.max_missing}}},
        {"correlate", {{"min_pairs", cfg.min_pairs}}},
        {"select", {{"k_max", cfg.k_max}}},
        {"efa",
         {{"k", cfg.forced_k ? json(*cfg.forced_k) : json(nullptr)},
          {"psi_floor", cfg.efa.psi_floor},
          {"ridge", cfg.efa.ridge},
          {"tolerance", cfg.efa.tolerance},
          {"max_iterations", cfg.efa.max_iterations},
          {"bartlett", cfg.efa.bartlett}}},
        {"rotate",
         {{"method", to_string(cfg.rotation)},
          {"gamma", cfg.rotation_options.gamma},
          {"restarts", cfg.rotation_options.restarts},
          {"tolerance", cfg.rotation_options.tolerance},
          {"max_iterations", cfg.rotation_options.max_iterations}}},
        {"bayes",
         {{"k_max", b.k_max},
          {"iterations", b.iterations},
          {"burn_in", b.burn_in},
          {"chains", b.chains},
          {"thin", b.thin},
          {"prior_loading_variance", b.prior_loading_variance},
          {"uniqueness_shape", b.uniqueness_shape},
          {"uniqueness_scale", b.uniqueness_scale},
          {"assignment_concentration", b.assignment_concentration},
          {"omega_extra_dof", b.omega_extra_dof},
          {"assignment_threshold", b.assignment_threshold},
          {"rhat_limit", b.rhat_limit}}},
        {"scores", {{"ridge", cfg.score_ridge}}},
        {"compare", {{"threshold", cfg.agreement_threshold}}},
        {"synth",
         {{"n", cfg.synth_n}, {"blocks", cfg.synth_blocks}, {"per_block", cfg.synth_per_block}, {"loading", cfg.synth_loading}}}};
}

void apply_config_json(PipelineConfig& cfg, const json& j, const fs::path& base_dir) {
    check_keys(j, "", {"inputs", "out_dir", "seed", "confidence_level", "ingest", "correlate", "select", "efa", "rotate",
                       "bayes", "scores", "compare", "synth"});
    auto path_of = [&](const json& v, const std::string& key) {
        fs::path p = get<std::string>(v, key);
        if (!p.empty() && p.is_relative() && !base_dir.empty()) p = base_dir / p;
        return p;
    };
    if (j.contains("inputs")) {
        const auto& in = j["inputs"];
        check_keys(in, "inputs", {"performance", "tasks", "metadata"});
        if (in.contains("performance")) cfg.performance = path_of(in["performance"], "inputs.performance");
        if (in.contains("tasks")) cfg.tasks = path_of(in["tasks"], "inputs.tasks");
        if (in.contains("metadata")) cfg.metadata = path_of(in["metadata"], "inputs.metadata");
    }
    if (j.contains("out_dir")) cfg.out_dir = path_of(j["out_dir"], "out_dir");
    if (j.contains("seed")) cfg.seed = get<std::uint64_t>(j["seed"], "seed");
    if (j.contains("confidence_level")) cfg.confidence_level = get<double>(j["confidence_level"], "confidence_level");
    if (j.contains("ingest")) {
        check_keys(j["ingest"], "ingest", {"max_missing"});
        if (j["ingest"].contains("max_missing")) cfg.max_missing = get<int>(j["ingest"]["max_missing"], "ingest.max_missing");
    }
    if (j.contains("correlate")) {
        check_keys(j["correlate"], "correlate", {"min_pairs"});
        if (j["correlate"].contains("min_pairs")) cfg.min_pairs = get<int>(j["correlate"]["min_pairs"], "correlate.min_pairs");
    }
    if (j.contains("select")) {
        check_keys(j["select"], "select", {"k_max"});
        if (j["select"].contains("k_max")) cfg.k_max = get<int>(j["select"]["k_max"], "select.k_max");
    }
    if (j.contains("efa")) {
        const auto& e = j["efa"];
        check_keys(e, "efa", {"k", "psi_floor", "ridge", "tolerance", "max_iterations", "bartlett"});
        if (e.contains("k")) {
            if (e["k"].is_null()) cfg.forced_k.reset();
            else cfg.forced_k = get<int>(e["k"], "efa.k");
        }
        if (e.contains("psi_floor")) cfg.efa.psi_floor = get<double>(e["psi_floor"], "efa.psi_floor");
        if (e.contains("ridge")) cfg.efa.ridge = get<double>(e["ridge"], "efa.ridge");
        if (e.contains("tolerance")) cfg.efa.tolerance = get<double>(e["tolerance"], "efa.tolerance");
        if (e.contains("max_iterations")) cfg.efa.max_iterations = get<int>(e["max_iterations"], "efa.max_iterations");
        if (e.contains("bartlett")) cfg.efa.bartlett = get<bool>(e["bartlett"], "efa.bartlett");
    }
    if (j.contains("rotate")) {
        const auto& r = j["rotate"];
        check_keys(r, "rotate", {"method", "gamma", "restarts", "tolerance", "max_iterations"});
        if (r.contains("method")) {
            const auto m = get<std::string>(r["method"], "rotate.method");
            if (m == "oblimin") cfg.rotation = RotationMethod::Oblimin;
            else if (m == "varimax") cfg.rotation = RotationMethod::Varimax;
            else throw UsageError("config: rotate.method must be 'oblimin' or 'varimax'");
        }
        if (r.contains("gamma")) cfg.rotation_options.gamma = get<double>(r["gamma"], "rotate.gamma");
        if (r.contains("restarts")) cfg.rotation_options.restarts = get<int>(r["restarts"], "rotate.restarts");
        if (r.contains("tolerance")) cfg.rotation_options.tolerance = get<double>(r["tolerance"], "rotate.tolerance");
        if (r.contains("max_iterations"))
            cfg.rotation_options.max_iterations = get<int>(r["max_iterations"], "rotate.max_iterations");
    }
    if (j.contains("bayes")) {
        const auto& b = j["bayes"];
        check_keys(b, "bayes", {"k_max", "iterations", "burn_in", "chains", "thin", "prior_loading_variance",
                                "uniqueness_shape", "uniqueness_scale", "assignment_concentration", "omega_extra_dof",
                                "assignment_threshold", "rhat_limit"});
        auto& c = cfg.bayes;
        if (b.contains("k_max")) c.k_max = get<int>(b["k_max"], "bayes.k_max");
        if (b.contains("iterations")) c.iterations = get<int>(b["iterations"], "bayes.iterations");
        if (b.contains("burn_in")) c.burn_in = get<int>(b["burn_in"], "bayes.burn_in");
        if (b.contains("chains")) c.chains = get<int>(b["chains"], "bayes.chains");
        if (b.contains("thin")) c.thin = get<int>(b["thin"], "bayes.thin");
        if (b.contains("prior_loading_variance"))
            c.prior_loading_variance = get<double>(b["prior_loading_variance"], "bayes.prior_loading_variance");
        if (b.contains("uniqueness_shape")) c.uniqueness_shape = get<double>(b["uniqueness_shape"], "bayes.uniqueness_shape");
        if (b.contains("uniqueness_scale")) c.uniqueness_scale = get<double>(b["uniqueness_scale"], "bayes.uniqueness_scale");
        if (b.contains("assignment_concentration"))
            c.assignment_concentration = get<double>(b["assignment_concentration"], "bayes.assignment_concentration");
        if (b.contains("omega_extra_dof")) c.omega_extra_dof = get<double>(b["omega_extra_dof"], "bayes.omega_extra_dof");
        if (b.contains("assignment_threshold"))
            c.assignment_threshold = get<double>(b["assignment_threshold"], "bayes.assignment_threshold");
        if (b.contains("rhat_limit")) c.rhat_limit = get<double>(b["rhat_limit"], "bayes.rhat_limit");
    }
    if (j.contains("scores")) {
        check_keys(j["scores"], "scores", {"ridge"});
        if (j["scores"].contains("ridge")) cfg.score_ridge = get<double>(j["scores"]["ridge"], "scores.ridge");
    }
    if (j.contains("compare")) {
        check_keys(j["compare"], "compare", {"threshold"});
        if (j["compare"].contains("threshold"))
            cfg.agreement_threshold = get<double>(j["compare"]["threshold"], "compare.threshold");
    }
    if (j.contains("synth")) {
        const auto& s = j["synth"];
        check_keys(s, "synth", {"n", "blocks", "per_block", "loading"});
        if (s.contains("n")) cfg.synth_n = get<int>(s["n"], "synth.n");
        if (s.contains("blocks")) cfg.synth_blocks = get<int>(s["blocks"], "synth.blocks");
        if (s.contains("per_block")) cfg.synth_per_block = get<int>(s["per_block"], "synth.per_block");
        if (s.contains("loading")) cfg.synth_loading = get<double>(s["loading"], "synth.loading");
    }
}

PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw UsageError("config: file not found: " + path.string());
    json j;
    try {
        j = read_json(path);
    } catch (const DataError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    PipelineConfig cfg;
    apply_config_json(cfg, j, path.parent_path());
    return cfg;
}

void run_ingest(const PipelineConfig& cfg) {
    stage("dataset", [&] {
        if (cfg.performance.empty()) throw UsageError("no performance file given (--performance or inputs.performance)");
        if (cfg.tasks.empty()) throw UsageError("no task-spec file given (--tasks or inputs.tasks)");
        const auto specs = load_task_specs(cfg.tasks);
        const PerformanceMatrix raw = load_performance_matrix(cfg.performance, specs);
        std::vector<SystemMetadata> meta;
        if (!cfg.metadata.empty()) meta = load_system_metadata(cfg.metadata);

        const PerformanceMatrix kept = filter_systems(raw, cfg.max_missing);
        const PerformanceMatrix z = standardize(harmonize_directions(kept, specs));
        const PerformanceMatrix imputed = impute_column_means(z);

        fs::create_directories(work_dir(cfg));
        write_performance_matrix(work_file(cfg, "standardized.csv"), z);
        write_performance_matrix(work_file(cfg, "imputed.csv"), imputed);
        std::vector<TaskSpec> used;
        for (const auto& t : z.tasks) used.push_back(*find_task(specs, t));
        write_task_specs(work_file(cfg, "tasks.csv"), used);
        if (!cfg.metadata.empty()) write_system_metadata(work_file(cfg, "metadata.csv"), meta);
        else fs::remove(work_file(cfg, "metadata.csv"));

        std::set<std::string> survivors(kept.systems.begin(), kept.systems.end());
        std::vector<std::string> dropped;
        for (const auto& s : raw.systems)
            if (!survivors.count(s)) dropped.push_back(s);
        write_json(work_file(cfg, "ingest.json"), {{"systems_in", raw.n_systems()},
                                                   {"systems_kept", kept.n_systems()},
                                                   {"dropped_systems", dropped},
                                                   {"tasks", z.n_tasks()},
                                                   {"missing_cells", (!z.present.array()).count()}});
    });
}

void run_correlate(const PipelineConfig& cfg) {
    stage("correlation", [&] {
        require(work_file(cfg, "standardized.csv"), "ingest");
        const PerformanceMatrix z = load_performance_matrix(work_file(cfg, "standardized.csv"));
        CorrelationMatrix c = nearest_psd(correlation_matrix(z, cfg.min_pairs));
        const CorrelationSummary s = summarize(c);
        write_correlation_csv(work_file(cfg, "correlation.csv"), c);
        write_json(work_file(cfg, "correlation.json"), {{"n_systems", z.n_systems()},
                                                        {"mean_r", s.mean_r},
                                                        {"median_r", s.median_r},
                                                        {"min_pairs", c.n_pairs.minCoeff()},
                                                        {"psd_repaired", c.psd_repaired}});
    });
}

void run_select(const PipelineConfig& cfg) {
    stage("factor_selection", [&] {
        require(work_file(cfg, "correlation.csv"), "correlate");
        const CorrelationMatrix c = load_correlation_csv(work_file(cfg, "correlation.csv"));
        const int n = systems_in_work(cfg);
        const int k_max = cfg.k_max > 0 ? cfg.k_max : default_hull_k_max(static_cast<int>(c.size()));
        const HullResult h = hull_method(c, n, k_max, cfg.efa);
        const Eigen::VectorXd eigs = eigenvalues(c);
        json ev = json::array();
        for (Eigen::Index i = 0; i < eigs.size(); ++i) ev.push_back(eigs(i));
        write_json(work_file(cfg, "selection.json"), {{"k_max", k_max},
                                                      {"hull", to_json(h)},
                                                      {"eigenvalues", ev},
                                                      {"scree_count", scree_count(eigs)},
                                                      {"selected_k", h.selected_k}});
    });
}

void run_efa(const PipelineConfig& cfg) {
    stage("efa", [&] {
        require(work_file(cfg, "correlation.csv"), "correlate");
        const CorrelationMatrix c = load_correlation_csv(work_file(cfg, "correlation.csv"));
        const int n = systems_in_work(cfg);
        std::optional<int> selected;
        if (fs::exists(work_file(cfg, "selection.json")))
            selected = read_json(work_file(cfg, "selection.json")).at("selected_k").get<int>();
        if (!cfg.forced_k && !selected) require(work_file(cfg, "selection.json"), "select");
        const int k = cfg.forced_k ? *cfg.forced_k : *selected;
        if (k < 1) throw DataError("selected k = " + std::to_string(k) + "; no common factor to extract");
        const UnrotatedSolution s = ml_efa(c, k, n, cfg.efa);
        write_json(work_file(cfg, "efa.json"), {{"k_source", cfg.forced_k ? "forced" : "hull"},
                                                {"selected_k", selected ? json(*selected) : json(nullptr)},
                                                {"solution", to_json(s)}});
    });
}

void run_rotate(const PipelineConfig& cfg) {
    stage("rotation", [&] {
        require(work_file(cfg, "efa.json"), "efa");
        const UnrotatedSolution s = unrotated_from_json(read_json(work_file(cfg, "efa.json")).at("solution"));
        RotationOptions opt = cfg.rotation_options;
        opt.seed = cfg.seed;
        RotatedSolution rs;
        if (s.k == 1) rs = single_factor(s);
        else if (cfg.rotation == RotationMethod::Oblimin) rs = rotate_oblimin(s, opt);
        else rs = rotate_varimax(s, opt);
        const VarianceTable v = variance_explained(rs.pattern, rs.phi);
        json prop = json::array(), cum = json::array();
        for (Eigen::Index j = 0; j < v.proportion.size(); ++j) {
            prop.push_back(v.proportion(j));
            cum.push_back(v.cumulative(j));
        }
        write_json(work_file(cfg, "rotated.json"),
                   {{"solution", to_json(rs)}, {"variance", {{"proportion", prop}, {"cumulative", cum}}}});
    });
}

void run_bayes(const PipelineConfig& cfg) {
    stage("bayes_efa", [&] {
        require(work_file(cfg, "imputed.csv"), "ingest");
        const PerformanceMatrix z = load_performance_matrix(work_file(cfg, "imputed.csv"));
        BayesConfig bc = cfg.bayes;
        bc.seed = cfg.seed;
        bc.credible_level = cfg.confidence_level;
        const BayesPosterior bp = bayes_efa(z, bc);
        write_json(work_file(cfg, "bayes.json"), to_json(bp));
        if (bp.diagnostics.non_mixing)
            throw DiagnosticError("chains did not mix (split R-hat on k = " +
                                  report::format_fixed(bp.diagnostics.split_rhat.at("k"), 3) + " > " +
                                  report::format_fixed(bc.rhat_limit, 2) + ")");
    });
}

void run_scores(const PipelineConfig& cfg) {
    stage("scores_analysis", [&] {
        require(work_file(cfg, "rotated.json"), "rotate");
        require(work_file(cfg, "imputed.csv"), "ingest");
        const RotatedSolution rs = rotated_from_json(read_json(work_file(cfg, "rotated.json")).at("solution"));
        const PerformanceMatrix z = load_performance_matrix(work_file(cfg, "imputed.csv"));
        write_scores_csv(work_file(cfg, "scores.csv"), factor_scores(rs, z, cfg.score_ridge));
    });
}

void run_analyze(const PipelineConfig& cfg) {
    stage("scores_analysis", [&] {
        require(work_file(cfg, "scores.csv"), "scores");
        if (!fs::exists(work_file(cfg, "metadata.csv")))
            throw UsageError("no system metadata was ingested (inputs.metadata / --metadata)");
        const FactorScores fs = read_scores_csv(work_file(cfg, "scores.csv"), cfg.score_ridge);
        const auto meta = load_system_metadata(work_file(cfg, "metadata.csv"));
        write_characteristics_csv(work_file(cfg, "characteristics.csv"),
                                  correlate_with_characteristics(fs, meta, cfg.confidence_level));
    });
}

void run_report(const PipelineConfig& cfg) {
    stage("report", [&] {
        for (const char* f : {"correlation.csv", "correlation.json", "selection.json", "efa.json", "rotated.json",
                              "bayes.json", "scores.csv"})
            require(work_file(cfg, f), "full");
        const fs::path out = cfg.out_dir;
        fs::create_directories(out / "tables");
        fs::create_directories(out / "figures");

        const auto specs = load_task_specs(work_file(cfg, "tasks.csv"));
        const CorrelationMatrix c = load_correlation_csv(work_file(cfg, "correlation.csv"));
        const json corr_info = read_json(work_file(cfg, "correlation.json"));
        const json selection = read_json(work_file(cfg, "selection.json"));
        const json efa = read_json(work_file(cfg, "efa.json"));
        const json rotated = read_json(work_file(cfg, "rotated.json"));
        const UnrotatedSolution s = unrotated_from_json(efa.at("solution"));
        const RotatedSolution rs = rotated_from_json(rotated.at("solution"));
        const HullResult hull = hull_from_json(selection.at("hull"));
        const BayesPosterior bp = bayes_from_json(read_json(work_file(cfg, "bayes.json")));
        const FactorScores scores = read_scores_csv(work_file(cfg, "scores.csv"), cfg.score_ridge);
        const int n = systems_in_work(cfg);
        const bool have_meta = fs::exists(work_file(cfg, "metadata.csv"));
        const bool have_chars = fs::exists(work_file(cfg, "characteristics.csv"));
        const std::vector<CharacteristicCorrelation> chars =
            have_chars ? read_characteristics_csv(work_file(cfg, "characteristics.csv"))
                       : std::vector<CharacteristicCorrelation>{};

        const auto names = report::factor_names(rs, specs);
        report::write_table(out / "tables" / "correlation_summary.csv",
                            {{"mean_r", "median_r"},
                             {report::format_fixed(corr_info.at("mean_r").get<double>()),
                              report::format_fixed(corr_info.at("median_r").get<double>())}});
        report::render_correlation_heatmap(out, c);
        std::vector<double> ev = selection.at("eigenvalues").get<std::vector<double>>();
        report::render_scree(out, Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size())));
        report::render_hull(out, hull);

        const FitIndices fi = fit_indices(s);
        report::write_table(out / "tables" / "fit_indices.csv",
                            {{"k", "chi2", "df", "cfi", "tli", "rmsea"},
                             {std::to_string(s.k), report::format_fixed(fi.chi2), std::to_string(fi.df),
                              report::format_fixed(fi.cfi), report::format_fixed(fi.tli),
                              report::format_fixed(fi.rmsea)}});
        report::render_tables(out, variance_explained(rs.pattern, rs.phi), rs.phi, n, chars, names,
                              cfg.confidence_level);
        report::render_loading_heatmap(out, bp, rs, specs, names);
        report::render_k_posterior(out, bp);

        std::vector<std::vector<std::string>> assign{{"task", "modal_factor", "modal_mass", "loading"}};
        for (std::size_t j = 0; j < bp.tasks.size(); ++j) {
            const auto& t = bp.tasks[j];
            assign.push_back({bp.labels[j], t.modal_factor ? "B" + std::to_string(t.modal_factor) : "unassigned",
                              report::format_fixed(t.modal_mass),
                              t.modal_factor ? report::format_ci_cell(t.loading_mean, {t.loading_lo, t.loading_hi}) : ""});
        }
        report::write_table(out / "tables" / "bayes_assignments.csv", assign);

        int sort_factor = 0;
        for (std::size_t f = 0; f < names.size(); ++f)
            if (names[f].find("(Reasoning)") != std::string::npos) {
                sort_factor = static_cast<int>(f);
                break;
            }
        report::render_scores(out, scores, names, sort_factor);
        std::vector<SystemMetadata> meta;
        if (have_meta) {
            meta = load_system_metadata(work_file(cfg, "metadata.csv"));
            report::render_size_scatter(out, scores, meta, names, cfg.confidence_level);
        }

        const AgreementReport agreement = compare_with_frequentist(bp, rs, cfg.agreement_threshold);
        json disagreements = json::array();
        for (const auto& d : agreement.disagreements)
            disagreements.push_back(
                {{"task", d.task}, {"bayes_factor", d.bayes_factor}, {"frequentist_factor", d.frequentist_factor}});

        json inputs = json::object();
        for (const auto& [key, path] : {std::pair<const char*, fs::path>{"performance", cfg.performance},
                                        {"tasks", cfg.tasks},
                                        {"metadata", cfg.metadata}})
            if (!path.empty()) inputs[key] = {{"path", path.string()}, {"fnv1a64", fnv1a(path)}};

        std::vector<std::string> outputs;
        for (const char* sub : {"tables", "figures"})
            for (const auto& e : fs::directory_iterator(out / sub)) outputs.push_back(std::string(sub) + "/" + e.path().filename().string());
        outputs.push_back("run_manifest.json");
        std::sort(outputs.begin(), outputs.end());

        const std::string k_source = efa.at("k_source").get<std::string>();
        json manifest = {
            {"tool", "capfa"},
            {"versions",
             {{"capfa", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"boost", BOOST_LIB_VERSION},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
            {"inputs", inputs},
            {"seed", cfg.seed},
            {"config", config_to_json(cfg)},
            {"decisions",
             {{"correlation", "pairwise deletion; Fisher z confidence intervals; eigenvalue-clip PSD repair when needed"},
              {"efa_ridge", "C + ridge*I rescaled to unit diagonal when n <= p or min eigenvalue < ridge"},
              {"heywood", "uniquenesses bounded below by psi_floor; loading rows rescaled so communality + psi = 1"},
              {"fit", "Bartlett-corrected chi-square; RMSEA = sqrt(max(chi2 - df, 0) / (df (n - 1)))"},
              {"hull", "f = 1 - RMSEA over k = 0..k_max; strictly increasing fit required; scree fallback"},
              {"rotation", "gradient projection from identity plus random orthonormal starts; no Kaiser normalization"},
              {"bayes", "dedicated-structure model with null slot, collapsed reassignment and split-merge moves"},
              {"scores", "regression scores with ridge-regularized task correlation inverse"}}},
            {"results",
             {{"n_systems", n},
              {"n_tasks", static_cast<int>(rs.labels.size())},
              {"selected_k", selection.at("selected_k")},
              {"hull_fallback_to_scree", hull.fallback_to_scree},
              {"scree_count", selection.at("scree_count")},
              {"k_used", s.k},
              {"k_source", k_source},
              {"k_override", k_source == "forced"},
              {"ridge_applied", s.ridge_applied},
              {"psd_repaired", corr_info.at("psd_repaired")},
              {"bayes_modal_k", bp.modal_k},
              {"bayes_non_mixing", bp.diagnostics.non_mixing},
              {"bayes_split_rhat_k", bp.diagnostics.split_rhat.count("k") ? json(bp.diagnostics.split_rhat.at("k")) : json(nullptr)},
              {"agreement", agreement.agreement},
              {"disagreements", disagreements},
              {"factor_names", names}}},
            {"outputs", outputs}};
        write_json(out / "run_manifest.json", manifest);
    });
}

void run_synth(const PipelineConfig& cfg) {
    stage("synth", [&] {
        if (cfg.synth_blocks < 1 || cfg.synth_per_block < 2) throw UsageError("need >= 1 block of >= 2 tasks");
        GroundTruth gt;
        if (cfg.synth_blocks == 3) {
            Eigen::MatrixXd phi(3, 3);
            phi << 1.0, 0.43, 0.51, 0.43, 1.0, 0.22, 0.51, 0.22, 1.0;
            gt = block_ground_truth(3, cfg.synth_per_block, cfg.synth_loading, phi, cfg.synth_n, cfg.seed);
        } else {
            Eigen::MatrixXd phi = Eigen::MatrixXd::Constant(cfg.synth_blocks, cfg.synth_blocks, 0.3);
            phi.diagonal().setOnes();
            gt = block_ground_truth(cfg.synth_blocks, cfg.synth_per_block, cfg.synth_loading, phi, cfg.synth_n, cfg.seed);
        }
        Eigen::MatrixXd latent;
        const PerformanceMatrix m = generate(gt, latent);

        static constexpr Annotation kCycle[] = {Annotation::Comprehension, Annotation::LanguageModeling,
                                                Annotation::Reasoning, Annotation::Knowledge, Annotation::Mixed,
                                                Annotation::Other};
        std::vector<TaskSpec> specs;
        for (std::size_t j = 0; j < m.tasks.size(); ++j) {
            const auto block = static_cast<std::size_t>(j) / static_cast<std::size_t>(cfg.synth_per_block);
            specs.push_back({m.tasks[j], "Task " + m.tasks[j].substr(1), "score", Direction::HigherBetter,
                             kCycle[block % std::size(kCycle)]});
        }

        // Characteristics loosely tied to the latent factors so the analysis
        // stage has signal to find.
        std::mt19937_64 rng(cfg.seed ^ 0x5deece66dull);
        std::normal_distribution<double> normal;
        std::vector<SystemMetadata> meta;
        const Eigen::Index last = latent.cols() - 1;
        for (Eigen::Index i = 0; i < latent.rows(); ++i) {
            SystemMetadata md;
            md.name = m.systems[static_cast<std::size_t>(i)];
            md.size_b = std::exp(2.5 + 1.5 * (0.7 * latent(i, 0) + 0.7 * normal(rng)));
            md.instruction_tuned = 0.7 * latent(i, last) + 0.7 * normal(rng) > 0.3;
            md.rlhf = md.instruction_tuned;
            const double tokens = 3e11 * std::exp(0.25 * normal(rng));
            if (i % 3 != 2) md.total_tokens = tokens;
            md.release_date = Date{2022, 1, 1};
            meta.push_back(md);
        }

        fs::create_directories(cfg.out_dir);
        write_performance_matrix(cfg.out_dir / "performance.csv", m);
        write_task_specs(cfg.out_dir / "tasks.csv", specs);
        write_system_metadata(cfg.out_dir / "metadata.csv", meta);
    });
}

void run_full(const PipelineConfig& cfg) {
    run_ingest(cfg);
    run_correlate(cfg);
    run_select(cfg);
    run_efa(cfg);
    run_rotate(cfg);
    std::optional<DiagnosticError> diagnostic;
    try {
        run_bayes(cfg);
    } catch (const DiagnosticError& e) {
        diagnostic = e;
    }
    run_scores(cfg);
    if (fs::exists(work_file(cfg, "metadata.csv"))) run_analyze(cfg);
    else fs::remove(work_file(cfg, "characteristics.csv"));
    run_report(cfg);
    if (diagnostic) throw *diagnostic;
}

}  // namespace capfa
