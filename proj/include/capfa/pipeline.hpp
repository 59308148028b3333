#pragma once

#include "capfa/bayes_efa.hpp"
#include "capfa/efa.hpp"
#include "capfa/rotation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace capfa {

// Every tunable of the pipeline. Loaded from a JSON file, overridden by CLI
// flags, and echoed verbatim into the run manifest.
struct PipelineConfig {
    std::filesystem::path performance;   // inputs for ingest
    std::filesystem::path tasks;
    std::filesystem::path metadata;      // optional; analyze/report need it
    std::filesystem::path out_dir = "capfa_out";
    std::uint64_t seed = 42;
    double confidence_level = 0.95;

    int max_missing = 2;
    int min_pairs = 3;
    int k_max = 0;              // Hull candidates; 0 = min(largest identified k, 8)
    double scree_cutoff = 1.0;
    std::optional<int> forced_k;

    EfaOptions efa;
    RotationMethod rotation = RotationMethod::Oblimin;
    RotationOptions rotation_options;
    BayesConfig bayes;
    double score_ridge = 1e-4;
    double agreement_threshold = 0.3;

    int synth_n = 29;
    int synth_blocks = 3;
    int synth_per_block = 9;
    double synth_loading = 0.7;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);

// Overlays the keys present in j onto cfg; unknown keys are a UsageError.
// Relative input paths resolve against base_dir.
void apply_config_json(PipelineConfig& cfg, const nlohmann::json& j, const std::filesystem::path& base_dir = {});

PipelineConfig load_config(const std::filesystem::path& path);

// Stages read and write <out_dir>/work; tables and figures go to
// <out_dir>/tables and <out_dir>/figures. Failures are rethrown with the
// stage's module name prefixed ("dataset: file not found: ...").
void run_ingest(const PipelineConfig& cfg);
void run_correlate(const PipelineConfig& cfg);
void run_select(const PipelineConfig& cfg);
void run_efa(const PipelineConfig& cfg);
void run_rotate(const PipelineConfig& cfg);
// Writes the posterior, then throws DiagnosticError if the chains did not mix.
void run_bayes(const PipelineConfig& cfg);
void run_scores(const PipelineConfig& cfg);
void run_analyze(const PipelineConfig& cfg);
void run_report(const PipelineConfig& cfg);

// Synthetic performance.csv, tasks.csv and metadata.csv in out_dir.
void run_synth(const PipelineConfig& cfg);

// All stages in order. A non-mixing Bayesian stage does not stop the run; the
// DiagnosticError is rethrown after the report is written.
void run_full(const PipelineConfig& cfg);

}  // namespace capfa
