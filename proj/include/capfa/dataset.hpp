#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace capfa {

enum class Direction { HigherBetter, LowerBetter };

// Primary cognitive demand of a task, used to interpret extracted factors.
enum class Annotation { Comprehension, LanguageModeling, Reasoning, Knowledge, Mixed, Other };

std::string to_string(Direction d);
std::string to_string(Annotation a);
Direction parse_direction(const std::string& text);
Annotation parse_annotation(const std::string& text);

struct TaskSpec {
    std::string id;
    std::string display_name;
    std::string metric_name;
    Direction direction = Direction::HigherBetter;
    Annotation annotation = Annotation::Other;
};

struct Date {
    int year = 0;
    int month = 0;
    int day = 0;
    bool operator==(const Date&) const = default;
};

struct SystemMetadata {
    std::string name;
    double size_b = 0.0;                      // billions of parameters
    std::optional<double> total_tokens;       // nullopt = unknown ("?")
    std::optional<Date> release_date;
    std::optional<bool> instruction_tuned;
    std::optional<bool> rlhf;
};

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Systems x tasks score table. Absent cells are marked in `present`; the
// corresponding `scores` entry is unspecified (0 after loading).
struct PerformanceMatrix {
    std::vector<std::string> systems;
    std::vector<std::string> tasks;
    Eigen::MatrixXd scores;
    BoolMatrix present;
    bool harmonized = false;

    Eigen::Index n_systems() const { return scores.rows(); }
    Eigen::Index n_tasks() const { return scores.cols(); }
    bool complete() const { return present.all(); }
    Eigen::Index missing_in_row(Eigen::Index i) const;
};

std::vector<TaskSpec> load_task_specs(const std::filesystem::path& path);
void write_task_specs(const std::filesystem::path& path, const std::vector<TaskSpec>& specs);

// First column "system", remaining columns task ids; empty cell (or NA) = missing.
PerformanceMatrix load_performance_matrix(const std::filesystem::path& path,
                                          const std::vector<TaskSpec>& task_specs);

// Same parser without a task-spec check; used for intermediate pipeline files.
PerformanceMatrix load_performance_matrix(const std::filesystem::path& path);

void write_performance_matrix(const std::filesystem::path& path, const PerformanceMatrix& m);

std::vector<SystemMetadata> load_system_metadata(const std::filesystem::path& path);
void write_system_metadata(const std::filesystem::path& path,
                           const std::vector<SystemMetadata>& meta);

// Drops rows with more than `max_missing` absent cells; survivors keep their order.
PerformanceMatrix filter_systems(const PerformanceMatrix& m, int max_missing = 2);

// Negates LowerBetter columns so every task reads "higher = more able".
PerformanceMatrix harmonize_directions(const PerformanceMatrix& m,
                                       const std::vector<TaskSpec>& task_specs);

// Column z-scores over present cells (sample standard deviation).
PerformanceMatrix standardize(const PerformanceMatrix& m);

// Fills absent cells with the column mean of present cells (0 for z-scored data).
PerformanceMatrix impute_column_means(const PerformanceMatrix& m);

const TaskSpec* find_task(const std::vector<TaskSpec>& specs, const std::string& id);

}  // namespace capfa
