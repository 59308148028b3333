#include "capfa/dataset.hpp"

#include "capfa/csv.hpp"
#include "capfa/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace capfa {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    s.erase(std::remove_if(s.begin(), s.end(),
                           [](char c) { return c == ' ' || c == '_' || c == '-'; }),
            s.end());
    return s;
}

bool is_missing_token(const std::string& cell) {
    const std::string t = csv::trim(cell);
    return t.empty() || t == "NA" || t == "NaN" || t == "nan";
}

std::map<std::string, std::size_t> header_index(const csv::Row& header) {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < header.size(); ++i) idx[lower(csv::trim(header[i]))] = i;
    return idx;
}

std::optional<bool> parse_flag(const std::string& cell, const std::string& what, std::size_t line) {
    const std::string t = csv::trim(cell);
    if (t == "?" || t.empty()) return std::nullopt;
    if (t == "1" || lower(t) == "true" || lower(t) == "yes") return true;
    if (t == "0" || lower(t) == "false" || lower(t) == "no") return false;
    throw DataError("metadata line " + std::to_string(line) + ": bad " + what + " flag '" + t + "'");
}

std::optional<Date> parse_date(const std::string& cell, std::size_t line) {
    const std::string t = csv::trim(cell);
    if (t == "?" || t.empty()) return std::nullopt;
    int d = 0, m = 0, y = 0;
    char s1 = 0, s2 = 0;
    char tail = 0;
    const int got = std::sscanf(t.c_str(), "%d%c%d%c%d%c", &d, &s1, &m, &s2, &y, &tail);
    static constexpr int kDays[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (got != 5 || s1 != '/' || s2 != '/' || m < 1 || m > 12 || d < 1 || d > kDays[m - 1] ||
        y < 1900 || y > 2200) {
        throw DataError("metadata line " + std::to_string(line) + ": unparseable date '" + t +
                        "' (expected dd/mm/yyyy)");
    }
    return Date{y, m, d};
}

std::string format_date(const std::optional<Date>& d) {
    if (!d) return "?";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d/%02d/%04d", d->day, d->month, d->year);
    return buf;
}

std::string format_flag(const std::optional<bool>& b) {
    if (!b) return "?";
    return *b ? "1" : "0";
}

}  // namespace

std::string to_string(Direction d) {
    return d == Direction::HigherBetter ? "higher" : "lower";
}

std::string to_string(Annotation a) {
    switch (a) {
        case Annotation::Comprehension: return "Comprehension";
        case Annotation::LanguageModeling: return "Language modeling";
        case Annotation::Reasoning: return "Reasoning";
        case Annotation::Knowledge: return "Knowledge";
        case Annotation::Mixed: return "Mixed";
        case Annotation::Other: return "Other";
    }
    return "Other";
}

Direction parse_direction(const std::string& text) {
    const std::string t = lower(csv::trim(text));
    if (t == "higher" || t == "higherbetter" || t == "+") return Direction::HigherBetter;
    if (t == "lower" || t == "lowerbetter" || t == "-") return Direction::LowerBetter;
    throw DataError("unknown metric direction '" + text + "'");
}

Annotation parse_annotation(const std::string& text) {
    const std::string t = lower(csv::trim(text));
    if (t == "comprehension") return Annotation::Comprehension;
    if (t == "languagemodeling" || t == "languagemodelling") return Annotation::LanguageModeling;
    if (t == "reasoning") return Annotation::Reasoning;
    if (t == "knowledge") return Annotation::Knowledge;
    if (t == "mixed") return Annotation::Mixed;
    if (t == "other" || t.empty()) return Annotation::Other;
    throw DataError("unknown task annotation '" + text + "'");
}

Eigen::Index PerformanceMatrix::missing_in_row(Eigen::Index i) const {
    return present.cols() - present.row(i).count();
}

const TaskSpec* find_task(const std::vector<TaskSpec>& specs, const std::string& id) {
    for (const auto& s : specs)
        if (s.id == id) return &s;
    return nullptr;
}

std::vector<TaskSpec> load_task_specs(const std::filesystem::path& path) {
    const auto rows = csv::read_file(path);
    if (rows.size() < 2) throw DataError("task specs: no data rows in " + path.string());
    const auto idx = header_index(rows.front());
    for (const char* col : {"id", "displayname", "metric", "direction", "annotation"})
        if (!idx.count(col)) throw DataError(std::string("task specs: missing column '") + col + "'");

    std::vector<TaskSpec> specs;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != rows.front().size())
            throw DataError("task specs line " + std::to_string(r + 1) + ": wrong field count");
        TaskSpec s;
        s.id = csv::trim(row[idx.at("id")]);
        s.display_name = csv::trim(row[idx.at("displayname")]);
        s.metric_name = csv::trim(row[idx.at("metric")]);
        s.direction = parse_direction(row[idx.at("direction")]);
        s.annotation = parse_annotation(row[idx.at("annotation")]);
        if (s.id.empty()) throw DataError("task specs line " + std::to_string(r + 1) + ": empty id");
        if (!seen.insert(s.id).second) throw DataError("task specs: duplicate task id '" + s.id + "'");
        specs.push_back(std::move(s));
    }
    return specs;
}

void write_task_specs(const std::filesystem::path& path, const std::vector<TaskSpec>& specs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,display_name,metric,direction,annotation\n";
    for (const auto& s : specs)
        out << csv::join({s.id, s.display_name, s.metric_name, to_string(s.direction),
                          to_string(s.annotation)})
            << '\n';
}

PerformanceMatrix load_performance_matrix(const std::filesystem::path& path) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw DataError("no data rows in " + path.string());
    const auto& header = rows.front();
    if (header.size() < 2 || lower(csv::trim(header[0])) != "system")
        throw DataError("malformed CSV: first header column must be 'system' in " + path.string());
    if (rows.size() < 2) throw DataError("no data rows in " + path.string());

    PerformanceMatrix m;
    std::set<std::string> task_seen;
    for (std::size_t j = 1; j < header.size(); ++j) {
        std::string id = csv::trim(header[j]);
        if (id.empty()) throw DataError("malformed CSV: empty task column name");
        if (!task_seen.insert(id).second) throw DataError("duplicate task column '" + id + "'");
        m.tasks.push_back(std::move(id));
    }
    const auto n = static_cast<Eigen::Index>(rows.size() - 1);
    const auto p = static_cast<Eigen::Index>(m.tasks.size());
    m.scores = Eigen::MatrixXd::Zero(n, p);
    m.present = BoolMatrix::Constant(n, p, false);

    std::set<std::string> sys_seen;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i) + 1];
        const std::size_t line = static_cast<std::size_t>(i) + 2;
        if (row.size() != header.size())
            throw DataError("malformed CSV: line " + std::to_string(line) + " has " +
                            std::to_string(row.size()) + " fields, expected " +
                            std::to_string(header.size()));
        std::string name = csv::trim(row[0]);
        if (name.empty()) throw DataError("malformed CSV: empty system name on line " + std::to_string(line));
        if (!sys_seen.insert(name).second) throw DataError("duplicate system name '" + name + "'");
        m.systems.push_back(std::move(name));
        for (Eigen::Index j = 0; j < p; ++j) {
            const auto& cell = row[static_cast<std::size_t>(j) + 1];
            if (is_missing_token(cell)) continue;
            bool ok = false;
            const double v = csv::parse_double(cell, ok);
            if (!ok || !std::isfinite(v))
                throw DataError("malformed CSV: non-numeric cell '" + cell + "' at line " +
                                std::to_string(line) + ", task '" + m.tasks[static_cast<std::size_t>(j)] + "'");
            m.scores(i, j) = v;
            m.present(i, j) = true;
        }
    }
    return m;
}

PerformanceMatrix load_performance_matrix(const std::filesystem::path& path,
                                          const std::vector<TaskSpec>& task_specs) {
    PerformanceMatrix m = load_performance_matrix(path);
    for (const auto& t : m.tasks)
        if (!find_task(task_specs, t)) throw DataError("unknown task column '" + t + "'");
    return m;
}

void write_performance_matrix(const std::filesystem::path& path, const PerformanceMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    csv::Row header{"system"};
    header.insert(header.end(), m.tasks.begin(), m.tasks.end());
    out << csv::join(header) << '\n';
    for (Eigen::Index i = 0; i < m.n_systems(); ++i) {
        csv::Row row{m.systems[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < m.n_tasks(); ++j)
            row.push_back(m.present(i, j) ? csv::format_double(m.scores(i, j)) : std::string());
        out << csv::join(row) << '\n';
    }
}

std::vector<SystemMetadata> load_system_metadata(const std::filesystem::path& path) {
    const auto rows = csv::read_file(path);
    if (rows.size() < 2) throw DataError("metadata: no data rows in " + path.string());
    const auto idx = header_index(rows.front());
    for (const char* col : {"name", "sizeb", "totaltokens", "releasedate", "it", "rlhf"})
        if (!idx.count(col)) throw DataError(std::string("metadata: missing column '") + col + "'");

    std::vector<SystemMetadata> out;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::size_t line = r + 1;
        if (row.size() != rows.front().size())
            throw DataError("metadata line " + std::to_string(line) + ": wrong field count");
        SystemMetadata md;
        md.name = csv::trim(row[idx.at("name")]);
        if (!seen.insert(md.name).second) throw DataError("metadata: duplicate system name '" + md.name + "'");

        bool ok = false;
        const std::string size_cell = row[idx.at("sizeb")];
        md.size_b = csv::parse_double(size_cell, ok);
        if (!ok) throw DataError("metadata line " + std::to_string(line) + ": non-numeric size '" + size_cell + "'");
        if (!(md.size_b > 0.0))
            throw DataError("metadata line " + std::to_string(line) + ": size must be positive, got " + size_cell);

        const std::string tok = csv::trim(row[idx.at("totaltokens")]);
        if (tok != "?" && !tok.empty()) {
            const double t = csv::parse_double(tok, ok);
            if (!ok || !(t > 0.0))
                throw DataError("metadata line " + std::to_string(line) + ": bad token count '" + tok + "'");
            md.total_tokens = t;
        }
        md.release_date = parse_date(row[idx.at("releasedate")], line);
        md.instruction_tuned = parse_flag(row[idx.at("it")], "it", line);
        md.rlhf = parse_flag(row[idx.at("rlhf")], "rlhf", line);
        out.push_back(std::move(md));
    }
    return out;
}

void write_system_metadata(const std::filesystem::path& path,
                           const std::vector<SystemMetadata>& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "name,size_b,total_tokens,release_date,it,rlhf\n";
    for (const auto& m : meta)
        out << csv::join({m.name, csv::format_double(m.size_b),
                          m.total_tokens ? csv::format_double(*m.total_tokens) : "?",
                          format_date(m.release_date), format_flag(m.instruction_tuned),
                          format_flag(m.rlhf)})
            << '\n';
}

PerformanceMatrix filter_systems(const PerformanceMatrix& m, int max_missing) {
    if (max_missing < 0) throw UsageError("filter_systems: max_missing must be >= 0");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < m.n_systems(); ++i)
        if (m.missing_in_row(i) <= max_missing) keep.push_back(i);
    if (keep.empty())
        throw DataError("filter_systems: every system has more than " + std::to_string(max_missing) +
                        " missing tasks");

    PerformanceMatrix out;
    out.tasks = m.tasks;
    out.harmonized = m.harmonized;
    out.scores.resize(static_cast<Eigen::Index>(keep.size()), m.n_tasks());
    out.present.resize(static_cast<Eigen::Index>(keep.size()), m.n_tasks());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const auto i = keep[r];
        out.systems.push_back(m.systems[static_cast<std::size_t>(i)]);
        out.scores.row(static_cast<Eigen::Index>(r)) = m.scores.row(i);
        out.present.row(static_cast<Eigen::Index>(r)) = m.present.row(i);
    }
    return out;
}

PerformanceMatrix harmonize_directions(const PerformanceMatrix& m,
                                       const std::vector<TaskSpec>& task_specs) {
    if (m.harmonized) throw UsageError("harmonize_directions: matrix already harmonized");
    PerformanceMatrix out = m;
    for (Eigen::Index j = 0; j < m.n_tasks(); ++j) {
        const auto& id = m.tasks[static_cast<std::size_t>(j)];
        const TaskSpec* spec = find_task(task_specs, id);
        if (!spec) throw DataError("harmonize_directions: no task spec for '" + id + "'");
        if (spec->direction == Direction::LowerBetter) out.scores.col(j) = -m.scores.col(j);
    }
    out.harmonized = true;
    return out;
}

PerformanceMatrix standardize(const PerformanceMatrix& m) {
    PerformanceMatrix out = m;
    for (Eigen::Index j = 0; j < m.n_tasks(); ++j) {
        const auto& id = m.tasks[static_cast<std::size_t>(j)];
        const auto count = m.present.col(j).count();
        if (count < 2) throw DataError("standardize: task '" + id + "' has fewer than 2 present values");
        double mean = 0.0;
        for (Eigen::Index i = 0; i < m.n_systems(); ++i)
            if (m.present(i, j)) mean += m.scores(i, j);
        mean /= static_cast<double>(count);
        double ss = 0.0;
        for (Eigen::Index i = 0; i < m.n_systems(); ++i)
            if (m.present(i, j)) ss += (m.scores(i, j) - mean) * (m.scores(i, j) - mean);
        const double sd = std::sqrt(ss / static_cast<double>(count - 1));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
            throw DataError("standardize: task '" + id + "' is constant");
        for (Eigen::Index i = 0; i < m.n_systems(); ++i)
            out.scores(i, j) = m.present(i, j) ? (m.scores(i, j) - mean) / sd : 0.0;
    }
    return out;
}

PerformanceMatrix impute_column_means(const PerformanceMatrix& m) {
    PerformanceMatrix out = m;
    for (Eigen::Index j = 0; j < m.n_tasks(); ++j) {
        const auto count = m.present.col(j).count();
        if (count == 0)
            throw DataError("impute_column_means: task '" + m.tasks[static_cast<std::size_t>(j)] +
                            "' has no present values");
        double mean = 0.0;
        for (Eigen::Index i = 0; i < m.n_systems(); ++i)
            if (m.present(i, j)) mean += m.scores(i, j);
        mean /= static_cast<double>(count);
        for (Eigen::Index i = 0; i < m.n_systems(); ++i)
            if (!m.present(i, j)) out.scores(i, j) = mean;
    }
    out.present.setConstant(true);
    return out;
}

}  // namespace capfa
