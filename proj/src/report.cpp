#include "capfa/report.hpp"

#include "capfa/csv.hpp"
#include "capfa/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace capfa::report {

namespace fs = std::filesystem;

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Coordinates are printed with 2 decimals so output is byte-stable.
std::string num(double v) { return format_fixed(v, 2); }

class Svg {
public:
    Svg(double width, double height) : width_(width), height_(height) {}

    void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
        body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
              << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
    }

    void text(double x, double y, const std::string& s, const std::string& anchor = "start", double size = 11,
              const std::string& extra = "") {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
              << "\" text-anchor=\"" << anchor << "\"" << extra << ">" << xml_escape(s) << "</text>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#333333",
              const std::string& extra = "") {
        body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
              << "\" stroke=\"" << stroke << "\"" << extra << "/>\n";
    }

    void circle(double x, double y, double r, const std::string& fill) {
        body_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill
              << "\"/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  const std::string& fill = "none", const std::string& extra = "") {
        body_ << "<polyline points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) body_ << (i ? " " : "") << num(pts[i].first) << "," << num(pts[i].second);
        body_ << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"" << extra << "/>\n";
    }

    void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& fill) {
        body_ << "<polygon points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) body_ << (i ? " " : "") << num(pts[i].first) << "," << num(pts[i].second);
        body_ << "\" fill=\"" << fill << "\" stroke=\"none\"/>\n";
    }

    void save(const fs::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write " + path.string());
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\"" << num(height_)
            << "\" viewBox=\"0 0 " << num(width_) << " " << num(height_) << "\" font-family=\"sans-serif\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
            << body_.str() << "</svg>\n";
    }

private:
    double width_, height_;
    std::ostringstream body_;
};

struct Scale {
    double lo, hi, px_lo, px_hi;
    double operator()(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

std::pair<double, double> padded_range(double lo, double hi) {
    if (!(hi > lo)) return {lo - 1.0, hi + 1.0};
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

void axes(Svg& svg, const Scale& x, const Scale& y, const std::string& x_label, const std::string& y_label) {
    svg.line(x.px_lo, y.px_lo, x.px_hi, y.px_lo);
    svg.line(x.px_lo, y.px_lo, x.px_lo, y.px_hi);
    for (int i = 0; i <= 4; ++i) {
        const double xv = x.lo + (x.hi - x.lo) * i / 4.0;
        const double yv = y.lo + (y.hi - y.lo) * i / 4.0;
        svg.line(x(xv), y.px_lo, x(xv), y.px_lo + 4);
        svg.text(x(xv), y.px_lo + 16, format_fixed(xv, 2), "middle", 10);
        svg.line(x.px_lo - 4, y(yv), x.px_lo, y(yv));
        svg.text(x.px_lo - 6, y(yv) + 3, format_fixed(yv, 2), "end", 10);
    }
    svg.text((x.px_lo + x.px_hi) / 2, y.px_lo + 32, x_label, "middle");
    svg.text(x.px_lo - 44, (y.px_lo + y.px_hi) / 2, y_label, "middle", 11,
             " transform=\"rotate(-90 " + num(x.px_lo - 44) + " " + num((y.px_lo + y.px_hi) / 2) + ")\"");
}

void ensure_dirs(const fs::path& dir) {
    fs::create_directories(dir / "tables");
    fs::create_directories(dir / "figures");
}

std::string hex(int r, int g, int b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

void rgb(const char* h, int& r, int& g, int& b) {
    r = std::stoi(std::string(h + 1, 2), nullptr, 16);
    g = std::stoi(std::string(h + 3, 2), nullptr, 16);
    b = std::stoi(std::string(h + 5, 2), nullptr, 16);
}

const TaskSpec* spec_for(const std::vector<TaskSpec>& specs, const std::string& id) { return find_task(specs, id); }

}  // namespace

std::string format_fixed(double v, int decimals) {
    if (!std::isfinite(v)) return "NA";
    if (decimals < 0) throw UsageError("format_fixed: decimals must be >= 0");
    char buf[512];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (ec != std::errc{}) throw NumericalError("format_fixed: cannot format value");
    std::string s(buf, ptr);
    bool negative = false;
    if (!s.empty() && s.front() == '-') {
        negative = true;
        s.erase(0, 1);
    }
    const auto dot = s.find('.');
    std::string int_part = dot == std::string::npos ? s : s.substr(0, dot);
    std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);

    std::string digits = int_part + frac.substr(0, std::min<std::size_t>(frac.size(), static_cast<std::size_t>(decimals)));
    digits.append(static_cast<std::size_t>(decimals) - (digits.size() - int_part.size()), '0');
    if (frac.size() > static_cast<std::size_t>(decimals)) {
        const char next = frac[static_cast<std::size_t>(decimals)];
        const bool rest_nonzero =
            frac.find_first_not_of('0', static_cast<std::size_t>(decimals) + 1) != std::string::npos;
        const bool last_odd = ((digits.back() - '0') % 2) == 1;
        const bool up = next > '5' || (next == '5' && (rest_nonzero || last_odd));
        if (up) {
            int i = static_cast<int>(digits.size()) - 1;
            while (i >= 0 && digits[static_cast<std::size_t>(i)] == '9') digits[static_cast<std::size_t>(i--)] = '0';
            if (i < 0) {
                digits.insert(digits.begin(), '1');
                int_part.insert(int_part.begin(), '0');
            } else {
                ++digits[static_cast<std::size_t>(i)];
            }
        }
    }
    const std::size_t int_len = digits.size() - static_cast<std::size_t>(decimals);
    std::string out = digits.substr(0, int_len);
    if (decimals > 0) out += "." + digits.substr(int_len);
    const bool zero = out.find_first_not_of("0.") == std::string::npos;
    return (negative && !zero) ? "-" + out : out;
}

std::string format_ci_cell(double r, const ConfidenceInterval& ci, int decimals) {
    return format_fixed(r, decimals) + " [" + format_fixed(ci.lo, decimals) + ", " + format_fixed(ci.hi, decimals) + "]";
}

std::string loading_color(double v) {
    if (!std::isfinite(v)) return "#ffffff";
    const double t = std::min(std::abs(v), 1.0);
    int r0, g0, b0, r1, g1, b1;
    rgb(kNeutralColor, r0, g0, b0);
    rgb(v >= 0 ? kPositiveColor : kNegativeColor, r1, g1, b1);
    auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
    return hex(mix(r0, r1), mix(g0, g1), mix(b0, b1));
}

std::vector<std::string> factor_names(const RotatedSolution& rs, const std::vector<TaskSpec>& specs) {
    const Eigen::Index k = rs.pattern.cols();
    std::vector<std::map<Annotation, int>> votes(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < rs.labels.size(); ++i) {
        const TaskSpec* spec = spec_for(specs, rs.labels[i]);
        if (!spec || k == 0) continue;
        Eigen::Index arg = 0;
        rs.pattern.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff(&arg);
        ++votes[static_cast<std::size_t>(arg)][spec->annotation];
    }
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& v = votes[static_cast<std::size_t>(j)];
        const std::string prefix = "F" + std::to_string(j + 1);
        if (v.empty()) {
            names.push_back(prefix);
            continue;
        }
        // map order breaks ties toward the earlier annotation
        auto best = std::max_element(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
        names.push_back(prefix + " (" + to_string(best->first) + ")");
    }
    return names;
}

std::vector<std::vector<std::string>> variance_table(const VarianceTable& v, const std::vector<std::string>& names) {
    if (v.proportion.size() == 0) throw UsageError("variance_table: empty factor set");
    if (static_cast<Eigen::Index>(names.size()) != v.proportion.size())
        throw UsageError("variance_table: one name per factor required");
    std::vector<std::vector<std::string>> rows;
    rows.push_back({""});
    rows[0].insert(rows[0].end(), names.begin(), names.end());
    std::vector<std::string> prop{"Proportion var. explained"}, cum{"Cumulative var. explained"};
    for (Eigen::Index j = 0; j < v.proportion.size(); ++j) {
        prop.push_back(format_fixed(v.proportion(j)));
        cum.push_back(format_fixed(v.cumulative(j)));
    }
    rows.push_back(prop);
    rows.push_back(cum);
    return rows;
}

std::string characteristic_label(Characteristic c) {
    switch (c) {
        case Characteristic::LogSize: return "Log model size";
        case Characteristic::InstructionTuned: return "Instruction tuning";
        case Characteristic::TotalTokens: return "Training length (tokens)";
    }
    return "";
}

std::vector<std::vector<std::string>> correlation_table(const Eigen::MatrixXd& phi, int n_systems,
                                                        const std::vector<CharacteristicCorrelation>& corrs,
                                                        const std::vector<std::string>& names, double level) {
    const Eigen::Index k = phi.rows();
    if (k == 0) throw UsageError("correlation_table: empty factor set");
    if (static_cast<Eigen::Index>(names.size()) != k) throw UsageError("correlation_table: one name per factor required");
    std::vector<std::vector<std::string>> rows;
    rows.push_back({""});
    rows[0].insert(rows[0].end(), names.begin(), names.end());
    for (Eigen::Index i = 1; i < k; ++i) {
        std::vector<std::string> row{names[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < k; ++j)
            row.push_back(j < i ? format_ci_cell(phi(i, j), fisher_ci(phi(i, j), n_systems, level)) : "");
        rows.push_back(row);
    }
    for (Characteristic c : {Characteristic::LogSize, Characteristic::InstructionTuned, Characteristic::TotalTokens}) {
        std::vector<std::string> row{characteristic_label(c)};
        row.resize(static_cast<std::size_t>(k + 1));
        bool any = false;
        for (const auto& cc : corrs)
            if (cc.characteristic == c && cc.factor < k) {
                row[static_cast<std::size_t>(cc.factor + 1)] = format_ci_cell(cc.r, cc.ci);
                any = true;
            }
        if (any) rows.push_back(row);
    }
    return rows;
}

void write_table(const fs::path& path, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : rows) out << csv::join(r) << '\n';
}

void render_tables(const fs::path& dir, const VarianceTable& variance, const Eigen::MatrixXd& phi, int n_systems,
                   const std::vector<CharacteristicCorrelation>& corrs, const std::vector<std::string>& names,
                   double level) {
    ensure_dirs(dir);
    write_table(dir / "tables" / "variance_explained.csv", variance_table(variance, names));
    write_table(dir / "tables" / "factor_correlations.csv", correlation_table(phi, n_systems, corrs, names, level));
    std::vector<std::vector<std::string>> counts{{"characteristic", "n", "dropped"}};
    for (const auto& cc : corrs)
        if (cc.factor == 0)
            counts.push_back({to_string(cc.characteristic), std::to_string(cc.n), std::to_string(cc.dropped)});
    write_table(dir / "tables" / "characteristic_counts.csv", counts);
}

void render_loading_heatmap(const fs::path& dir, const BayesPosterior& bayes, const RotatedSolution& freq,
                            const std::vector<TaskSpec>& specs, const std::vector<std::string>& names) {
    if (bayes.labels != freq.labels) throw UsageError("render_loading_heatmap: task sets differ");
    ensure_dirs(dir);
    const auto p = static_cast<Eigen::Index>(freq.labels.size());
    const Eigen::Index kf = freq.pattern.cols();
    const AgreementReport agreement = compare_with_frequentist(bayes, freq);
    const Eigen::MatrixXd bl = bayes.loading_matrix();

    // Bayesian label order: matched labels in frequentist column order, then the rest.
    std::vector<int> order;
    std::vector<std::string> bayes_names;
    for (Eigen::Index f = 1; f <= kf; ++f)
        for (std::size_t l = 0; l < agreement.bayes_to_frequentist.size(); ++l)
            if (agreement.bayes_to_frequentist[l] == f) {
                order.push_back(static_cast<int>(l));
                bayes_names.push_back("B" + std::to_string(l + 1) + " ~ F" + std::to_string(f));
            }
    for (std::size_t l = 0; l < agreement.bayes_to_frequentist.size(); ++l)
        if (agreement.bayes_to_frequentist[l] == 0) {
            order.push_back(static_cast<int>(l));
            bayes_names.push_back("B" + std::to_string(l + 1));
        }
    const auto kb = static_cast<Eigen::Index>(order.size());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"task", "display_name", "annotation"};
    for (const int l : order) header.push_back("bayes_B" + std::to_string(l + 1));
    header.push_back("bayes_modal_mass");
    for (Eigen::Index f = 0; f < kf; ++f) header.push_back("freq_F" + std::to_string(f + 1));
    rows.push_back(header);
    for (Eigen::Index i = 0; i < p; ++i) {
        const TaskSpec* spec = spec_for(specs, freq.labels[static_cast<std::size_t>(i)]);
        std::vector<std::string> row{freq.labels[static_cast<std::size_t>(i)],
                                     spec ? spec->display_name : freq.labels[static_cast<std::size_t>(i)],
                                     spec ? to_string(spec->annotation) : ""};
        for (const int l : order) row.push_back(csv::format_double(bl(i, l)));
        row.push_back(csv::format_double(bayes.tasks[static_cast<std::size_t>(i)].modal_mass));
        for (Eigen::Index f = 0; f < kf; ++f) row.push_back(csv::format_double(freq.pattern(i, f)));
        rows.push_back(row);
    }
    write_table(dir / "tables" / "loadings.csv", rows);

    const double row_h = 18, cell_w = 64, label_w = 230, ann_w = 130, top = 60, gap = 24;
    const double bayes_x = label_w + ann_w;
    const double freq_x = bayes_x + static_cast<double>(kb) * cell_w + gap;
    Svg svg(freq_x + static_cast<double>(kf) * cell_w + 20, top + static_cast<double>(p) * row_h + 20);
    svg.text(bayes_x, 20, "Bayesian (modal factor)", "start", 12, " font-weight=\"bold\"");
    svg.text(freq_x, 20, "Frequentist (oblimin pattern)", "start", 12, " font-weight=\"bold\"");
    svg.text(label_w, top - 8, "Annotation");
    for (Eigen::Index c = 0; c < kb; ++c)
        svg.text(bayes_x + (static_cast<double>(c) + 0.5) * cell_w, top - 8, bayes_names[static_cast<std::size_t>(c)], "middle", 10);
    for (Eigen::Index f = 0; f < kf; ++f)
        svg.text(freq_x + (static_cast<double>(f) + 0.5) * cell_w, top - 8,
                 f < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(f)] : "F" + std::to_string(f + 1),
                 "middle", 9);
    for (Eigen::Index i = 0; i < p; ++i) {
        const double y = top + static_cast<double>(i) * row_h;
        svg.text(label_w - 6, y + 13, rows[static_cast<std::size_t>(i + 1)][1], "end");
        svg.text(label_w, y + 13, rows[static_cast<std::size_t>(i + 1)][2]);
        for (Eigen::Index c = 0; c < kb; ++c) {
            const double v = bl(i, order[static_cast<std::size_t>(c)]);
            svg.rect(bayes_x + static_cast<double>(c) * cell_w, y, cell_w, row_h, loading_color(v), "#ffffff");
            if (v != 0.0) svg.text(bayes_x + (static_cast<double>(c) + 0.5) * cell_w, y + 13, format_fixed(v), "middle", 10);
        }
        for (Eigen::Index f = 0; f < kf; ++f) {
            const double v = freq.pattern(i, f);
            svg.rect(freq_x + static_cast<double>(f) * cell_w, y, cell_w, row_h, loading_color(v), "#ffffff");
            svg.text(freq_x + (static_cast<double>(f) + 0.5) * cell_w, y + 13, format_fixed(v), "middle", 10);
        }
    }
    svg.save(dir / "figures" / "loadings.svg");
}

Eigen::MatrixXd read_frequentist_loadings(const fs::path& csv_path) {
    const auto rows = csv::read_file(csv_path);
    if (rows.empty()) throw DataError("loadings: empty file " + csv_path.string());
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < rows[0].size(); ++c)
        if (rows[0][c].rfind("freq_", 0) == 0) cols.push_back(c);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 1; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols.size(); ++c) {
            bool ok = false;
            if (cols[c] >= rows[r].size()) throw DataError("loadings: short row " + std::to_string(r));
            m(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = csv::parse_double(rows[r][cols[c]], ok);
            if (!ok) throw DataError("loadings: non-numeric cell in row " + std::to_string(r));
        }
    return m;
}

void render_correlation_heatmap(const fs::path& dir, const CorrelationMatrix& c) {
    ensure_dirs(dir);
    write_correlation_csv(dir / "tables" / "task_correlations.csv", c);
    const auto p = c.size();
    const double cell = 22, left = 200, top = 200;
    Svg svg(left + static_cast<double>(p) * cell + 20, top + static_cast<double>(p) * cell + 20);
    for (Eigen::Index i = 0; i < p; ++i) {
        const double pos = static_cast<double>(i) * cell;
        svg.text(left - 6, top + pos + 15, c.labels[static_cast<std::size_t>(i)], "end", 10);
        svg.text(left + pos + 15, top - 6, c.labels[static_cast<std::size_t>(i)], "start", 10,
                 " transform=\"rotate(-60 " + num(left + pos + 15) + " " + num(top - 6) + ")\"");
        for (Eigen::Index j = 0; j < p; ++j)
            svg.rect(left + static_cast<double>(j) * cell, top + pos, cell, cell, loading_color(c.r(i, j)), "#ffffff");
    }
    svg.save(dir / "figures" / "task_correlations.svg");
}

void render_scree(const fs::path& dir, const Eigen::VectorXd& eigs) {
    ensure_dirs(dir);
    std::vector<std::vector<std::string>> rows{{"factor", "eigenvalue"}};
    for (Eigen::Index i = 0; i < eigs.size(); ++i) rows.push_back({std::to_string(i + 1), csv::format_double(eigs(i))});
    write_table(dir / "tables" / "scree.csv", rows);

    Svg svg(520, 360);
    const Scale x{0.0, static_cast<double>(eigs.size()) + 1.0, 70, 500};
    const auto [ylo, yhi] = padded_range(std::min(0.0, eigs.minCoeff()), eigs.size() ? eigs.maxCoeff() : 1.0);
    const Scale y{ylo, yhi, 310, 20};
    axes(svg, x, y, "Factor", "Eigenvalue");
    svg.line(x.px_lo, y(1.0), x.px_hi, y(1.0), "#999999", " stroke-dasharray=\"4 3\"");
    std::vector<std::pair<double, double>> pts;
    for (Eigen::Index i = 0; i < eigs.size(); ++i) pts.emplace_back(x(static_cast<double>(i + 1)), y(eigs(i)));
    svg.polyline(pts, "#2166ac");
    for (const auto& [px, py] : pts) svg.circle(px, py, 3, "#2166ac");
    svg.save(dir / "figures" / "scree.svg");
}

void render_hull(const fs::path& dir, const HullResult& h) {
    ensure_dirs(dir);
    std::vector<std::vector<std::string>> rows{{"k", "df", "f", "rmsea", "on_hull", "st", "selected"}};
    for (std::size_t i = 0; i < h.candidates.size(); ++i) {
        const auto& c = h.candidates[i];
        rows.push_back({std::to_string(c.k), std::to_string(c.df), csv::format_double(c.f), csv::format_double(c.rmsea),
                        h.hull_members[i] ? "1" : "0", std::isnan(h.st_values[i]) ? "" : csv::format_double(h.st_values[i]),
                        c.k == h.selected_k ? "1" : "0"});
    }
    write_table(dir / "tables" / "hull.csv", rows);

    Svg svg(520, 360);
    double dmax = 1, flo = 1, fhi = 0;
    for (const auto& c : h.candidates) {
        dmax = std::max(dmax, static_cast<double>(c.df));
        flo = std::min(flo, c.f);
        fhi = std::max(fhi, c.f);
    }
    const Scale x{0.0, dmax * 1.05, 70, 500};
    const auto [ylo, yhi] = padded_range(flo, fhi);
    const Scale y{ylo, yhi, 310, 20};
    axes(svg, x, y, "Degrees of freedom", "1 - RMSEA");
    std::vector<std::pair<double, double>> hull;
    for (std::size_t i = 0; i < h.candidates.size(); ++i)
        if (h.hull_members[i]) hull.emplace_back(x(h.candidates[i].df), y(h.candidates[i].f));
    svg.polyline(hull, "#1b7837");
    for (const auto& c : h.candidates) {
        const bool sel = c.k == h.selected_k;
        svg.circle(x(c.df), y(c.f), sel ? 5 : 3, sel ? "#b2182b" : "#333333");
        svg.text(x(c.df) + 6, y(c.f) - 6, "k=" + std::to_string(c.k), "start", 10);
    }
    svg.save(dir / "figures" / "hull.svg");
}

void render_k_posterior(const fs::path& dir, const BayesPosterior& bp) {
    ensure_dirs(dir);
    std::vector<std::vector<std::string>> rows{{"k", "probability"}};
    for (std::size_t k = 0; k < bp.k_distribution.size(); ++k)
        rows.push_back({std::to_string(k), csv::format_double(bp.k_distribution[k])});
    write_table(dir / "tables" / "k_posterior.csv", rows);

    Svg svg(520, 360);
    const double n = static_cast<double>(bp.k_distribution.size());
    const Scale x{-0.5, n - 0.5, 70, 500};
    const Scale y{0.0, 1.0, 310, 20};
    axes(svg, x, y, "Number of factors", "Posterior probability");
    const double w = (x.px_hi - x.px_lo) / n * 0.7;
    for (std::size_t k = 0; k < bp.k_distribution.size(); ++k) {
        const double v = bp.k_distribution[k];
        const double cx = x(static_cast<double>(k));
        svg.rect(cx - w / 2, y(v), w, y.px_lo - y(v), static_cast<int>(k) == bp.modal_k ? "#1b7837" : "#9e9e9e");
        svg.text(cx, y.px_lo + 28, std::to_string(k), "middle", 10);
    }
    svg.save(dir / "figures" / "k_posterior.svg");
}

void render_scores(const fs::path& dir, const FactorScores& fs, const std::vector<std::string>& names, int sort_factor) {
    ensure_dirs(dir);
    const Eigen::Index k = fs.scores.cols();
    if (sort_factor < 0 || sort_factor >= k) throw UsageError("render_scores: sort factor out of range");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(fs.scores.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return fs.scores(a, sort_factor) > fs.scores(b, sort_factor); });

    std::vector<std::vector<std::string>> rows{{"system"}};
    for (Eigen::Index f = 0; f < k; ++f) rows[0].push_back("F" + std::to_string(f + 1));
    for (auto i : idx) {
        std::vector<std::string> row{fs.systems[static_cast<std::size_t>(i)]};
        for (Eigen::Index f = 0; f < k; ++f) row.push_back(csv::format_double(fs.scores(i, f)));
        rows.push_back(row);
    }
    write_table(dir / "tables" / "factor_scores.csv", rows);

    const double row_h = 18, cell_w = 110, left = 240, top = 50;
    const double max_abs = std::max(fs.scores.cwiseAbs().maxCoeff(), 1e-12);
    Svg svg(left + static_cast<double>(k) * cell_w + 20, top + static_cast<double>(idx.size()) * row_h + 30);
    for (Eigen::Index f = 0; f < k; ++f)
        svg.text(left + (static_cast<double>(f) + 0.5) * cell_w, top - 8,
                 f < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(f)] : "F" + std::to_string(f + 1),
                 "middle", 10);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const double y = top + static_cast<double>(r) * row_h;
        svg.text(left - 6, y + 13, fs.systems[static_cast<std::size_t>(idx[r])], "end", 10);
        for (Eigen::Index f = 0; f < k; ++f) {
            const double v = fs.scores(idx[r], f);
            svg.rect(left + static_cast<double>(f) * cell_w, y, cell_w, row_h, loading_color(v / max_abs), "#ffffff");
            svg.text(left + (static_cast<double>(f) + 0.5) * cell_w, y + 13, format_fixed(v), "middle", 10);
        }
    }
    svg.text(left, top + static_cast<double>(idx.size()) * row_h + 20,
             "Colour scaled to max |score| = " + format_fixed(max_abs), "start", 10);
    svg.save(dir / "figures" / "factor_scores.svg");
}

void render_size_scatter(const fs::path& dir, const FactorScores& fs, const std::vector<SystemMetadata>& meta,
                         const std::vector<std::string>& names, double level) {
    ensure_dirs(dir);
    std::map<std::string, const SystemMetadata*> by_name;
    for (const auto& m : meta) by_name[m.name] = &m;
    Eigen::VectorXd x(static_cast<Eigen::Index>(fs.systems.size()));
    for (std::size_t i = 0; i < fs.systems.size(); ++i) {
        const auto it = by_name.find(fs.systems[i]);
        if (it == by_name.end()) throw DataError("metadata missing for system '" + fs.systems[i] + "'");
        x(static_cast<Eigen::Index>(i)) = std::log(it->second->size_b);
    }
    const Eigen::Index k = fs.scores.cols();
    std::vector<std::vector<std::string>> rows{{"system", "log_size", "factor", "score", "fit", "band_lo", "band_hi"}};
    const double panel_w = 320, panel_h = 280;
    Svg svg(static_cast<double>(k) * panel_w + 20, panel_h + 60);
    for (Eigen::Index f = 0; f < k; ++f) {
        const Eigen::VectorXd y = fs.scores.col(f);
        const LinearFit fit = fit_line(x, y);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const auto band = fit.band(x(i), level);
            rows.push_back({fs.systems[static_cast<std::size_t>(i)], csv::format_double(x(i)), std::to_string(f + 1),
                            csv::format_double(y(i)), csv::format_double(fit.predict(x(i))),
                            csv::format_double(band.lo), csv::format_double(band.hi)});
        }
        const double ox = static_cast<double>(f) * panel_w;
        const auto [xlo, xhi] = padded_range(x.minCoeff(), x.maxCoeff());
        double ylo = y.minCoeff(), yhi = y.maxCoeff();
        std::vector<std::pair<double, double>> upper, lower;
        const int steps = 40;
        for (int s = 0; s <= steps; ++s) {
            const double xv = xlo + (xhi - xlo) * s / steps;
            const auto band = fit.band(xv, level);
            ylo = std::min(ylo, band.lo);
            yhi = std::max(yhi, band.hi);
        }
        const auto [plo, phi] = padded_range(ylo, yhi);
        const Scale sx{xlo, xhi, ox + 70, ox + panel_w - 10};
        const Scale sy{plo, phi, panel_h, 30};
        for (int s = 0; s <= steps; ++s) {
            const double xv = xlo + (xhi - xlo) * s / steps;
            const auto band = fit.band(xv, level);
            upper.emplace_back(sx(xv), sy(band.hi));
            lower.emplace_back(sx(xv), sy(band.lo));
        }
        std::vector<std::pair<double, double>> poly(upper);
        poly.insert(poly.end(), lower.rbegin(), lower.rend());
        svg.polygon(poly, "#d9f0d3");
        svg.line(sx(xlo), sy(fit.predict(xlo)), sx(xhi), sy(fit.predict(xhi)), "#1b7837");
        for (Eigen::Index i = 0; i < x.size(); ++i) svg.circle(sx(x(i)), sy(y(i)), 3, "#333333");
        axes(svg, sx, sy, "log size (B)", "Factor score");
        svg.text(ox + panel_w / 2 + 30, 18,
                 f < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(f)] : "F" + std::to_string(f + 1),
                 "middle", 12);
    }
    write_table(dir / "tables" / "size_scatter.csv", rows);
    svg.save(dir / "figures" / "size_scatter.svg");
}

}  // namespace capfa::report
