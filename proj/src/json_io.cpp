#include "capfa/json_io.hpp"

#include "capfa/error.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace capfa {

namespace {

using nlohmann::json;

// JSON has no NaN/inf; they are written as null / "inf" / "-inf".
json number(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

double number_from(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw DataError("json: unexpected string '" + s + "' where a number was expected");
    }
    return j.get<double>();
}

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
    return a;
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_from(j[i]);
    return v;
}

template <typename F>
auto guarded(const char* what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw DataError(std::string("json: malformed ") + what + ": " + e.what());
    }
}

}  // namespace

json matrix_to_json(const Eigen::MatrixXd& m) {
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(number(m(i, j)));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    return guarded("matrix", [&] {
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        const auto& data = j.at("data");
        if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
            throw DataError("json: matrix size does not match its data");
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = number_from(data[static_cast<std::size_t>(i * cols + c)]);
        return m;
    });
}

json to_json(const UnrotatedSolution& s) {
    const FitIndices fi = fit_indices(s);
    return {{"labels", s.labels},
            {"n", s.n},
            {"p", s.p},
            {"k", s.k},
            {"loadings", matrix_to_json(s.loadings)},
            {"uniquenesses", vector_to_json(s.uniquenesses)},
            {"discrepancy", number(s.discrepancy)},
            {"baseline_discrepancy", number(s.baseline_discrepancy)},
            {"iterations", s.iterations},
            {"ridge_applied", s.ridge_applied},
            {"bartlett", s.bartlett},
            {"heywood", s.heywood},
            {"fit",
             {{"chi2", number(fi.chi2)},
              {"df", fi.df},
              {"chi2_baseline", number(fi.chi2_baseline)},
              {"df_baseline", fi.df_baseline},
              {"cfi", number(fi.cfi)},
              {"tli", number(fi.tli)},
              {"rmsea", number(fi.rmsea)},
              {"small_sample", fi.small_sample}}}};
}

UnrotatedSolution unrotated_from_json(const json& j) {
    return guarded("unrotated solution", [&] {
        UnrotatedSolution s;
        s.labels = j.at("labels").get<std::vector<std::string>>();
        s.n = j.at("n").get<int>();
        s.p = j.at("p").get<int>();
        s.k = j.at("k").get<int>();
        s.loadings = matrix_from_json(j.at("loadings"));
        s.uniquenesses = vector_from_json(j.at("uniquenesses"));
        s.discrepancy = number_from(j.at("discrepancy"));
        s.baseline_discrepancy = number_from(j.at("baseline_discrepancy"));
        s.iterations = j.at("iterations").get<int>();
        s.ridge_applied = j.at("ridge_applied").get<bool>();
        s.bartlett = j.at("bartlett").get<bool>();
        s.heywood = j.at("heywood").get<std::vector<bool>>();
        if (static_cast<int>(s.labels.size()) != s.p || s.loadings.rows() != s.p || s.loadings.cols() != s.k ||
            s.uniquenesses.size() != s.p)
            throw DataError("json: unrotated solution dimensions are inconsistent");
        return s;
    });
}

json to_json(const RotatedSolution& rs) {
    return {{"labels", rs.labels},
            {"method", to_string(rs.method)},
            {"pattern", matrix_to_json(rs.pattern)},
            {"structure", matrix_to_json(rs.structure)},
            {"phi", matrix_to_json(rs.phi)},
            {"uniquenesses", vector_to_json(rs.uniquenesses)},
            {"criterion", number(rs.criterion)},
            {"converged_starts", rs.converged_starts}};
}

RotatedSolution rotated_from_json(const json& j) {
    return guarded("rotated solution", [&] {
        RotatedSolution rs;
        rs.labels = j.at("labels").get<std::vector<std::string>>();
        const auto method = j.at("method").get<std::string>();
        if (method == to_string(RotationMethod::Oblimin)) rs.method = RotationMethod::Oblimin;
        else if (method == to_string(RotationMethod::Varimax)) rs.method = RotationMethod::Varimax;
        else throw DataError("json: unknown rotation method '" + method + "'");
        rs.pattern = matrix_from_json(j.at("pattern"));
        rs.structure = matrix_from_json(j.at("structure"));
        rs.phi = matrix_from_json(j.at("phi"));
        rs.uniquenesses = vector_from_json(j.at("uniquenesses"));
        rs.criterion = number_from(j.at("criterion"));
        rs.converged_starts = j.at("converged_starts").get<int>();
        const auto p = static_cast<Eigen::Index>(rs.labels.size());
        if (rs.pattern.rows() != p || rs.structure.rows() != p || rs.uniquenesses.size() != p ||
            rs.phi.rows() != rs.pattern.cols() || rs.phi.cols() != rs.pattern.cols())
            throw DataError("json: rotated solution dimensions are inconsistent");
        return rs;
    });
}

json to_json(const HullResult& h) {
    json cands = json::array();
    for (std::size_t i = 0; i < h.candidates.size(); ++i) {
        const auto& c = h.candidates[i];
        cands.push_back({{"k", c.k},
                         {"f", number(c.f)},
                         {"df", c.df},
                         {"rmsea", number(c.rmsea)},
                         {"on_hull", static_cast<bool>(h.hull_members[i])},
                         {"st", number(h.st_values[i])}});
    }
    return {{"candidates", cands}, {"selected_k", h.selected_k}, {"fallback_to_scree", h.fallback_to_scree}};
}

HullResult hull_from_json(const json& j) {
    return guarded("hull result", [&] {
        HullResult h;
        for (const auto& c : j.at("candidates")) {
            h.candidates.push_back(
                {c.at("k").get<int>(), number_from(c.at("f")), c.at("df").get<int>(), number_from(c.at("rmsea"))});
            h.hull_members.push_back(c.at("on_hull").get<bool>());
            h.st_values.push_back(number_from(c.at("st")));
        }
        h.selected_k = j.at("selected_k").get<int>();
        h.fallback_to_scree = j.at("fallback_to_scree").get<bool>();
        return h;
    });
}

json to_json(const BayesPosterior& bp) {
    json tasks = json::array();
    for (std::size_t i = 0; i < bp.tasks.size(); ++i) {
        const auto& t = bp.tasks[i];
        json dist = json::array();
        for (double v : t.distribution) dist.push_back(number(v));
        tasks.push_back({{"task", bp.labels[i]},
                         {"distribution", dist},
                         {"modal_factor", t.modal_factor},
                         {"modal_mass", number(t.modal_mass)},
                         {"loading_mean", number(t.loading_mean)},
                         {"loading_lo", number(t.loading_lo)},
                         {"loading_hi", number(t.loading_hi)}});
    }
    json rhat = json::object();
    for (const auto& [name, v] : bp.diagnostics.split_rhat) rhat[name] = number(v);
    json acc = json::array();
    for (double v : bp.diagnostics.acceptance_rates) acc.push_back(number(v));
    json kd = json::array();
    for (double v : bp.k_distribution) kd.push_back(number(v));
    return {{"k_distribution", kd},
            {"modal_k", bp.modal_k},
            {"draws", bp.draws},
            {"tasks", tasks},
            {"diagnostics", {{"acceptance_rates", acc}, {"split_rhat", rhat}, {"non_mixing", bp.diagnostics.non_mixing}}}};
}

BayesPosterior bayes_from_json(const json& j) {
    return guarded("Bayesian posterior", [&] {
        BayesPosterior bp;
        for (const auto& v : j.at("k_distribution")) bp.k_distribution.push_back(number_from(v));
        bp.modal_k = j.at("modal_k").get<int>();
        bp.draws = j.at("draws").get<int>();
        for (const auto& t : j.at("tasks")) {
            TaskPosterior tp;
            bp.labels.push_back(t.at("task").get<std::string>());
            for (const auto& v : t.at("distribution")) tp.distribution.push_back(number_from(v));
            tp.modal_factor = t.at("modal_factor").get<int>();
            tp.modal_mass = number_from(t.at("modal_mass"));
            tp.loading_mean = number_from(t.at("loading_mean"));
            tp.loading_lo = number_from(t.at("loading_lo"));
            tp.loading_hi = number_from(t.at("loading_hi"));
            bp.tasks.push_back(std::move(tp));
        }
        const auto& d = j.at("diagnostics");
        for (const auto& v : d.at("acceptance_rates")) bp.diagnostics.acceptance_rates.push_back(number_from(v));
        for (const auto& [name, v] : d.at("split_rhat").items()) bp.diagnostics.split_rhat[name] = number_from(v);
        bp.diagnostics.non_mixing = d.at("non_mixing").get<bool>();
        return bp;
    });
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::exception& e) {
        throw DataError("json: cannot parse " + path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace capfa
