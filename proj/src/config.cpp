#include "stackgame/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "stackgame/errors.hpp"

namespace stackgame {

using nlohmann::json;

namespace {

const char* const coefficient_names[] = {"A", "B1", "B2", "C", "D1", "D2", "Q1", "Q2", "R1", "R2"};

Eigen::MatrixXd& member(Coefficients& c, const std::string& name) {
    static const std::map<std::string, Eigen::MatrixXd Coefficients::*> table = {
        {"A", &Coefficients::A},   {"B1", &Coefficients::B1}, {"B2", &Coefficients::B2}, {"C", &Coefficients::C},
        {"D1", &Coefficients::D1}, {"D2", &Coefficients::D2}, {"Q1", &Coefficients::Q1}, {"Q2", &Coefficients::Q2},
        {"R1", &Coefficients::R1}, {"R2", &Coefficients::R2}};
    return c.*table.at(name);
}

const Eigen::MatrixXd& member(const Coefficients& c, const std::string& name) {
    return member(const_cast<Coefficients&>(c), name);
}

double number(const json& j, const std::string& what) {
    if (j.is_number())
        return j.get<double>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf" || s == "+inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
    }
    throw MalformedSpec(what + ": expected a number");
}

json number_json(double v) {
    if (std::isinf(v))
        return v > 0 ? json("inf") : json("-inf");
    return v;
}

const json& key(const json& j, const std::string& k, const std::string& where) {
    if (!j.is_object() || !j.contains(k))
        throw MalformedSpec(where + ": missing key \"" + k + "\"");
    return j.at(k);
}

Eigen::MatrixXd matrix(const json& j, int rows, int cols, const std::string& what) {
    Eigen::MatrixXd M(rows, cols);
    if (j.is_number()) {
        if (rows != 1 || cols != 1)
            throw MalformedSpec(what + ": scalar given for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " matrix");
        M(0, 0) = j.get<double>();
        return M;
    }
    if (!j.is_array() || static_cast<int>(j.size()) != rows)
        throw MalformedSpec(what + ": expected " + std::to_string(rows) + " rows");
    for (int r = 0; r < rows; ++r) {
        const json& row = j[r];
        if (row.is_number() && cols == 1) {
            M(r, 0) = row.get<double>();
            continue;
        }
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            throw MalformedSpec(what + ": row " + std::to_string(r) + " needs " + std::to_string(cols) + " entries");
        for (int c = 0; c < cols; ++c)
            M(r, c) = number(row[c], what);
    }
    return M;
}

Eigen::VectorXd vector(const json& j, int dim, const std::string& what) {
    if (j.is_number() && dim == 1)
        return Eigen::VectorXd::Constant(1, j.get<double>());
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        throw MalformedSpec(what + ": expected " + std::to_string(dim) + " entries");
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i)
        v(i) = j[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : number(j[i], what);
    return v;
}

json matrix_json(const Eigen::MatrixXd& M) {
    json rows = json::array();
    for (int r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < M.cols(); ++c)
            row.push_back(number_json(M(r, c)));
        rows.push_back(row);
    }
    return rows;
}

json vector_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i)
        a.push_back(number_json(v(i)));
    return a;
}

/// Pairs (t_from, matrix) of one coefficient.
std::vector<std::pair<double, json>> coefficient_pieces(const json& j, const std::string& name) {
    if (j.is_array() && !j.empty() && j[0].is_object()) {
        std::vector<std::pair<double, json>> out;
        for (const json& e : j)
            out.emplace_back(number(key(e, "t_from", name), name + ".t_from"), key(e, "matrix", name));
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        if (out.front().first != 0.0)
            throw MalformedSpec(name + ": first breakpoint must be t_from = 0");
        return out;
    }
    return {{0.0, j}};
}

template <class T>
T optional(const json& j, const char* k, T fallback) {
    if (!j.is_object() || !j.contains(k) || j.at(k).is_null())
        return fallback;
    try {
        return j.at(k).get<T>();
    } catch (const json::exception& e) {
        throw MalformedSpec(std::string(k) + ": " + e.what());
    }
}

}  // namespace

ConstraintSet constraint_from_json(const json& j, int dim) {
    const std::string type = optional<std::string>(j, "type", "");
    const double inf = std::numeric_limits<double>::infinity();
    if (type == "full_space")
        return ConstraintSet::full(dim);
    if (type == "orthant")
        return ConstraintSet::orthant(dim);
    if (type == "box") {
        Eigen::VectorXd lo = vector(key(j, "lower", "box"), dim, "box.lower");
        Eigen::VectorXd hi = vector(key(j, "upper", "box"), dim, "box.upper");
        for (int i = 0; i < dim; ++i) {
            if (std::isnan(lo(i)))
                lo(i) = -inf;
            if (std::isnan(hi(i)))
                hi(i) = inf;
        }
        return ConstraintSet::box(lo, hi);
    }
    if (type == "ball")
        return ConstraintSet::ball(vector(key(j, "center", "ball"), dim, "ball.center"),
                                   number(key(j, "radius", "ball"), "ball.radius"));
    if (type == "halfspace")
        return ConstraintSet::halfspace(vector(key(j, "normal", "halfspace"), dim, "halfspace.normal"),
                                        number(key(j, "offset", "halfspace"), "halfspace.offset"));
    if (type == "interval") {
        if (dim != 1)
            throw MalformedSpec("interval constraint needs a scalar control");
        return ConstraintSet::interval(number(key(j, "lo", "interval"), "interval.lo"),
                                       number(key(j, "hi", "interval"), "interval.hi"));
    }
    throw MalformedSpec("unknown constraint type \"" + type + "\"");
}

json to_json(const ConstraintSet& set) {
    json j;
    j["type"] = set.type_name();
    std::visit(
        [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Box>) {
                j["lower"] = vector_json(s.lower);
                j["upper"] = vector_json(s.upper);
            } else if constexpr (std::is_same_v<S, EuclideanBall>) {
                j["center"] = vector_json(s.center);
                j["radius"] = s.radius;
            } else if constexpr (std::is_same_v<S, Halfspace>) {
                j["normal"] = vector_json(s.a);
                j["offset"] = s.b;
            } else if constexpr (std::is_same_v<S, Interval>) {
                j["lo"] = number_json(s.lo);
                j["hi"] = number_json(s.hi);
            }
        },
        set.shape());
    return j;
}

RunConfig parse_config(const json& doc) {
    if (!doc.is_object())
        throw MalformedSpec("config must be a JSON object");
    RunConfig cfg;
    GameSpec& s = cfg.spec;
    const json& dims = key(doc, "dimensions", "config");
    s.n = optional<int>(dims, "n", 0);
    s.m1 = optional<int>(dims, "m1", 0);
    s.m2 = optional<int>(dims, "m2", 0);
    if (s.n < 1 || s.m1 < 1 || s.m2 < 1)
        throw MalformedSpec("dimensions: n, m1, m2 must be positive integers");
    s.T = number(key(doc, "horizon", "config"), "horizon");
    if (!(s.T > 0))
        throw MalformedSpec("horizon must be positive");
    s.x0 = vector(key(doc, "x0", "config"), s.n, "x0");

    const json& coefs = key(doc, "coefficients", "config");
    const std::map<std::string, std::pair<int, int>> shapes = {
        {"A", {s.n, s.n}},   {"B1", {s.n, s.m1}},  {"B2", {s.n, s.m2}},  {"C", {s.n, s.n}},
        {"D1", {s.n, s.m1}}, {"D2", {s.n, s.m2}},  {"Q1", {s.n, s.n}},   {"Q2", {s.n, s.n}},
        {"R1", {s.m1, s.m1}}, {"R2", {s.m2, s.m2}}};
    std::map<std::string, std::vector<std::pair<double, json>>> pieces;
    std::vector<double> breaks;
    for (const char* name : coefficient_names) {
        pieces[name] = coefficient_pieces(key(coefs, name, "coefficients"), name);
        for (const auto& p : pieces[name])
            breaks.push_back(p.first);
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    s.breakpoints = breaks;
    s.pieces.clear();
    for (double b : breaks) {
        Coefficients c;
        for (const char* name : coefficient_names) {
            const auto& list = pieces[name];
            std::size_t k = 0;
            while (k + 1 < list.size() && list[k + 1].first <= b)
                ++k;
            const auto [r, cc] = shapes.at(name);
            member(c, name) = matrix(list[k].second, r, cc, std::string("coefficients.") + name);
        }
        s.pieces.push_back(std::move(c));
    }

    const json& term = key(doc, "terminal", "config");
    s.Phi1 = matrix(key(term, "Phi1", "terminal"), s.n, s.n, "terminal.Phi1");
    s.Phi2 = matrix(key(term, "Phi2", "terminal"), s.n, s.n, "terminal.Phi2");

    s.gamma1 = ConstraintSet::full(s.m1);
    s.gamma2 = ConstraintSet::full(s.m2);
    if (doc.contains("constraints")) {
        const json& con = doc.at("constraints");
        if (con.contains("gamma1"))
            s.gamma1 = constraint_from_json(con.at("gamma1"), s.m1);
        if (con.contains("gamma2"))
            s.gamma2 = constraint_from_json(con.at("gamma2"), s.m2);
    }
    s.check_dimensions();

    const json solver = doc.value("solver", json::object());
    SolverConfig& sv = cfg.solver;
    sv.N = optional<int>(solver, "N", sv.N);
    sv.tol = optional<double>(solver, "tol", sv.tol);
    sv.max_iter = optional<int>(solver, "max_iter", sv.max_iter);
    sv.continuation_steps = optional<int>(solver, "continuation_steps", sv.continuation_steps);
    sv.K_gain = optional<double>(solver, "K_gain", sv.K_gain);
    sv.riccati_grid = optional<int>(solver, "riccati_grid", sv.riccati_grid);
    sv.delta_R = optional<double>(solver, "delta_R", sv.delta_R);
    if (sv.N < 1 || sv.N > Lattice::max_full_steps)
        throw MalformedSpec("solver.N must lie in [1, " + std::to_string(Lattice::max_full_steps) + "]");
    if (sv.riccati_grid < 1 || sv.continuation_steps < 0 || !(sv.tol > 0) || sv.max_iter < 1)
        throw MalformedSpec("solver: invalid tolerance, iteration count, or grid");

    const json sim = doc.value("simulation", json::object());
    SimConfig& sc = cfg.simulation;
    sc.paths = optional<int>(sim, "paths", sc.paths);
    sc.steps = optional<int>(sim, "steps", sc.steps);
    sc.seed = optional<std::uint64_t>(sim, "seed", sc.seed);
    sc.antithetic = optional<bool>(sim, "antithetic", sc.antithetic);
    sc.threads = optional<int>(sim, "threads", sc.threads);
    cfg.strategy = optional<std::string>(sim, "strategy", "");
    if (sc.paths < 1 || sc.steps < 1)
        throw MalformedSpec("simulation: paths and steps must be positive");
    if (!cfg.strategy.empty() && cfg.strategy != "riccati" && cfg.strategy != "lattice" && cfg.strategy != "aclm")
        throw MalformedSpec("simulation.strategy must be riccati, lattice, or aclm");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json doc;
    try {
        doc = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw MalformedSpec(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc);
}

json to_json(const RunConfig& cfg) {
    const GameSpec& s = cfg.spec;
    json doc;
    doc["dimensions"] = {{"n", s.n}, {"m1", s.m1}, {"m2", s.m2}};
    doc["horizon"] = s.T;
    doc["x0"] = vector_json(s.x0);
    json coefs;
    for (const char* name : coefficient_names) {
        if (s.pieces.size() == 1) {
            coefs[name] = matrix_json(member(s.pieces[0], name));
            continue;
        }
        json list = json::array();
        for (std::size_t k = 0; k < s.pieces.size(); ++k)
            list.push_back({{"t_from", s.breakpoints[k]}, {"matrix", matrix_json(member(s.pieces[k], name))}});
        coefs[name] = list;
    }
    doc["coefficients"] = coefs;
    doc["terminal"] = {{"Phi1", matrix_json(s.Phi1)}, {"Phi2", matrix_json(s.Phi2)}};
    doc["constraints"] = {{"gamma1", to_json(s.gamma1)}, {"gamma2", to_json(s.gamma2)}};
    const SolverConfig& sv = cfg.solver;
    doc["solver"] = {{"N", sv.N},
                     {"tol", sv.tol},
                     {"max_iter", sv.max_iter},
                     {"continuation_steps", sv.continuation_steps},
                     {"K_gain", sv.K_gain},
                     {"riccati_grid", sv.riccati_grid},
                     {"delta_R", sv.delta_R}};
    const SimConfig& sc = cfg.simulation;
    doc["simulation"] = {{"paths", sc.paths},
                         {"steps", sc.steps},
                         {"seed", sc.seed},
                         {"antithetic", sc.antithetic},
                         {"threads", sc.threads}};
    if (!cfg.strategy.empty())
        doc["simulation"]["strategy"] = cfg.strategy;
    return doc;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace stackgame
