#include "stackgame/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "stackgame/aclm.hpp"
#include "stackgame/config.hpp"
#include "stackgame/errors.hpp"
#include "stackgame/fbsde.hpp"
#include "stackgame/oracle.hpp"
#include "stackgame/riccati.hpp"
#include "stackgame/simulate.hpp"

namespace stackgame {

using nlohmann::json;

namespace {

struct Options {
    std::string command;
    std::string config;
    std::string out = ".";
    std::string format = "csv";
    std::optional<std::uint64_t> seed;
    std::optional<int> steps, paths;
    bool terminal = false;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Rows of a time series table, written as CSV or as a JSON array of objects.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    void write(const std::filesystem::path& base, const std::string& format) const {
        const auto path = base.string() + (format == "json" ? ".json" : ".csv");
        std::ofstream f(path);
        if (!f)
            throw IoError("cannot write " + path);
        if (format == "json") {
            json a = json::array();
            for (const auto& r : rows) {
                json o;
                for (std::size_t c = 0; c < header.size(); ++c)
                    o[header[c]] = r[c];
                a.push_back(o);
            }
            f << dump(a);
        } else {
            for (std::size_t c = 0; c < header.size(); ++c)
                f << (c ? "," : "") << header[c];
            f << "\n";
            for (const auto& r : rows) {
                for (std::size_t c = 0; c < r.size(); ++c)
                    f << (c ? "," : "") << fmt(r[c]);
                f << "\n";
            }
        }
        if (!f)
            throw IoError("failed writing " + path);
    }
};

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream f(path);
    if (!f || !(f << dump(j)))
        throw IoError("cannot write " + path.string());
}

json matrix_json(const Eigen::MatrixXd& M) {
    json rows = json::array();
    for (int r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < M.cols(); ++c)
            row.push_back(M(r, c));
        rows.push_back(row);
    }
    return rows;
}

json report_json(const ValidationReport& rep) {
    json checks = json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"residual", c.residual}});
    return {{"pass", rep.pass()}, {"checks", checks}};
}

bool both_full(const GameSpec& s) { return s.gamma1.is_full() && s.gamma2.is_full(); }

SolverSettings settings_of(const SolverConfig& sv) {
    SolverSettings st;
    st.tol = sv.tol;
    st.max_iter = sv.max_iter;
    return st;
}

FbsdeSolution solve_aol(const RunConfig& cfg, const Lattice& lat) {
    if (cfg.solver.continuation_steps > 0)
        return solve_by_continuation(cfg.spec, lat, System::Leader, cfg.solver.continuation_steps, nullptr,
                                     settings_of(cfg.solver));
    return solve_leader_system(cfg.spec, lat, settings_of(cfg.solver));
}

void add_columns(std::vector<std::string>& header, const std::string& name, int dim) {
    for (int r = 0; r < dim; ++r)
        header.push_back(dim == 1 ? name : name + "_" + std::to_string(r));
}

void append(std::vector<double>& row, const NodeProcess& p, int i, int j, bool present) {
    for (int r = 0; r < p.dim(); ++r)
        row.push_back(present ? p.at(i, j)(r) : std::numeric_limits<double>::quiet_NaN());
}

Table aol_table(const GameSpec& s, const Lattice& lat, const FbsdeSolution& sol) {
    Table t;
    t.header = {"t", "layer", "node"};
    for (const char* name : {"x", "k", "p1", "p2", "q1", "q2"})
        add_columns(t.header, name, s.n);
    add_columns(t.header, "u", s.m1);
    add_columns(t.header, "v", s.m2);
    for (int i = 0; i <= lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            const bool inner = i < lat.N();
            std::vector<double> row{lat.time(i), double(i), double(j)};
            append(row, sol.x, i, j, true);
            append(row, sol.k, i, j, true);
            append(row, sol.p1, i, j, true);
            append(row, sol.p2, i, j, true);
            append(row, sol.q1, i, j, inner);
            append(row, sol.q2, i, j, inner);
            append(row, sol.u, i, j, inner);
            append(row, sol.v, i, j, inner);
            t.rows.push_back(std::move(row));
        }
    return t;
}

json aol_summary(const RunConfig& cfg, const Lattice& lat, const FbsdeSolution& sol) {
    const LatticeCosts J = lattice_costs(cfg.spec, lat, sol.x, sol.u, sol.v);
    const MaxPrincipleReport mp = max_principle_residual(cfg.spec, lat, sol);
    json j = {{"N", lat.N()},
              {"method", cfg.solver.continuation_steps > 0 ? "continuation" : "picard"},
              {"iterations", sol.iterations},
              {"residual", sol.residual},
              {"J1", J.J1},
              {"J2", J.J2},
              {"clamped_fraction", sol.clamped_fraction},
              {"clamp_warning", sol.clamp_warning},
              {"max_projection_residual", {{"u", mp.max_r_u}, {"v", mp.max_r_v}}},
              {"vi_violations", mp.vi_violations}};
    if (both_full(cfg.spec)) {
        const RiccatiSolution ric = solve_riccati(build_augmented(cfg.spec), cfg.solver.riccati_grid);
        const DualityError d = duality_error(lat, sol, ric);
        j["duality"] = {{"P", d.P}, {"Q", d.Q}};
        j["duality_max_error"] = std::max(d.P, d.Q);
    }
    return j;
}

/// Per-node flags: control on the boundary of a coordinatewise set.
std::vector<int> clamped_flags(const ConstraintSet& set, const NodeProcess& c, const Lattice& lat, double tol) {
    std::vector<int> flags;
    const Eigen::VectorXd lo = set.lower_bounds(), hi = set.upper_bounds();
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            const Eigen::VectorXd z = c.at(i, j);
            int f = 0;
            for (int r = 0; r < z.size(); ++r)
                if (std::abs(z(r) - lo(r)) <= tol || std::abs(z(r) - hi(r)) <= tol)
                    f = 1;
            flags.push_back(f);
        }
    return flags;
}

json probe_json(const ProbeReport& p) {
    double min_delta = std::numeric_limits<double>::infinity();
    for (double d : p.delta)
        min_delta = std::min(min_delta, d);
    return {{"role", p.role == Role::Leader ? "leader" : "follower"},
            {"eps", p.eps},
            {"trials", p.delta.size()},
            {"improving", p.improving},
            {"min_delta", min_delta},
            {"worst_margin", p.worst_margin},
            {"pass", p.pass()}};
}

int cmd_validate(const RunConfig& cfg, const Options&, const std::filesystem::path& out, std::ostream& os) {
    const json rep = report_json(validate_spec(cfg.spec, cfg.solver.delta_R));
    write_json(out / "validation.json", rep);
    os << dump(rep);
    return rep["pass"].get<bool>() ? exit_ok : exit_validation;
}

int cmd_solve_aol(const RunConfig& cfg, const Options& o, const std::filesystem::path& out, std::ostream& os) {
    const Lattice lat(cfg.spec.T, cfg.solver.N, Layout::Full);
    const FbsdeSolution sol = solve_aol(cfg, lat);
    aol_table(cfg.spec, lat, sol).write(out / "aol_solution", o.format);
    json s = aol_summary(cfg, lat, sol);
    s["command"] = "solve-aol";
    write_json(out / "aol_summary.json", s);
    os << dump(s);
    return exit_ok;
}

int cmd_solve_aclm(const RunConfig& cfg, const Options& o, const std::filesystem::path& out, std::ostream& os) {
    const Lattice lat(cfg.spec.T, cfg.solver.N, Layout::Full);
    AclmSettings st;
    st.tol = cfg.solver.tol;
    st.max_iter = std::max(cfg.solver.max_iter, 1);
    const AclmSolution sol = solve_aclm(cfg.spec, lat, cfg.solver.K_gain, st);
    Table t;
    t.header = {"t", "layer", "node", "alpha", "beta", "gamma", "delta1", "delta2", "u2", "u1", "xstar"};
    for (int i = 0; i <= lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            const bool inner = i < lat.N();
            const double nan = std::numeric_limits<double>::quiet_NaN();
            auto at = [&](const NodeProcess& p) { return inner ? p.layer(i)(0, j) : nan; };
            t.rows.push_back({lat.time(i), double(i), double(j), sol.alpha.layer(i)(0, j), sol.beta.layer(i)(0, j),
                              sol.gamma.layer(i)(0, j), at(sol.delta1), at(sol.delta2), at(sol.u2), at(sol.u1),
                              sol.xstar.layer(i)(0, j)});
        }
    t.write(out / "aclm_solution", o.format);
    const H3Report h3 = h3_stationarity_check(cfg.spec, lat, sol);
    const json s = {{"command", "solve-aclm"},
                    {"N", lat.N()},
                    {"K", sol.K},
                    {"iterations", sol.iterations},
                    {"residual", sol.residual},
                    {"delta_residual", sol.delta_residual},
                    {"alpha2_residual", sol.alpha2_residual},
                    {"max_h3_du1", h3.max_du1},
                    {"max_abs_u2", h3.max_abs_u2},
                    {"sign_mismatches", h3.sign_mismatches}};
    write_json(out / "aclm_summary.json", s);
    os << dump(s);
    return exit_ok;
}

int cmd_riccati(const RunConfig& cfg, const Options& o, const std::filesystem::path& out, std::ostream& os) {
    const int M = cfg.solver.riccati_grid;
    const RiccatiSolution ric = solve_riccati(build_augmented(cfg.spec), M);
    const int d = 2 * cfg.spec.n;
    Table t;
    t.header = {"t"};
    for (const char* name : {"R", "Xi"})
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c)
                t.header.push_back(std::string(name) + "_" + std::to_string(r) + std::to_string(c));
    for (int k = 0; k <= M; ++k) {
        std::vector<double> row{ric.t[k]};
        for (const Eigen::MatrixXd* m : {&ric.R[k], &ric.Xi[k]})
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c)
                    row.push_back((*m)(r, c));
        t.rows.push_back(std::move(row));
    }
    t.write(out / "riccati", o.format);
    json s = {{"command", "riccati"}, {"grid", M}, {"R0", matrix_json(ric.R[0])}, {"Xi0", matrix_json(ric.Xi[0])}};
    if (both_full(cfg.spec)) {
        const Lattice lat(cfg.spec.T, cfg.solver.N, Layout::Full);
        const DualityError e = duality_error(lat, solve_aol(cfg, lat), ric);
        s["duality"] = {{"P", e.P}, {"Q", e.Q}};
        s["duality_max_error"] = std::max(e.P, e.Q);
    }
    if (cfg.spec.n == 1) {
        try {
            const UpsilonTransform ut = upsilon_transform(cfg.spec);
            const SymmetrizedRiccati sym = solve_symmetrized_riccati(ut, M);
            double sup = 0.0;
            for (int k = 0; k <= M; ++k)
                sup = std::max(sup, (sym.mapped.R[k] - ric.R[k]).cwiseAbs().maxCoeff());
            s["upsilon"] = {{"applicable", true},
                            {"lambda", ut.lambda},
                            {"mu", ut.mu},
                            {"max_asymmetry", ut.max_asymmetry},
                            {"min_eig_Q", ut.min_eig_Q},
                            {"min_eig_Phi", ut.min_eig_Phi},
                            {"sup_error", sup}};
        } catch (const AssumptionViolated& e) {
            s["upsilon"] = {{"applicable", false}, {"reason", e.what()}};
        }
    }
    write_json(out / "riccati_summary.json", s);
    os << dump(s);
    return exit_ok;
}

int cmd_simulate(const RunConfig& cfg, const Options& o, const std::filesystem::path& out, std::ostream& os) {
    const GameSpec& spec = cfg.spec;
    std::string source = cfg.strategy.empty() ? (both_full(spec) ? "riccati" : "lattice") : cfg.strategy;
    const Lattice lat(spec.T, cfg.solver.N, Layout::Full);
    std::optional<RiccatiSolution> ric;
    std::optional<FbsdeSolution> sol;
    std::optional<AclmSolution> aclm;
    std::unique_ptr<Strategy> st;
    if (source == "riccati") {
        ric = solve_riccati(build_augmented(spec), cfg.solver.riccati_grid);
        st = riccati_strategy(spec, *ric);
    } else if (source == "lattice") {
        sol = solve_aol(cfg, lat);
        st = lattice_strategy(lat, sol->u, sol->v, LatticeLookup::Nearest, &sol->x);
    } else {
        aclm = solve_aclm(spec, lat, cfg.solver.K_gain);
        st = aclm_strategy(spec, lat, *aclm, LatticeLookup::Nearest, cfg.simulation.steps);
    }
    std::vector<Eigen::VectorXd> terminal;
    const CostEstimate e = simulate_costs(spec, *st, cfg.simulation, o.terminal ? &terminal : nullptr);
    if (o.terminal) {
        Table t;
        t.header = {"path"};
        add_columns(t.header, "x", spec.n);
        for (std::size_t p = 0; p < terminal.size(); ++p) {
            std::vector<double> row{double(p)};
            for (int r = 0; r < spec.n; ++r)
                row.push_back(terminal[p](r));
            t.rows.push_back(std::move(row));
        }
        t.write(out / "terminal_states", o.format);
    }
    const json s = {{"command", "simulate"},
                    {"source", source},
                    {"J1", {{"mean", e.J1}, {"stderr", e.se1}}},
                    {"J2", {{"mean", e.J2}, {"stderr", e.se2}}},
                    {"paths", e.paths},
                    {"samples", e.samples},
                    {"steps", cfg.simulation.steps},
                    {"seed", cfg.simulation.seed},
                    {"antithetic", cfg.simulation.antithetic}};
    write_json(out / "simulate.json", s);
    os << dump(s);
    return exit_ok;
}

int cmd_verify(const RunConfig& cfg, const Options&, const std::filesystem::path& out, std::ostream& os) {
    const GameSpec& spec = cfg.spec;
    const Lattice lat(spec.T, cfg.solver.N, Layout::Full);
    const FbsdeSolution sol = solve_aol(cfg, lat);
    const MaxPrincipleReport mp = max_principle_residual(spec, lat, sol);
    const bool mp_pass = mp.max_r_u <= 1e-8 && mp.max_r_v <= 1e-8 && mp.vi_violations == 0;
    json probes = json::array();
    bool pass = mp_pass;
    for (double eps : {0.01, 0.05})
        for (Role r : {Role::Follower, Role::Leader}) {
            const ProbeReport p = perturbation_probe(spec, lat, sol.u, sol.v, cfg.simulation, r, 64, eps);
            pass = pass && p.pass();
            probes.push_back(probe_json(p));
        }
    json s = {{"command", "verify"},
              {"N", lat.N()},
              {"max_principle",
               {{"max_r_u", mp.max_r_u},
                {"max_r_v", mp.max_r_v},
                {"vi_violations", mp.vi_violations},
                {"probes_per_node", mp.probes},
                {"pass", mp_pass}}},
              {"perturbation", probes}};
    if (spec.n == 1 && spec.m1 == 1 && spec.m2 == 1 && spec.gamma2.is_full()) {
        const AclmSolution a = solve_aclm(spec, lat, cfg.solver.K_gain);
        const H3Report h3 = h3_stationarity_check(spec, lat, a);
        const bool h3_pass = h3.max_du1 <= 1e-8 && h3.sign_mismatches == 0 && a.residual <= 1e-8;
        pass = pass && h3_pass;
        s["h3_stationarity"] = {{"max_du1", h3.max_du1},
                                {"sign_mismatches", h3.sign_mismatches},
                                {"zero_switches", h3.zero_switches},
                                {"reconstruction_residual", a.residual},
                                {"pass", h3_pass}};
    }
    s["pass"] = pass;
    write_json(out / "verify.json", s);
    os << dump(s);
    return exit_ok;
}

int cmd_oracle_compare(const RunConfig& cfg, const Options&, const std::filesystem::path& out, std::ostream& os) {
    const GameSpec& spec = cfg.spec;
    const Lattice lat(spec.T, cfg.solver.N, Layout::Full);
    const FbsdeSolution sol = solve_aol(cfg, lat);
    const OracleLeaderResult orc = oracle_leader(spec, lat, {}, &sol.u);
    const int last = lat.N() - 1;
    const double du = orc.u.sup_distance(sol.u, 0, last), dv = orc.v.sup_distance(sol.v, 0, last);
    const LatticeCosts J = lattice_costs(spec, lat, sol.x, sol.u, sol.v);
    json restarts = json::array();
    for (const auto& r : orc.restarts)
        restarts.push_back({{"start", r.start},
                            {"J1", r.J1},
                            {"iterations", r.iterations},
                            {"gradient_map_norm", r.gradient_map_norm}});
    json s = {{"command", "oracle-compare"},
              {"N", lat.N()},
              {"max_control_delta", std::max(du, dv)},
              {"u_delta", du},
              {"v_delta", dv},
              {"J1", {{"max_principle", J.J1}, {"oracle", orc.J1}, {"delta", std::abs(J.J1 - orc.J1)}}},
              {"J2", {{"max_principle", J.J2}, {"oracle", orc.J2}, {"delta", std::abs(J.J2 - orc.J2)}}},
              {"restarts", restarts}};
    if (spec.gamma1.is_coordinatewise() && spec.gamma2.is_coordinatewise())
        s["clamped_sets_identical"] = clamped_flags(spec.gamma1, sol.u, lat, 1e-7) ==
                                          clamped_flags(spec.gamma1, orc.u, lat, 1e-7) &&
                                      clamped_flags(spec.gamma2, sol.v, lat, 1e-7) ==
                                          clamped_flags(spec.gamma2, orc.v, lat, 1e-7);
    write_json(out / "oracle_compare.json", s);
    os << dump(s);
    return exit_ok;
}

json error_json(const char* type, const std::string& msg) { return {{"error", type}, {"message", msg}}; }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"LQ Stackelberg games under convex control constraints"};
    app.require_subcommand(1);
    Options o;
    const std::vector<std::string> commands = {"validate", "solve-aol",    "solve-aclm",    "riccati",
                                               "simulate", "verify", "oracle-compare"};
    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", o.config, "game configuration (JSON)")->required();
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json"}));
        sub->add_option("--seed", o.seed, "override simulation.seed");
        sub->add_option("--steps", o.steps, "override simulation.steps");
        sub->add_option("--paths", o.paths, "override simulation.paths");
        if (name == "simulate")
            sub->add_flag("--terminal", o.terminal, "write per-path terminal states");
        sub->callback([&o, name] { o.command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << dump(error_json("usage", e.what()));
        return exit_validation;
    }

    try {
        RunConfig cfg = load_config(o.config);
        if (o.seed)
            cfg.simulation.seed = *o.seed;
        if (o.steps)
            cfg.simulation.steps = *o.steps;
        if (o.paths)
            cfg.simulation.paths = *o.paths;
        cfg.simulation.check();
        std::error_code ec;
        std::filesystem::create_directories(o.out, ec);
        if (ec)
            throw IoError("cannot create output directory " + o.out + ": " + ec.message());
        const std::filesystem::path dir(o.out);
        if (o.command == "validate")
            return cmd_validate(cfg, o, dir, out);
        const ValidationReport rep = validate_spec(cfg.spec, cfg.solver.delta_R);
        if (!rep.pass()) {
            json e = error_json("validation", "configuration fails validation");
            e["report"] = report_json(rep);
            err << dump(e);
            return exit_validation;
        }
        if (o.command == "solve-aol")
            return cmd_solve_aol(cfg, o, dir, out);
        if (o.command == "solve-aclm")
            return cmd_solve_aclm(cfg, o, dir, out);
        if (o.command == "riccati")
            return cmd_riccati(cfg, o, dir, out);
        if (o.command == "simulate")
            return cmd_simulate(cfg, o, dir, out);
        if (o.command == "verify")
            return cmd_verify(cfg, o, dir, out);
        return cmd_oracle_compare(cfg, o, dir, out);
    } catch (const MalformedSpec& e) {
        err << dump(error_json("malformed_spec", e.what()));
        return exit_validation;
    } catch (const NotConverged& e) {
        json j = error_json("not_converged", e.what());
        j["history_tail"] = std::vector<double>(e.history.end() - std::min<std::size_t>(e.history.size(), 10),
                                                e.history.end());
        if (e.alpha >= 0)
            j["alpha"] = e.alpha;
        err << dump(j);
        return exit_not_converged;
    } catch (const IoError& e) {
        err << dump(error_json("io", e.what()));
        return exit_io;
    } catch (const std::exception& e) {
        err << dump(error_json("error", e.what()));
        return exit_error;
    }
}

}  // namespace stackgame
