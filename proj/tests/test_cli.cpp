#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "stackgame/cli.hpp"
#include "stackgame/config.hpp"
#include "stackgame/errors.hpp"

using namespace stackgame;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "stackgame");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("stackgame_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

json fixture_doc(const std::string& name) { return json::parse(slurp(fixtures::path(name))); }

fs::path write_doc(const fs::path& dir, const json& doc) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << doc.dump(2);
    return p;
}

}  // namespace

TEST_CASE("fixture configurations round trip") {
    for (const char* name : {"scalar_fullspace.json", "constrained_n3.json", "continuation.json",
                             "continuation_plain.json"}) {
        CAPTURE(name);
        const RunConfig a = load_config(fixtures::path(name));
        const RunConfig b = parse_config(to_json(a));
        CHECK(a == b);
        CHECK(dump(to_json(a)) == dump(to_json(b)));
    }
}

TEST_CASE("piecewise coefficients and set variants round trip") {
    json doc = fixture_doc("scalar_fullspace.json");
    doc["coefficients"]["A"] = json::array({{{"t_from", 0.5}, {"matrix", {{0.4}}}}, {{"t_from", 0.0}, {"matrix", 0.2}}});
    const RunConfig a = parse_config(doc);
    REQUIRE(a.spec.breakpoints.size() == 2);
    CHECK(a.spec.at(0.25).A(0, 0) == doctest::Approx(0.2));
    CHECK(a.spec.at(0.75).A(0, 0) == doctest::Approx(0.4));
    CHECK(parse_config(to_json(a)) == a);

    const std::vector<ConstraintSet> sets = {
        ConstraintSet::box((Eigen::VectorXd(2) << -1, -INFINITY).finished(),
                           (Eigen::VectorXd(2) << INFINITY, 2).finished()),
        ConstraintSet::ball((Eigen::VectorXd(2) << 0.5, -0.5).finished(), 1.5),
        ConstraintSet::halfspace((Eigen::VectorXd(2) << 1, 2).finished(), 0.25),
        ConstraintSet::orthant(2),
        ConstraintSet::full(2),
    };
    for (const auto& s : sets) {
        CAPTURE(s.type_name());
        CHECK(constraint_from_json(to_json(s), 2) == s);
        CHECK(constraint_from_json(json::parse(to_json(s).dump()), 2) == s);
    }
    CHECK(to_json(sets[0])["lower"][1] == "-inf");
}

TEST_CASE("malformed configurations") {
    const json good = fixture_doc("scalar_fullspace.json");
    json d = good;
    d.erase("horizon");
    CHECK_THROWS_AS(parse_config(d), MalformedSpec);
    d = good;
    d["coefficients"]["A"] = {{1.0, 2.0}};
    CHECK_THROWS_AS(parse_config(d), MalformedSpec);
    d = good;
    d["constraints"]["gamma1"] = {{"type", "pyramid"}};
    CHECK_THROWS_AS(parse_config(d), MalformedSpec);
    d = good;
    d["coefficients"]["A"] = json::array({{{"t_from", 0.3}, {"matrix", 0.2}}});
    CHECK_THROWS_AS(parse_config(d), MalformedSpec);
    d = good;
    d["solver"]["N"] = "eight";
    CHECK_THROWS_AS(parse_config(d), MalformedSpec);
    d = good;
    d["simulation"]["strategy"] = "oracle";
    CHECK_THROWS_AS(parse_config(d), MalformedSpec);
    CHECK_THROWS_AS(parse_config(json::array()), MalformedSpec);

    const fs::path dir = scratch("malformed");
    std::ofstream(dir / "broken.json") << "{ \"horizon\": ";
    CHECK_THROWS_AS(load_config((dir / "broken.json").string()), MalformedSpec);
    CHECK_THROWS_AS(load_config((dir / "absent.json").string()), IoError);

    const Result r = invoke({"validate", "--config", (dir / "broken.json").string(), "--out", dir.string()});
    CHECK(r.code == exit_validation);
    CHECK(json::parse(r.err)["error"] == "malformed_spec");
    const Result m = invoke({"validate", "--config", (dir / "absent.json").string(), "--out", dir.string()});
    CHECK(m.code == exit_io);
    CHECK(json::parse(m.err)["error"] == "io");
}

TEST_CASE("usage errors") {
    CHECK(invoke({}).code != exit_ok);
    CHECK(invoke({"solve-everything", "--config", "x.json"}).code != exit_ok);
    const Result r = invoke({"validate"});
    CHECK(r.code == exit_validation);
    CHECK(json::parse(r.err)["error"] == "usage");
    CHECK(invoke({"validate", "--config", fixtures::path("scalar_fullspace.json"), "--format", "xml"}).code ==
          exit_validation);
}

TEST_CASE("validate") {
    const fs::path dir = scratch("validate");
    const Result ok = invoke({"validate", "--config", fixtures::path("scalar_fullspace.json"), "--out", dir.string()});
    CHECK(ok.code == exit_ok);
    const json v = read_json(dir / "validation.json");
    CHECK(v["pass"] == true);
    CHECK(v["checks"].size() > 0);
    CHECK(json::parse(ok.out) == v);

    json doc = fixture_doc("scalar_fullspace.json");
    doc["coefficients"]["R2"] = 0.0;
    const fs::path cfg = write_doc(dir, doc);
    const Result bad = invoke({"validate", "--config", cfg.string(), "--out", (dir / "bad").string()});
    CHECK(bad.code == exit_validation);
    CHECK(read_json(dir / "bad" / "validation.json")["pass"] == false);

    const Result solve = invoke({"solve-aol", "--config", cfg.string(), "--out", (dir / "bad").string()});
    CHECK(solve.code == exit_validation);
    const json e = json::parse(solve.err);
    CHECK(e["error"] == "validation");
    CHECK(e["report"]["pass"] == false);
}

TEST_CASE("solve-aol and riccati summaries") {
    const fs::path dir = scratch("aol");
    const std::string cfg = fixtures::path("scalar_fullspace.json");
    REQUIRE(invoke({"solve-aol", "--config", cfg, "--out", dir.string()}).code == exit_ok);
    const json s = read_json(dir / "aol_summary.json");
    const double dt = 1.0 / 8;
    CHECK(s["residual"].get<double>() <= 1e-10);
    CHECK(s["vi_violations"] == 0);
    CHECK(s["duality_max_error"].get<double>() <= 0.5 * dt);
    CHECK(fs::exists(dir / "aol_solution.csv"));

    REQUIRE(invoke({"riccati", "--config", cfg, "--out", dir.string()}).code == exit_ok);
    const json r = read_json(dir / "riccati_summary.json");
    CHECK(r["duality_max_error"].get<double>() <= 0.5 * dt);
    CHECK(r["upsilon"]["applicable"].is_boolean());
    CHECK(fs::exists(dir / "riccati.csv"));

    REQUIRE(invoke({"solve-aol", "--config", cfg, "--out", dir.string(), "--format", "json"}).code == exit_ok);
    const json table = read_json(dir / "aol_solution.json");
    CHECK(!table.empty());
}

TEST_CASE("csv output carries full precision") {
    const fs::path dir = scratch("csv");
    REQUIRE(invoke({"riccati", "--config", fixtures::path("scalar_fullspace.json"), "--out", dir.string()}).code ==
            exit_ok);
    std::ifstream f(dir / "riccati.csv");
    std::string header, line;
    std::getline(f, header);
    int long_fields = 0;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ','))
            if (field.find_first_of("123456789") != std::string::npos && field.size() >= 17)
                ++long_fields;
    }
    CHECK(long_fields > 0);
}

TEST_CASE("oracle-compare on the constrained fixture") {
    const fs::path dir = scratch("oracle");
    REQUIRE(invoke({"oracle-compare", "--config", fixtures::path("constrained_n3.json"), "--out", dir.string()})
                .code == exit_ok);
    const json s = read_json(dir / "oracle_compare.json");
    CHECK(s["max_control_delta"].get<double>() <= 1e-4);
    CHECK(s["J1"]["delta"].get<double>() <= 1e-6);
    CHECK(s["J2"]["delta"].get<double>() <= 1e-6);
    CHECK(s["clamped_sets_identical"] == true);
}

TEST_CASE("solve-aclm summary") {
    const fs::path dir = scratch("aclm");
    REQUIRE(invoke({"solve-aclm", "--config", fixtures::path("scalar_fullspace.json"), "--out", dir.string()})
                .code == exit_ok);
    const json s = read_json(dir / "aclm_summary.json");
    CHECK(s["residual"].get<double>() <= 1e-8);
    CHECK(s["max_abs_u2"].get<double>() <= 0.5 + 1e-12);
    CHECK(s["max_h3_du1"].get<double>() <= 1e-8);
    CHECK(s["sign_mismatches"] == 0);
}

TEST_CASE("plain Picard failure reports not converged") {
    const fs::path dir = scratch("plain");
    const Result r = invoke({"solve-aol", "--config", fixtures::path("continuation_plain.json"), "--out", dir.string()});
    CHECK(r.code == exit_not_converged);
    const json e = json::parse(r.err);
    CHECK(e["error"] == "not_converged");
    CHECK(e["history_tail"].is_array());
    CHECK(!e["history_tail"].empty());

    const Result c = invoke({"solve-aol", "--config", fixtures::path("continuation.json"), "--out", dir.string()});
    CHECK(c.code == exit_ok);
    CHECK(read_json(dir / "aol_summary.json")["residual"].get<double>() <= 1e-10);
}

TEST_CASE("simulate is reproducible and thread independent") {
    const fs::path dir = scratch("simulate");
    json doc = fixture_doc("scalar_fullspace.json");
    std::string reference;
    for (int threads : {1, 2, 8}) {
        CAPTURE(threads);
        doc["simulation"]["threads"] = threads;
        const fs::path cfg = write_doc(dir, doc);
        const fs::path out = dir / std::to_string(threads);
        REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", out.string()}).code == exit_ok);
        const std::string text = slurp(out / "simulate.json");
        if (reference.empty())
            reference = text;
        CHECK(text == reference);
    }
    const json s = json::parse(reference);
    CHECK(s["source"] == "riccati");
    CHECK(s["paths"] == 4000);
    CHECK(s["samples"] == 2000);
    CHECK(s["seed"] == 20261018);

    doc["simulation"].erase("threads");
    const fs::path cfg = write_doc(dir, doc);
    for (const char* threads : {"1", "3"}) {
        setenv("STACKGAME_THREADS", threads, 1);
        const fs::path out = dir / (std::string("env") + threads);
        REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", out.string()}).code == exit_ok);
        CHECK(slurp(out / "simulate.json") == reference);
    }
    unsetenv("STACKGAME_THREADS");
}

TEST_CASE("simulate overrides and terminal states") {
    const fs::path dir = scratch("overrides");
    const std::string cfg = fixtures::path("scalar_fullspace.json");
    REQUIRE(invoke({"simulate", "--config", cfg, "--out", dir.string(), "--seed", "7", "--paths", "200", "--steps",
                    "20", "--terminal"})
                .code == exit_ok);
    const json s = read_json(dir / "simulate.json");
    CHECK(s["seed"] == 7);
    CHECK(s["paths"] == 200);
    CHECK(s["steps"] == 20);
    std::ifstream f(dir / "terminal_states.csv");
    REQUIRE(f.good());
    int lines = 0;
    for (std::string line; std::getline(f, line);)
        ++lines;
    CHECK(lines == 201);

    REQUIRE(invoke({"simulate", "--config", cfg, "--out", dir.string(), "--seed", "8", "--paths", "200", "--steps",
                    "20"})
                .code == exit_ok);
    CHECK(read_json(dir / "simulate.json")["J1"]["mean"] != s["J1"]["mean"]);

    CHECK(invoke({"simulate", "--config", cfg, "--out", dir.string(), "--paths", "0"}).code != exit_ok);
}

TEST_CASE("lattice and aclm simulation sources") {
    const fs::path dir = scratch("sources");
    json doc = fixture_doc("constrained_n3.json");
    doc["simulation"]["paths"] = 400;
    doc["simulation"]["steps"] = 30;
    fs::path cfg = write_doc(dir, doc);
    REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", dir.string()}).code == exit_ok);
    CHECK(read_json(dir / "simulate.json")["source"] == "lattice");

    doc = fixture_doc("scalar_fullspace.json");
    doc["simulation"]["strategy"] = "aclm";
    doc["simulation"]["paths"] = 400;
    cfg = write_doc(dir, doc);
    REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", dir.string()}).code == exit_ok);
    const json s = read_json(dir / "simulate.json");
    CHECK(s["source"] == "aclm");
    CHECK(std::isfinite(s["J1"]["mean"].get<double>()));
}

TEST_CASE("standalone executable") {
    const char* exe = std::getenv("STACKGAME_CLI");
    if (!exe)
        return;
    const fs::path dir = scratch("exe");
    const std::string base = std::string(exe) + " validate --out " + dir.string() + " --config ";
    int status = std::system((base + fixtures::path("scalar_fullspace.json") + " > /dev/null").c_str());
    CHECK(WEXITSTATUS(status) == exit_ok);
    status = std::system((base + (dir / "absent.json").string() + " 2> /dev/null").c_str());
    CHECK(WEXITSTATUS(status) == exit_io);
}
