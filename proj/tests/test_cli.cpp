#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

#include "miscale/analysis.h"
#include "support.h"

using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
};

std::string dir()
{
    static const std::string d = [] {
        auto p = testing::scratch("cli");
        std::filesystem::remove_all(p);
        std::filesystem::create_directories(p);
        return p.string();
    }();
    return d;
}

Run run(const std::string& args, const std::string& env = "")
{
    const std::string cmd = "cd '" + dir() + "' && " + env + " '" MISCALE_BIN "' " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    std::string out;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string path(const std::string& name)
{
    return dir() + "/" + name;
}

json read_json(const std::string& name)
{
    std::ifstream in(path(name));
    return json::parse(in);
}

std::size_t lines(const std::string& name)
{
    std::ifstream in(path(name));
    std::size_t n = 0;
    for (std::string l; std::getline(in, l);) ++n;
    return n;
}

} // namespace

TEST_CASE("synth writes data, descriptor and oracle")
{
    REQUIRE(run("synth gauss --kind pair --rho 0.9 --samples 4000 --seed 1 --out g.raw").code == 0);
    const json meta = read_json("g.raw.json");
    CHECK(meta["oracle_mi_nats"].get<double>() == doctest::Approx(-0.5 * std::log(1 - 0.81)).epsilon(1e-12));
    CHECK(meta["N"] == 4000);
    CHECK(meta["D"] == 2);
    CHECK(meta.contains("wall_clock_s"));
    CHECK(meta["config"]["rho"] == "0.9");

    REQUIRE(run("synth randompair --sites 16 --alpha 1.5 --samples 500 --seed 2 --out p.raw").code == 0);
    for (const char* f : {"p.raw", "p.raw.json", "p.raw.oracle.csv"}) CHECK(std::filesystem::exists(path(f)));
    const auto oracle = miscale::analysis::read_curves_csv(path("p.raw.oracle.csv"));
    REQUIRE(oracle.size() == 1);
    CHECK(oracle[0].points.size() == 17);
    CHECK(read_json("p.raw.json")["partner"].size() == 16);

    CHECK(run("synth randompair --sites 16 --out q.raw").code == 2);
    CHECK(run("synth randompair --sites 15 --alpha 1.5 --out q.raw").code == 2);
    CHECK(run("synth cubes --out q.raw").code == 2);
    CHECK(run("").code == 2);
}

TEST_CASE("estimate")
{
    REQUIRE(run("synth gauss --kind pair --rho 0.9 --samples 4000 --seed 1 --out e.raw").code == 0);
    const Run a = run("estimate --data e.raw --L 1 --seed 3");
    const Run b = run("estimate --data e.raw --L 1 --seed 3");
    REQUIRE(a.code == 0);
    // identical apart from the timing field
    const auto cut = [](const std::string& s) { return s.substr(0, s.find("\"wall_clock_s\"")); };
    CHECK(cut(a.out) == cut(b.out));
    const json ja = json::parse(a.out), jb = json::parse(b.out);
    CHECK(ja["value"] == jb["value"]);
    CHECK(ja["value"].get<double>() == doctest::Approx(0.8304).epsilon(0.08));
    CHECK(ja["method"] == "knn");
    CHECK(ja["config"]["k"] == "5");

    // the autoregressive estimator cannot take a center cut
    REQUIRE(run("synth gauss --kind separable --rows 4 --cols 4 --samples 300 --out s.raw").code == 0);
    CHECK(run("estimate --data s.raw --method ar --family CS --L 2 --epochs 1").code == 3);
    // continuous data through the categorical model is an estimation failure too
    CHECK(run("estimate --data s.raw --method ar --family TB --L 2 --epochs 1").code == 3);
    CHECK(run("estimate --data s.raw --family TB --L 9").code == 2);
    CHECK(run("estimate --data missing.raw --L 1").code == 2);
    CHECK(run("estimate --data s.raw --method svm --L 1").code == 2);
}

TEST_CASE("scan, fit and report")
{
    REQUIRE(run("synth gauss --kind ar1 --n 10 --rho 0.8 --samples 3000 --out c.raw").code == 0);
    REQUIRE(run("scan --data c.raw --Ls 0:10:2 --out scan.csv").code == 0);
    CHECK(lines("scan.csv") == 1 + 6);
    CHECK(read_json("scan.csv.json").contains("config"));
    CHECK(run("scan --data c.raw --Ls 3:1 --out bad.csv").code == 2);

    {
        std::ofstream o(path("sqrt.csv"));
        o.precision(17);
        o << "family,Lmax,method,L,I_nats,sigma_nats\n";
        for (int L = 1; L <= 20; ++L) o << "LR,100,test," << L << "," << std::sqrt(double(L)) << ",0\n";
    }
    const Run f = run("fit --curve sqrt.csv --model power --window 2:20");
    REQUIRE(f.code == 0);
    CHECK(json::parse(f.out)["params"]["nu"].get<double>() == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(run("fit --curve sqrt.csv --model cubic --window 2:20").code == 2);
    CHECK(run("fit --curve sqrt.csv --model power --window 2-20").code == 2);

    // expected crossing count of a uniform matching on 40 sites
    miscale::ScalingCurve a2a;
    a2a.family = miscale::PartitionFamily::LR;
    a2a.Lmax = 40;
    a2a.method = "expected";
    for (std::size_t L = 0; L <= 40; ++L) a2a.points.push_back({L, L * (40.0 - L) / 39 * std::log(2.0), 0.0});
    miscale::analysis::write_curves_csv(path("a2a.csv"), {a2a});
    REQUIRE(run("report --curves a2a.csv --out report.md").code == 0);
    std::ifstream in(path("report.md"));
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str().find("## Verdict\n\n**all_to_all**") != std::string::npos);
    CHECK(std::filesystem::exists(path("report.curve0.dat")));
}

TEST_CASE("configuration precedence")
{
    {
        std::ofstream o(path("run.cfg"));
        o << "# defaults for this run\nrho = 0.5\nsamples=300\n";
    }
    REQUIRE(run("synth gauss --kind pair --config run.cfg --out cfg1.raw").code == 0);
    CHECK(read_json("cfg1.raw.json")["config"]["rho"] == "0.5");
    CHECK(read_json("cfg1.raw.json")["N"] == 300);
    REQUIRE(run("synth gauss --kind pair --config run.cfg --rho 0.2 --out cfg2.raw").code == 0);
    CHECK(read_json("cfg2.raw.json")["config"]["rho"] == "0.2");
    CHECK(read_json("cfg2.raw.json")["N"] == 300);

    // environment fills jobs unless a flag is given
    REQUIRE(run("synth gauss --kind ar1 --n 6 --samples 500 --out j.raw").code == 0);
    REQUIRE(run("scan --data j.raw --Ls 0:6 --out j1.csv", "MISCALE_JOBS=3").code == 0);
    CHECK(read_json("j1.csv.json")["config"]["jobs"] == "3");
    REQUIRE(run("scan --data j.raw --Ls 0:6 --jobs 1 --out j2.csv", "MISCALE_JOBS=3").code == 0);
    CHECK(read_json("j2.csv.json")["config"]["jobs"] == "1");
    const auto c1 = miscale::analysis::read_curves_csv(path("j1.csv")), c2 = miscale::analysis::read_curves_csv(path("j2.csv"));
    for (std::size_t i = 0; i < c1[0].points.size(); ++i) CHECK(c1[0].points[i].I == c2[0].points[i].I);

    {
        std::ofstream o(path("broken.cfg"));
        o << "rho 0.5\n";
    }
    CHECK(run("synth gauss --config broken.cfg --out x.raw").code == 2);
}

TEST_CASE("gradcheck")
{
    const Run r = run("gradcheck --out gc.json");
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    for (const auto& e : read_json("gc.json")["results"]) CHECK(e["max_rel_error"].get<double>() < 1e-4);
}
