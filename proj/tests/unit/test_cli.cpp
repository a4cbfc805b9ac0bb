#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Workspace {
public:
    Workspace() {
        static std::atomic<int> counter{0};
        dir_ = fs::temp_directory_path() /
               ("tflow-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    ~Workspace() {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }

    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(dir_ / name) << text;
        return dir_ / name;
    }
    fs::path path(const std::string& name) const { return dir_ / name; }

private:
    fs::path dir_;
};

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "tflow");
    std::ostringstream out, err;
    const int code = tflow::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

Outcome run_job(const std::string& job, const fs::path& config, const fs::path& out, int threads = 1) {
    return run({job, "--config", config.string(), "--out", out.string(), "--threads", std::to_string(threads)});
}

std::string read(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream text(read(p));
    std::string line;
    std::getline(text, line);
    while (std::getline(text, line)) {
        std::vector<std::string> fields;
        std::stringstream row(line);
        for (std::string f; std::getline(row, f, ',');) fields.push_back(f);
        rows.push_back(fields);
    }
    return rows;
}

json summary(const fs::path& dir) { return json::parse(read(dir / "summary.json")); }

// link lines: tail head capacity free_flow_time b power
std::string tntp_network(int nodes, const std::vector<std::vector<double>>& links) {
    std::ostringstream s;
    s << "<NUMBER OF ZONES> " << nodes << "\n<NUMBER OF NODES> " << nodes << "\n<FIRST THRU NODE> 1\n"
      << "<NUMBER OF LINKS> " << links.size() << "\n<END OF METADATA>\n"
      << "~ init term cap len fft b power speed toll type ;\n";
    for (const auto& l : links)
        s << static_cast<int>(l[0]) << ' ' << static_cast<int>(l[1]) << ' ' << l[2] << ' ' << l[3] << ' ' << l[3] << ' '
          << l[4] << ' ' << l[5] << " 0 0 1 ;\n";
    return s.str();
}

std::string tntp_trips(int zones, const std::map<int, std::map<int, double>>& rows) {
    double total = 0.0;
    for (const auto& [o, dests] : rows)
        for (const auto& [d, v] : dests) total += v;
    std::ostringstream s;
    s.precision(17);
    s << "<NUMBER OF ZONES> " << zones << "\n<TOTAL OD FLOW> " << total << "\n<END OF METADATA>\n";
    for (const auto& [o, dests] : rows) {
        s << "Origin " << o << "\n";
        for (const auto& [d, v] : dests) s << ' ' << d << " : " << v << ';';
        s << "\n";
    }
    return s.str();
}

// Links A (1 + f) and B (2 + f) from node 1 to node 2, demand 3.
void two_links(const Workspace& ws, double demand = 3.0) {
    ws.write("net.tntp", tntp_network(2, {{1, 2, 1, 1, 1, 1}, {1, 2, 2, 2, 1, 1}}));
    ws.write("trips.tntp", tntp_trips(2, {{1, {{2, demand}}}}));
}

// Origins 1, 2 and destinations 3, 4 with crossing costs 0 / 1.
void square_costs(const Workspace& ws, double off_diagonal = 1.0) {
    ws.write("trips.tntp", tntp_trips(4, {{1, {{3, 1.0}, {4, 1.0}}}, {2, {{3, 1.0}, {4, 1.0}}}}));
    std::ostringstream c;
    c << "layer,user_type,origin,destination,cost\nall,all,1,3,0\nall,all,1,4," << off_diagonal << "\nall,all,2,3,"
      << off_diagonal << "\nall,all,2,4,0\n";
    ws.write("costs.csv", c.str());
}

// One BPR link per OD pair between origins 1, 2 and destinations 3, 4; total demand 7.
void dedicated_links(const Workspace& ws) {
    ws.write("net.tntp", tntp_network(4, {{1, 3, 3.5, 1.0, 1, 1},
                                          {1, 4, 3.5, 2.0, 1, 1},
                                          {2, 3, 3.5, 2.0, 1, 1},
                                          {2, 4, 3.5, 1.5, 1, 1}}));
    ws.write("trips.tntp", tntp_trips(4, {{1, {{3, 1.0}, {4, 2.0}}}, {2, {{3, 3.0}, {4, 1.0}}}}));
}

// A 4 x 4 grid of two-way links with demand between the corners and the middle.
void grid(const Workspace& ws) {
    std::vector<std::vector<double>> links;
    auto id = [](int r, int c) { return 4 * r + c + 1; };
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const double fft = 1.0 + 0.1 * ((r * 7 + c * 3) % 5);
            if (c + 1 < 4) {
                links.push_back({double(id(r, c)), double(id(r, c + 1)), 30.0, fft, 0.15, 0.25});
                links.push_back({double(id(r, c + 1)), double(id(r, c)), 30.0, fft, 0.15, 0.25});
            }
            if (r + 1 < 4) {
                links.push_back({double(id(r, c)), double(id(r + 1, c)), 25.0, fft + 0.2, 0.15, 0.25});
                links.push_back({double(id(r + 1, c)), double(id(r, c)), 25.0, fft + 0.2, 0.15, 0.25});
            }
        }
    ws.write("net.tntp", tntp_network(16, links));
    ws.write("trips.tntp", tntp_trips(16, {{1, {{16, 40.0}, {6, 10.0}, {11, 12.5}}},
                                           {4, {{13, 30.0}, {7, 8.0}}},
                                           {13, {{4, 20.0}, {1, 15.0}}},
                                           {16, {{1, 25.0}, {10, 5.0}}}}));
}

}  // namespace

TEST_CASE("assign on two parallel links") {
    Workspace ws;
    two_links(ws);
    for (const char* solver : {"ugm", "frank_wolfe"}) {
        const auto config = ws.write("config.json", json{{"network", "net.tntp"},
                                                         {"trips", "trips.tntp"},
                                                         {"assignment", {{"solver", solver}, {"target_gap", 1e-9}}}}
                                                        .dump());
        const auto out = ws.path(std::string("out-") + solver);
        const auto r = run_job("assign", config, out);
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
        const auto flows = csv_rows(out / "flows.csv");
        REQUIRE(flows.size() == 2);
        CHECK(std::abs(std::stod(flows[0][3]) - 2.0) <= 1e-6);
        CHECK(std::abs(std::stod(flows[1][3]) - 1.0) <= 1e-6);
        CHECK(std::abs(std::stod(flows[0][5]) - 3.0) <= 1e-6);
        const auto costs = csv_rows(out / "od_costs.csv");
        REQUIRE(costs.size() == 1);
        CHECK(std::abs(std::stod(costs[0][4]) - 3.0) <= 1e-6);
        const auto s = summary(out);
        CHECK(s["status"] == "converged");
        CHECK(s["relative_gap"].get<double>() <= 1e-9);
        CHECK(s["primal"].get<double>() - s["dual"].get<double>() == doctest::Approx(s["gap"].get<double>()));
        CHECK(fs::exists(out / "convergence.csv"));
        CHECK(csv_rows(out / "convergence.csv").size() == s["iterations"].get<std::size_t>());
    }
}

TEST_CASE("assign with zero demand") {
    Workspace ws;
    two_links(ws, 0.0);
    const auto config = ws.write("config.json", json{{"network", "net.tntp"}, {"trips", "trips.tntp"}}.dump());
    const auto r = run_job("assign", config, ws.path("out"));
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    for (const auto& row : csv_rows(ws.path("out") / "flows.csv")) CHECK(std::stod(row[3]) == 0.0);
    CHECK(summary(ws.path("out"))["gap"].get<double>() == 0.0);
}

TEST_CASE("exit codes and cleanup") {
    Workspace ws;
    two_links(ws);
    SUBCASE("budget exhausted still writes results") {
        const auto config = ws.write(
            "config.json",
            json{{"network", "net.tntp"}, {"trips", "trips.tntp"}, {"assignment", {{"max_iters", 2}, {"target_gap", 1e-12}}}}
                .dump());
        const auto r = run_job("assign", config, ws.path("out"));
        CHECK(r.code == 2);
        CHECK(fs::exists(ws.path("out") / "flows.csv"));
        CHECK(summary(ws.path("out"))["status"] == "budget_exhausted");
    }
    SUBCASE("infeasible demand removes partial outputs") {
        ws.write("trips.tntp", tntp_trips(2, {{2, {{1, 3.0}}}}));
        const auto config = ws.write("config.json", json{{"network", "net.tntp"}, {"trips", "trips.tntp"}}.dump());
        const auto r = run_job("assign", config, ws.path("out"));
        CHECK(r.code == 3);
        CHECK(r.err.find("infeasible") != std::string::npos);
        CHECK((!fs::exists(ws.path("out")) || fs::is_empty(ws.path("out"))));
    }
    SUBCASE("configuration errors") {
        const auto unknown = ws.write("bad.json", json{{"network", "net.tntp"}, {"trips", "trips.tntp"}, {"colour", 1}}.dump());
        auto r = run_job("assign", unknown, ws.path("out"));
        CHECK(r.code == 1);
        CHECK(r.err.find("colour") != std::string::npos);
        const auto no_trips = ws.write("none.json", json{{"network", "net.tntp"}}.dump());
        CHECK(run_job("assign", no_trips, ws.path("out")).code == 1);
        ws.write("broken.json", "{\"network\": ");
        CHECK(run_job("assign", ws.path("broken.json"), ws.path("out")).code == 1);
        CHECK(run({"--config", unknown.string()}).code == 1);
        CHECK(run({"assign", "--threads", "0"}).code == 1);
        CHECK(run({"frobnicate"}).code == 1);
        CHECK((!fs::exists(ws.path("out")) || fs::is_empty(ws.path("out"))));
    }
    SUBCASE("parse errors in inputs") {
        ws.write("net.tntp", "<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n1 2 x 1 1 1 1 0 0 1 ;\n");
        const auto config = ws.write("config.json", json{{"network", "net.tntp"}, {"trips", "trips.tntp"}}.dump());
        const auto r = run_job("assign", config, ws.path("out"));
        CHECK(r.code == 1);
        CHECK(r.err.find("line 4") != std::string::npos);
    }
}

TEST_CASE("print-config shows every default") {
    const auto r = run({"--print-config"});
    REQUIRE(r.code == 0);
    const auto doc = json::parse(r.out);
    CHECK(doc["assignment"]["target_gap"].get<double>() == 1e-6);
    CHECK(doc["distribution"]["tolerance"].get<double>() == 1e-10);
    CHECK(doc["twostage"]["solver"] == "saddle");
    CHECK(doc.contains("schema"));
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("distribute and calibrate") {
    Workspace ws;
    SUBCASE("crossing costs") {
        square_costs(ws);
        const auto config = ws.write("config.json", json{{"trips", "trips.tntp"}, {"od_costs", "costs.csv"}}.dump());
        const auto r = run_job("distribute", config, ws.path("out"));
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
        const auto rows = csv_rows(ws.path("out") / "correspondences.csv");
        REQUIRE(rows.size() == 4);
        const double diagonal = 4.0 * 0.5 / (1.0 + std::exp(-1.0));
        CHECK(std::stod(rows[0][4]) == doctest::Approx(diagonal).epsilon(1e-9));
        CHECK(std::stod(rows[1][4]) == doctest::Approx(2.0 - diagonal).epsilon(1e-9));
        double total = 0.0;
        for (const auto& row : rows) total += std::stod(row[4]);
        CHECK(std::abs(total - 4.0) <= 1e-9 * 4.0);
        const auto s = summary(ws.path("out"));
        CHECK(s["marginal_residual"].get<double>() <= 1e-10);
        CHECK(s["beta"]["all"].get<double>() == 1.0);
    }
    SUBCASE("constant costs give the product of the marginals") {
        square_costs(ws, 0.0);
        const auto config = ws.write("config.json", json{{"trips", "trips.tntp"}, {"od_costs", "costs.csv"}}.dump());
        REQUIRE(run_job("distribute", config, ws.path("out")).code == 0);
        for (const auto& row : csv_rows(ws.path("out") / "correspondences.csv"))
            CHECK(std::stod(row[4]) == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("calibration inside and outside the range") {
        square_costs(ws);
        json doc = {{"trips", "trips.tntp"}, {"od_costs", "costs.csv"}};
        doc["schema"] = json::parse(R"({
            "networks": [{"name": "road"}],
            "vehicle_types": [{"name": "car", "network": "road"}],
            "layers": [{"name": "all", "target_mean_cost": 0.3, "user_types": [{"name": "all", "modes": ["car"]}]}]})");
        auto config = ws.write("config.json", doc.dump());
        auto r = run_job("calibrate", config, ws.path("out"));
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
        const auto s = summary(ws.path("out"));
        CHECK(s["beta"]["all"].get<double>() == doctest::Approx(std::log(7.0 / 3.0)).epsilon(1e-6));
        CHECK(std::abs(s["calibration_residual"]["all"].get<double>()) <= 1e-8);
        CHECK(s["mean_cost"]["all"].get<double>() == doctest::Approx(0.3).epsilon(1e-7));

        doc["schema"]["layers"][0]["target_mean_cost"] = 0.6;
        config = ws.write("config.json", doc.dump());
        r = run_job("calibrate", config, ws.path("out2"));
        CHECK(r.code == 3);
        CHECK(r.err.find("outside the achievable range") != std::string::npos);
    }
    SUBCASE("free-flow costs from the network") {
        dedicated_links(ws);
        const auto config = ws.write("config.json", json{{"network", "net.tntp"}, {"trips", "trips.tntp"}}.dump());
        REQUIRE(run_job("distribute", config, ws.path("out")).code == 0);
        std::map<std::string, double> row_sums;
        for (const auto& row : csv_rows(ws.path("out") / "correspondences.csv")) row_sums[row[2]] += std::stod(row[4]);
        CHECK(row_sums["1"] == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(row_sums["2"] == doctest::Approx(4.0).epsilon(1e-9));
    }
}

TEST_CASE("twostage") {
    Workspace ws;
    SUBCASE("single pair matches assign") {
        two_links(ws);
        const auto config = ws.write("config.json", json{{"network", "net.tntp"},
                                                         {"trips", "trips.tntp"},
                                                         {"assignment", {{"target_gap", 1e-9}}},
                                                         {"twostage", {{"target_gap", 1e-9}}}}
                                                        .dump());
        REQUIRE(run_job("assign", config, ws.path("a")).code == 0);
        const auto r = run_job("twostage", config, ws.path("t"));
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
        const auto a = csv_rows(ws.path("a") / "flows.csv");
        const auto t = csv_rows(ws.path("t") / "flows.csv");
        REQUIRE(a.size() == t.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(std::stod(t[i][3]) == doctest::Approx(std::stod(a[i][3])).epsilon(1e-6));
            CHECK(std::stod(t[i][4]) == doctest::Approx(std::stod(a[i][4])).epsilon(1e-6));
        }
        const auto d = csv_rows(ws.path("t") / "correspondences.csv");
        REQUIRE(d.size() == 1);
        CHECK(std::stod(d[0][4]) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("reducible instance carries all three certificates") {
        dedicated_links(ws);
        const auto config = ws.write("config.json", json{{"network", "net.tntp"}, {"trips", "trips.tntp"}}.dump());
        const auto r = run_job("twostage", config, ws.path("out"));
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
        const auto s = summary(ws.path("out"));
        CHECK(s["mode"] == "saddle");
        CHECK(s["label"] == "equilibrium certificate");
        CHECK(s["relative_gap"].get<double>() <= 1e-6);
        CHECK(s["marginal_residual"].get<double>() <= 1e-8);
        CHECK(s["wardrop_violation"].get<double>() <= 1e-4);
        double total = 0.0;
        for (const auto& row : csv_rows(ws.path("out") / "correspondences.csv")) total += std::stod(row[4]);
        CHECK(std::abs(total - 7.0) <= 1e-9 * 7.0);
        CHECK(fs::exists(ws.path("out") / "od_costs.csv"));
        CHECK(fs::exists(ws.path("out") / "convergence.csv"));
    }
    SUBCASE("unequal beta") {
        dedicated_links(ws);
        json doc = {{"network", "net.tntp"}, {"trips", "trips.tntp"}};
        // two layers splitting every origin's production
        doc["schema"] = json::parse(R"({
            "networks": [{"name": "road"}],
            "vehicle_types": [{"name": "car", "network": "road"}],
            "layers": [{"name": "work", "share": 0.5, "beta": 1.0, "user_types": [{"name": "commuter", "modes": ["car"]}]},
                       {"name": "leisure", "share": 0.5, "beta": 2.0, "user_types": [{"name": "visitor", "modes": ["car"]}]}]})");
        auto config = ws.write("config.json", doc.dump());
        auto r = run_job("twostage", config, ws.path("saddle"));
        CHECK(r.code == 1);
        CHECK(r.err.find("alternation") != std::string::npos);
        CHECK(!fs::exists(ws.path("saddle")));

        doc["twostage"] = {{"solver", "alternation"}};
        config = ws.write("config.json", doc.dump());
        r = run_job("twostage", config, ws.path("alt"));
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
        const auto s = summary(ws.path("alt"));
        CHECK(s["mode"] == "alternation-heuristic");
        CHECK(s["label"] == "heuristic fixed point");
        CHECK(s["marginal_residual"].get<double>() <= 1e-8);
    }
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
    Workspace ws;
    grid(ws);
    const auto config = ws.write("config.json", json{{"network", "net.tntp"},
                                                     {"trips", "trips.tntp"},
                                                     {"assignment", {{"target_gap", 1e-5}}},
                                                     {"twostage", {{"target_gap", 1e-4}}}}
                                                    .dump());
    for (const std::string job : {"assign", "twostage"}) {
        REQUIRE(run_job(job, config, ws.path(job + "1"), 1).code == 0);
        REQUIRE(run_job(job, config, ws.path(job + "1b"), 1).code == 0);
        REQUIRE(run_job(job, config, ws.path(job + "4"), 4).code == 0);
        std::vector<std::string> files = {"flows.csv", "od_costs.csv"};
        if (job == "twostage") files.push_back("correspondences.csv");
        for (const auto& f : files) {
            CAPTURE(f);
            const auto reference = read(ws.path(job + "1") / f);
            CHECK(!reference.empty());
            CHECK(read(ws.path(job + "1b") / f) == reference);
            CHECK(read(ws.path(job + "4") / f) == reference);
        }
    }
    // physical totals survive the unit-mass scaling of the two-stage run
    double total = 0.0;
    for (const auto& row : csv_rows(ws.path("twostage1") / "correspondences.csv")) total += std::stod(row[4]);
    CHECK(std::abs(total - 165.5) <= 1e-9 * 165.5);
}
