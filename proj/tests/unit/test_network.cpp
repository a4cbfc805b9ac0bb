#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "instances.hpp"
#include "tflow/demand.hpp"
#include "tflow/error.hpp"
#include "tflow/loading.hpp"
#include "tflow/mode_choice.hpp"
#include "tflow/network.hpp"
#include "tflow/shortest_path.hpp"
#include "tflow/tntp.hpp"

using namespace tflow;
using tflow::testing::bpr_edge;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const char* kTwoNodeNet =
    "<NUMBER OF ZONES> 2\n"
    "<NUMBER OF NODES> 2\n"
    "<FIRST THRU NODE> 1\n"
    "<NUMBER OF LINKS> 1\n"
    "<END OF METADATA>\n"
    "~ init term cap len fft b power speed toll type ;\n"
    "1 2 100 1 10 1 4 0 0 1 ;\n";

// Exhaustive search over simple paths.
void enumerate_paths(const Network& net, const std::vector<double>& cost, int node, double so_far,
                     std::vector<char>& on_path, std::vector<double>& best) {
    best[static_cast<std::size_t>(node)] = std::min(best[static_cast<std::size_t>(node)], so_far);
    for (int e = 0; e < net.edge_count(); ++e) {
        const Edge& ed = net.edge(e);
        if (ed.tail != node || on_path[static_cast<std::size_t>(ed.head)]) continue;
        if (!std::isfinite(cost[static_cast<std::size_t>(e)])) continue;
        on_path[static_cast<std::size_t>(ed.head)] = 1;
        enumerate_paths(net, cost, ed.head, so_far + cost[static_cast<std::size_t>(e)], on_path, best);
        on_path[static_cast<std::size_t>(ed.head)] = 0;
    }
}

std::vector<double> brute_force_distances(const Network& net, const std::vector<double>& cost, int origin) {
    std::vector<double> best(static_cast<std::size_t>(net.node_count()), kInf);
    std::vector<char> on_path(static_cast<std::size_t>(net.node_count()), 0);
    on_path[static_cast<std::size_t>(origin)] = 1;
    enumerate_paths(net, cost, origin, 0.0, on_path, best);
    return best;
}

Network triangle() {
    return Network(3, {bpr_edge(0, 1, 1, 1, 1, 1), bpr_edge(1, 2, 1, 1, 1, 1), bpr_edge(0, 2, 3, 1, 1, 1)});
}

}  // namespace

TEST_CASE("TNTP network rows map onto edge attributes") {
    Network net = parse_tntp_network(kTwoNodeNet);
    REQUIRE(net.node_count() == 2);
    REQUIRE(net.edge_count() == 1);
    const Edge& e = net.edge(0);
    CHECK(e.tail == 0);
    CHECK(e.head == 1);
    CHECK(e.capacity == 100.0);
    CHECK(e.free_flow_time == 10.0);
    CHECK(e.zeta == 1.0);
    CHECK(e.mu == 0.25);
}

TEST_CASE("TNTP network with no links") {
    Network net = parse_tntp_network(
        "<NUMBER OF NODES> 3\n<NUMBER OF LINKS> 0\n<FIRST THRU NODE> 1\n<END OF METADATA>\n");
    CHECK(net.node_count() == 3);
    CHECK(net.edge_count() == 0);
}

TEST_CASE("TNTP parser tolerates CRLF, comments and blank lines") {
    Network net = parse_tntp_network(
        "<NUMBER OF NODES> 2\r\n<NUMBER OF LINKS> 1\r\n~ note\r\n<FIRST THRU NODE> 1\r\n<END OF METADATA>\r\n\r\n"
        "\t1 2 100 1 10 1 4 0 0 1 ; ~ trailing\r\n");
    CHECK(net.edge_count() == 1);
}

TEST_CASE("TNTP network errors") {
    SUBCASE("malformed header carries a line number") {
        try {
            parse_tntp_network("<NUMBER OF NODES> 2\nnot a tag\n<END OF METADATA>\n");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("node id outside the declared range") {
        CHECK_THROWS_AS(parse_tntp_network("<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n"
                                           "1 3 100 1 10 1 4 0 0 1 ;\n"),
                        StructuralError);
    }
    SUBCASE("non-positive capacity names the edge") {
        try {
            parse_tntp_network("<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n"
                               "1 2 0 1 10 1 4 0 0 1 ;\n");
            FAIL("expected a data error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("1->2") != std::string::npos);
        }
    }
}

TEST_CASE("zero free-flow time falls back to length / speed, then to epsilon") {
    const char* text =
        "<NUMBER OF NODES> 3\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n"
        "1 2 100 6 0 1 4 3 0 1 ;\n"
        "2 3 100 0 0 1 4 0 0 1 ;\n";
    Network net = parse_tntp_network(text, {.epsilon_time = 1e-5});
    CHECK(net.edge(0).free_flow_time == doctest::Approx(2.0));
    CHECK(net.edge(1).free_flow_time == 1e-5);
}

TEST_CASE("TNTP trips") {
    SUBCASE("single origin block") {
        TripTable t = parse_tntp_trips("<NUMBER OF ZONES> 2\n<TOTAL OD FLOW> 5.0\n<END OF METADATA>\n"
                                       "Origin 1\n    2 : 5.0;\n");
        REQUIRE(t.entries.size() == 1);
        CHECK(t.entries.at({0, 1}) == 5.0);
        CHECK(t.warnings.empty());
    }
    SUBCASE("zero entries are omitted") {
        TripTable t = parse_tntp_trips("<NUMBER OF ZONES> 2\n<TOTAL OD FLOW> 5.0\n<END OF METADATA>\n"
                                       "Origin 1\n 1 : 0.0; 2 : 5.0;\n");
        CHECK(t.entries.size() == 1);
    }
    SUBCASE("declared total mismatch is a warning") {
        TripTable t = parse_tntp_trips("<NUMBER OF ZONES> 2\n<TOTAL OD FLOW> 9.0\n<END OF METADATA>\n"
                                       "Origin 1\n 2 : 5.0;\n");
        CHECK(t.warnings.size() == 1);
    }
    SUBCASE("undeclared zone") {
        CHECK_THROWS_AS(parse_tntp_trips("<NUMBER OF ZONES> 2\n<TOTAL OD FLOW> 5.0\n<END OF METADATA>\n"
                                         "Origin 3\n 2 : 5.0;\n"),
                        StructuralError);
    }
    SUBCASE("negative demand") {
        CHECK_THROWS_AS(parse_tntp_trips("<NUMBER OF ZONES> 2\n<TOTAL OD FLOW> 5.0\n<END OF METADATA>\n"
                                         "Origin 1\n 2 : -5.0;\n"),
                        DataError);
    }
}

TEST_CASE("Sioux Falls files") {
    Network net = parse_tntp_network(read_text_file(TFLOW_DATA_DIR "/SiouxFalls_net.tntp"));
    CHECK(net.node_count() == 24);
    CHECK(net.edge_count() == 76);
    TripTable trips = parse_tntp_trips(read_text_file(TFLOW_DATA_DIR "/SiouxFalls_trips.tntp"));
    CHECK(trips.declared_total == doctest::Approx(360600.0));
    CHECK(trips.total() == doctest::Approx(360600.0).epsilon(1e-6));
}

TEST_CASE("normalize_demand") {
    DemandSchema one = DemandSchema::single_class();

    SUBCASE("single layer") {
        Demand d = normalize_demand({{{0, 1}, 5.0}, {{0, 2}, 5.0}}, one, OdSupport::Observed);
        REQUIRE(d.marginals.rows.size() == 1);
        CHECK(d.marginals.rows[0].mass == std::vector<double>{1.0});
        CHECK(d.marginals.columns == std::vector<double>{0.5, 0.5});
        CHECK(d.total == 10.0);
    }
    SUBCASE("type split 0.6 / 0.4") {
        DemandSchema s = one;
        s.user_types = {{"car-owner", 0, {0}, 0.6}, {"captive", 0, {0}, 0.4}};
        s.layers[0].user_types = {0, 1};
        s.validate(1);
        Demand d = normalize_demand({{{0, 1}, 10.0}}, s, OdSupport::Observed);
        REQUIRE(d.marginals.rows.size() == 2);
        CHECK(d.marginals.rows[0].mass[0] == doctest::Approx(0.6));
        CHECK(d.marginals.rows[1].mass[0] == doctest::Approx(0.4));
        CHECK(d.fixed.values[0][0] == doctest::Approx(0.6));
        CHECK(d.fixed.values[1][0] == doctest::Approx(0.4));
    }
    SUBCASE("point mass") {
        Demand d = normalize_demand({{{3, 7}, 42.0}}, one);
        CHECK(d.marginals.rows[0].mass == std::vector<double>{1.0});
        CHECK(d.marginals.columns == std::vector<double>{1.0});
    }
    SUBCASE("zero total") { CHECK_THROWS_AS(normalize_demand({{{0, 1}, 0.0}}, one), DataError); }
    SUBCASE("shares not summing to one") {
        DemandSchema s = one;
        s.user_types = {{"a", 0, {0}, 0.6}, {"b", 0, {0}, 0.3}};
        s.layers[0].user_types = {0, 1};
        CHECK_THROWS_AS(s.validate(1), ConfigError);
    }
}

TEST_CASE("shortest paths on small graphs") {
    SUBCASE("single edge") {
        Network net(2, {bpr_edge(0, 1, 10, 1, 1, 1)});
        auto sp = shortest_paths(net, std::vector<double>{10.0}, {}, 0);
        CHECK(sp.distance[1] == 10.0);
        CHECK(sp.distance[0] == 0.0);
    }
    SUBCASE("triangle takes the two-hop path") {
        Network net = triangle();
        auto sp = shortest_paths(net, std::vector<double>{1, 1, 3}, {}, 0);
        CHECK(sp.distance[2] == 2.0);
        CHECK(sp.predecessor_edge[2] == 1);
        CHECK(sp.distance[2] == brute_force_distances(net, {1, 1, 3}, 0)[2]);
    }
    SUBCASE("forbidden edge") {
        Network net(2, {bpr_edge(0, 1, 10, 1, 1, 1)});
        auto sp = shortest_paths(net, std::vector<double>{kInf}, {}, 0);
        CHECK(sp.distance[1] == kInf);
        auto masked = shortest_paths(net, std::vector<double>{1.0}, std::vector<char>{0}, 0);
        CHECK(masked.distance[1] == kInf);
    }
    SUBCASE("ties resolve to the smallest edge id") {
        Network net(2, {bpr_edge(0, 1, 1, 1, 1, 1), bpr_edge(0, 1, 1, 1, 1, 1)});
        auto sp = shortest_paths(net, std::vector<double>{4, 4}, {}, 0);
        CHECK(sp.predecessor_edge[1] == 0);
    }
    SUBCASE("zone centroids are not passed through") {
        // 0 -> 1 -> 2 would be shorter, but node 1 is a zone below the first through node.
        Network net(3, {bpr_edge(0, 1, 1, 1, 1, 1), bpr_edge(1, 2, 1, 1, 1, 1), bpr_edge(0, 2, 5, 1, 1, 1)}, 2);
        auto sp = shortest_paths(net, std::vector<double>{1, 1, 5}, {}, 0);
        CHECK(sp.distance[2] == 5.0);
        CHECK(sp.distance[1] == 1.0);
    }
}

TEST_CASE("shortest paths agree with exhaustive enumeration on random graphs") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 7);
        std::vector<Edge> edges;
        std::bernoulli_distribution present(0.35);
        std::uniform_real_distribution<double> cost(0.0, 5.0);
        for (int u = 0; u < n; ++u)
            for (int v = 0; v < n; ++v)
                if (u != v && present(rng)) edges.push_back(bpr_edge(u, v, 1, 1, 1, 1));
        Network net(n, edges);
        std::vector<double> c(edges.size());
        for (double& x : c) x = (rng() % 5 == 0) ? std::round(cost(rng)) : cost(rng);
        const int origin = static_cast<int>(rng() % static_cast<unsigned>(n));
        auto sp = shortest_paths(net, c, {}, origin);
        auto oracle = brute_force_distances(net, c, origin);
        for (int v = 0; v < n; ++v) {
            if (std::isinf(oracle[static_cast<std::size_t>(v)])) {
                CHECK(std::isinf(sp.distance[static_cast<std::size_t>(v)]));
            } else {
                CHECK(sp.distance[static_cast<std::size_t>(v)] ==
                      doctest::Approx(oracle[static_cast<std::size_t>(v)]).epsilon(1e-12));
            }
        }
        // triangle relaxation
        for (int e = 0; e < net.edge_count(); ++e) {
            const double du = sp.distance[static_cast<std::size_t>(net.edge(e).tail)];
            if (std::isfinite(du))
                CHECK(sp.distance[static_cast<std::size_t>(net.edge(e).head)] <= du + c[static_cast<std::size_t>(e)] + 1e-12);
        }
    }
}

TEST_CASE("assign_tree_flows") {
    SUBCASE("single edge") {
        Network net(2, {bpr_edge(0, 1, 10, 1, 1, 1)});
        auto sp = shortest_paths(net, std::vector<double>{10.0}, {}, 0);
        std::vector<double> flow(1, 0.0);
        assign_tree_flows(net, sp, std::vector<double>{0.0, 1.0}, flow);
        CHECK(flow[0] == 1.0);
    }
    SUBCASE("triangle loads the two-hop path") {
        Network net = triangle();
        auto sp = shortest_paths(net, std::vector<double>{1, 1, 3}, {}, 0);
        std::vector<double> flow(3, 0.0);
        assign_tree_flows(net, sp, std::vector<double>{0, 0, 1}, flow);
        CHECK(flow == std::vector<double>{1, 1, 0});
    }
    SUBCASE("zero demand") {
        Network net = triangle();
        auto sp = shortest_paths(net, std::vector<double>{1, 1, 3}, {}, 0);
        std::vector<double> flow(3, 0.0);
        assign_tree_flows(net, sp, std::vector<double>{0, 0, 0}, flow);
        CHECK(flow == std::vector<double>{0, 0, 0});
    }
    SUBCASE("unreachable destination with demand") {
        Network net(3, {bpr_edge(0, 1, 1, 1, 1, 1)});
        auto sp = shortest_paths(net, std::vector<double>{1}, {}, 0);
        std::vector<double> flow(1, 0.0);
        CHECK_THROWS_AS(assign_tree_flows(net, sp, std::vector<double>{0, 0, 1}, flow), InfeasibleError);
    }
}

TEST_CASE("tree flows conserve demand at every node") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 4 + static_cast<int>(rng() % 5);
        std::vector<Edge> edges;
        for (int u = 0; u < n; ++u) {
            edges.push_back(bpr_edge(u, (u + 1) % n, 1, 1, 1, 1));  // ring keeps every node reachable
            for (int v = 0; v < n; ++v)
                if (u != v && rng() % 3 == 0) edges.push_back(bpr_edge(u, v, 1, 1, 1, 1));
        }
        Network net(n, edges);
        std::vector<double> c(edges.size());
        for (double& x : c) x = 1.0 + static_cast<double>(rng() % 9);
        auto sp = shortest_paths(net, c, {}, 0);
        std::vector<double> demand(static_cast<std::size_t>(n));
        double total = 0.0;
        for (int v = 1; v < n; ++v) total += demand[static_cast<std::size_t>(v)] = static_cast<double>(rng() % 10);
        std::vector<double> flow(edges.size(), 0.0);
        assign_tree_flows(net, sp, demand, flow);
        std::vector<double> balance(static_cast<std::size_t>(n), 0.0);
        for (int e = 0; e < net.edge_count(); ++e) {
            CHECK(flow[static_cast<std::size_t>(e)] >= 0.0);
            if (flow[static_cast<std::size_t>(e)] > 0.0) CHECK(sp.predecessor_edge[static_cast<std::size_t>(net.edge(e).head)] == e);
            balance[static_cast<std::size_t>(net.edge(e).tail)] -= flow[static_cast<std::size_t>(e)];
            balance[static_cast<std::size_t>(net.edge(e).head)] += flow[static_cast<std::size_t>(e)];
        }
        CHECK(balance[0] == -total);
        for (int v = 1; v < n; ++v) CHECK(balance[static_cast<std::size_t>(v)] == demand[static_cast<std::size_t>(v)]);
    }
}

TEST_CASE("mode choice") {
    SUBCASE("single mode") {
        auto m = min_cost_over_modes(std::vector<double>{5.0}, 0.0);
        CHECK(m.cost == 5.0);
        CHECK(m.weights == std::vector<double>{1.0});
    }
    SUBCASE("hard minimum") {
        auto m = min_cost_over_modes(std::vector<double>{5.0, 7.0}, 0.0);
        CHECK(m.cost == 5.0);
        CHECK(m.weights == std::vector<double>{1.0, 0.0});
    }
    SUBCASE("exact ties split evenly") {
        auto m = min_cost_over_modes(std::vector<double>{4.0, 4.0, 9.0}, 0.0);
        CHECK(m.weights == std::vector<double>{0.5, 0.5, 0.0});
    }
    SUBCASE("softmin with gamma 1") {
        auto m = min_cost_over_modes(std::vector<double>{5.0, 7.0}, 1.0);
        const double w1 = 1.0 / (1.0 + std::exp(-2.0));
        CHECK(m.cost == doctest::Approx(5.0 - std::log1p(std::exp(-2.0))).epsilon(1e-14));
        CHECK(m.cost == doctest::Approx(4.8731).epsilon(1e-4));
        CHECK(m.weights[0] == doctest::Approx(w1).epsilon(1e-14));
        CHECK(m.weights[1] == doctest::Approx(1.0 - w1).epsilon(1e-13));
        CHECK(m.weights[0] == doctest::Approx(0.8808).epsilon(1e-4));
    }
    SUBCASE("softmin survives huge costs") {
        auto m = min_cost_over_modes(std::vector<double>{1e6, 1e6 + 1.0}, 1e-3);
        CHECK(m.cost == doctest::Approx(1e6));
        CHECK(std::isfinite(m.weights[0]));
    }
    SUBCASE("every mode unreachable") {
        auto m = min_cost_over_modes(std::vector<double>{kInf, kInf}, 0.5);
        CHECK(m.cost == kInf);
        CHECK(m.weights.empty());
    }
    SUBCASE("an unreachable mode gets no weight") {
        auto m = min_cost_over_modes(std::vector<double>{kInf, 3.0}, 0.5);
        CHECK(m.cost == doctest::Approx(3.0));
        CHECK(m.weights == std::vector<double>{0.0, 1.0});
    }
}

TEST_CASE("softmin approaches the hard minimum from below") {
    const std::vector<double> costs{5.0, 7.0};
    double previous = -kInf;
    for (double gamma : {4.0, 2.0, 1.0, 0.5, 0.1, 0.01, 1e-4}) {
        const double s = min_cost_over_modes(costs, gamma).cost;
        CHECK(s <= 5.0);
        CHECK(5.0 - s <= gamma * std::log(2.0) + 1e-15);
        CHECK(s >= previous);
        previous = s;
    }
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> c{u(rng), u(rng), u(rng)};
        const double gamma = 0.01 + u(rng) / 5.0;
        const double base = min_cost_over_modes(c, gamma).cost;
        CHECK(base <= *std::min_element(c.begin(), c.end()));
        auto raised = c;
        raised[static_cast<std::size_t>(trial % 3)] += 0.5;
        CHECK(min_cost_over_modes(raised, gamma).cost >= base);
    }
}

TEST_CASE("vehicle times add surcharges and bar forbidden edges") {
    Network net(2, {bpr_edge(0, 1, 5, 1, 1, 1), bpr_edge(0, 1, 5, 1, 1, 1), bpr_edge(0, 1, 5, 1, 1, 1)});
    DemandSchema s = DemandSchema::single_class();
    s.vehicle_types[0].surcharge = {{2.0, false}, {0.0, true}, {0.0, false}};
    s.validate(net.edge_count());
    OdSet od({{0, 1}});
    NetworkLoader loader(net, s, od);
    auto t = loader.vehicle_times(std::vector<double>{5.0, 5.0, 5.0});
    CHECK(t[0][0] == 7.0);
    CHECK(t[0][1] == kInf);
    CHECK(t[0][2] == 5.0);
}
