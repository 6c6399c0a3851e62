#include "graphfield/graph.hpp"
#include "graphfield/io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace graphfield;

TEST(Graph, TadpoleValidates) {
    const MetricGraph g = make_tadpole();
    const GraphDiagnostics d = validate(g);
    EXPECT_TRUE(d.ok);
    EXPECT_TRUE(d.connected);
    ASSERT_EQ(d.degrees.size(), 2u);
    EXPECT_EQ(d.degrees[0], 1);
    EXPECT_EQ(d.degrees[1], 3);
    EXPECT_DOUBLE_EQ(d.total_length, 3.0);
}

TEST(Graph, ZeroLengthEdgeRejected) {
    const MetricGraph g({{0}, {1}}, {{0, 0, 1, 0.0, {}}});
    const GraphDiagnostics d = validate(g);
    EXPECT_FALSE(d.ok);
    ASSERT_FALSE(d.errors.empty());
    EXPECT_NE(d.errors.front().find("nonpositive length"), std::string::npos);
    EXPECT_THROW(require_valid(g), std::invalid_argument);
}

TEST(Graph, DisconnectedRejected) {
    const MetricGraph g({{0}, {1}, {2}, {3}}, {{0, 0, 1, 1.0, {}}, {1, 2, 3, 1.0, {}}});
    const GraphDiagnostics d = validate(g);
    EXPECT_FALSE(d.ok);
    EXPECT_FALSE(d.connected);
    bool found = false;
    for (const auto& e : d.errors) found |= e.find("disconnected") != std::string::npos;
    EXPECT_TRUE(found);
}

TEST(Graph, TadpoleGeodesics) {
    const MetricGraph g = make_tadpole();
    EXPECT_DOUBLE_EQ(geodesic(g, {0, 0.0}, {1, 0.5}), 1.5);
    EXPECT_DOUBLE_EQ(geodesic(g, {1, 0.5}, {1, 1.5}), 1.0);
    EXPECT_DOUBLE_EQ(geodesic(g, {1, 0.2}, {1, 1.9}), 0.3);
    EXPECT_DOUBLE_EQ(geodesic(g, {1, 0.7}, {1, 0.7}), 0.0);
    EXPECT_DOUBLE_EQ(geodesic(g, {0, 1.0}, {1, 0.0}), 0.0);
}

TEST(Graph, PointOffGraphThrows) {
    const MetricGraph g = make_tadpole();
    EXPECT_THROW(geodesic(g, {0, 1.5}, {1, 0.0}), std::out_of_range);
    EXPECT_THROW(geodesic(g, {2, 0.0}, {1, 0.0}), std::out_of_range);
}

TEST(GraphProperty, TriangleInequalityAndSymmetry) {
    std::mt19937_64 rng(11);
    for (const MetricGraph& g : {make_tadpole(), make_star(4), make_lattice(3, 4), make_circle(2.0)}) {
        for (int k = 0; k < 1000; ++k) {
            const GraphPoint a = testutil::random_point(g, rng);
            const GraphPoint b = testutil::random_point(g, rng);
            const GraphPoint c = testutil::random_point(g, rng);
            const double ab = geodesic(g, a, b), bc = geodesic(g, b, c), ac = geodesic(g, a, c);
            EXPECT_LE(ac, ab + bc + 1e-12);
            EXPECT_NEAR(ab, geodesic(g, b, a), 1e-12);
            EXPECT_GE(ab, 0.0);
            if (a.edge == b.edge) EXPECT_LE(ab, std::abs(a.t - b.t) + 1e-12);
        }
    }
}

TEST(Graph, JsonRoundTripIsExact) {
    for (const MetricGraph& g : {make_tadpole(), make_lattice(3, 3), make_star(5, 0.1), make_circle(1.0 / 3.0)}) {
        const std::string once = write_graph_json(g);
        const std::string twice = write_graph_json(read_graph_json(once));
        EXPECT_EQ(once, twice);
    }
}

TEST(Graph, JsonErrorsNameTheField) {
    try {
        read_graph_json(R"({"vertices":[{"id":1}],"edges":[{"id":1,"from":1,"to":1}]})");
        FAIL() << "expected a schema error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("length"), std::string::npos);
    }
    try {
        read_graph_json(R"({"vertices":[{"id":1}],"edges":[{"id":1,"from":1,"to":7,"length":1}]})");
        FAIL() << "expected an unknown-vertex error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
    }
    EXPECT_THROW(read_graph_json("{"), std::invalid_argument);
}

TEST(Graph, Builtins) {
    EXPECT_EQ(make_builtin("star:4")->num_edges(), 4u);
    EXPECT_DOUBLE_EQ(make_builtin("interval:2.5")->total_length(), 2.5);
    EXPECT_DOUBLE_EQ(make_builtin("circle:3")->total_length(), 3.0);
    EXPECT_EQ(make_builtin("lattice:6x5")->num_edges(), 49u);
    EXPECT_FALSE(make_builtin("nonsense").has_value());
}
