#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace graphfield {

struct Vertex {
    int id = 0;
    std::optional<double> x;
    std::optional<double> y;
};

struct Edge {
    int id = 0;
    int from = 0;  // vertex index at t = 0
    int to = 0;    // vertex index at t = length
    double length = 0.0;
    std::vector<std::array<double, 2>> geometry;  // plotting metadata only
};

/// Location on the graph, addressed by edge index and arc length from the
/// edge's start vertex.
struct GraphPoint {
    int edge = 0;
    double t = 0.0;
};

struct GraphDiagnostics {
    bool ok = true;
    std::vector<std::string> errors;
    std::vector<int> degrees;
    double total_length = 0.0;
    bool connected = false;
};

/// Compact metric graph. Edges keep an orientation (from at t = 0) but are
/// treated symmetrically everywhere. Self-loops and parallel edges are allowed.
///
/// Vertices and edges are addressed by their position in the vectors; the
/// `id` fields are preserved for IO only.
class MetricGraph {
public:
    MetricGraph() = default;
    MetricGraph(std::vector<Vertex> vertices, std::vector<Edge> edges);

    const std::vector<Vertex>& vertices() const { return vertices_; }
    const std::vector<Edge>& edges() const { return edges_; }
    std::size_t num_vertices() const { return vertices_.size(); }
    std::size_t num_edges() const { return edges_.size(); }

    const Edge& edge(int e) const { return edges_.at(static_cast<std::size_t>(e)); }
    int degree(int v) const;
    double total_length() const;

    int vertex_index(int id) const;
    int edge_index(int id) const;

    /// Vertex-to-vertex shortest path lengths (all pairs).
    const Eigen::MatrixXd& vertex_distances() const { return vertex_dist_; }

    /// Planar coordinates of a point, interpolated along the edge geometry
    /// (or the straight segment between endpoint coordinates). Missing
    /// coordinates are treated as 0.
    std::array<double, 2> coordinates(const GraphPoint& p) const;

    bool has_coordinates() const;

    void check_point(const GraphPoint& p) const;

private:
    void compute_vertex_distances();

    std::vector<Vertex> vertices_;
    std::vector<Edge> edges_;
    Eigen::MatrixXd vertex_dist_;
};

GraphDiagnostics validate(const MetricGraph& graph);

/// Throws std::invalid_argument with the collected diagnostics when the graph
/// is not a valid compact connected metric graph.
void require_valid(const MetricGraph& graph);

double geodesic(const MetricGraph& graph, const GraphPoint& a, const GraphPoint& b);

/// Distance from `a` to every vertex of the graph.
Eigen::VectorXd distances_to_vertices(const MetricGraph& graph, const GraphPoint& a);

/// Scalar function on the graph: kappa, tau, or a covariate.
using EdgeFunction = std::function<double(const GraphPoint&)>;

EdgeFunction constant_function(double value);

// Builtin graphs.
MetricGraph make_interval(double length = 1.0);
MetricGraph make_circle(double length = 2.0);
/// Tail of length 1 (tip at t = 0) attached to a loop of length 2.
MetricGraph make_tadpole();
MetricGraph make_star(int arms, double arm_length = 1.0);
/// Rectangular lattice with unit spacing and planar coordinates.
MetricGraph make_lattice(int rows, int cols, double spacing = 1.0);

/// Parses "interval:L", "circle:L", "tadpole", "star:k", "lattice:RxC".
/// Returns std::nullopt when `spec` is not a builtin name.
std::optional<MetricGraph> make_builtin(const std::string& spec);

}  // namespace graphfield
