#pragma once

#include "graphfield/graph.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <utility>
#include <vector>

namespace graphfield {

/// Nonzero entries of a basis row: (global node index, weight).
using BasisRow = std::vector<std::pair<int, double>>;

/// Uniform refinement of a metric graph into piecewise linear hat functions.
///
/// Global numbering puts the original vertices first (node v == vertex v),
/// followed by the interior nodes of each edge in edge order.
class Mesh {
public:
    Mesh(MetricGraph graph, std::vector<int> segments_per_edge);

    const MetricGraph& graph() const { return graph_; }
    int num_nodes() const { return num_nodes_; }
    double h() const { return h_; }
    int segments(int edge) const { return segments_[static_cast<std::size_t>(edge)]; }
    double segment_length(int edge) const;

    /// Global index of node j (0..n_e) along an edge.
    int node(int edge, int j) const { return edge_nodes_[static_cast<std::size_t>(edge)][static_cast<std::size_t>(j)]; }
    const std::vector<int>& edge_nodes(int edge) const { return edge_nodes_[static_cast<std::size_t>(edge)]; }

    /// A representative location of a global node. Vertex nodes report the
    /// first incident edge.
    const GraphPoint& node_point(int i) const { return node_points_[static_cast<std::size_t>(i)]; }

    /// Vertex index for vertex nodes, -1 for interior nodes.
    int node_vertex(int i) const { return i < static_cast<int>(graph_.num_vertices()) ? i : -1; }

    BasisRow eval_basis(const GraphPoint& s) const;

    /// A(i, j) = psi_j(points[i]).
    Eigen::SparseMatrix<double> projector(const std::vector<GraphPoint>& points) const;

    /// Projector evaluating this mesh's basis at another mesh's nodes.
    Eigen::SparseMatrix<double> projector_to(const Mesh& fine) const;

    /// Geodesic distance from s to every node.
    Eigen::VectorXd node_distances(const GraphPoint& s) const;

    /// Evaluate an edge function at all nodes.
    Eigen::VectorXd sample(const EdgeFunction& f) const;

private:
    MetricGraph graph_;
    std::vector<int> segments_;
    std::vector<std::vector<int>> edge_nodes_;
    std::vector<GraphPoint> node_points_;
    int num_nodes_ = 0;
    double h_ = 0.0;
};

/// n_e = max(2, ceil(l_e / target_h)) uniform segments per edge.
Mesh build_mesh(const MetricGraph& graph, double target_h);

/// Smallest geodesic distance from s at which the correlation implied by
/// `cov_row` (Cov(u(s), u(node))) and nodal standard deviations drops to or
/// below `threshold`. Crossings inside a mesh segment are located by linear
/// interpolation. Returns the mesh-node diameter of the graph if it never does.
double practical_range(const Mesh& mesh, const GraphPoint& s, const Eigen::VectorXd& cov_row,
                       const Eigen::VectorXd& marginal_std, double threshold = 0.1);

}  // namespace graphfield
