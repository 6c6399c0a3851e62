#include "graphfield/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace graphfield {

Mesh::Mesh(MetricGraph graph, std::vector<int> segments_per_edge)
    : graph_(std::move(graph)), segments_(std::move(segments_per_edge)) {
    if (segments_.size() != graph_.num_edges())
        throw std::invalid_argument("mesh: one segment count per edge required");
    const int nv = static_cast<int>(graph_.num_vertices());
    node_points_.resize(static_cast<std::size_t>(nv));
    std::vector<bool> seen(static_cast<std::size_t>(nv), false);
    int next = nv;
    edge_nodes_.resize(graph_.num_edges());
    for (std::size_t e = 0; e < graph_.num_edges(); ++e) {
        const Edge& edge = graph_.edges()[e];
        const int n = segments_[e];
        if (n < 2) throw std::invalid_argument("mesh: every edge needs at least 2 segments");
        const double he = edge.length / n;
        h_ = std::max(h_, he);
        auto& nodes = edge_nodes_[e];
        nodes.resize(static_cast<std::size_t>(n) + 1);
        nodes.front() = edge.from;
        nodes.back() = edge.to;
        if (!seen[static_cast<std::size_t>(edge.from)]) {
            node_points_[static_cast<std::size_t>(edge.from)] = {static_cast<int>(e), 0.0};
            seen[static_cast<std::size_t>(edge.from)] = true;
        }
        if (!seen[static_cast<std::size_t>(edge.to)]) {
            node_points_[static_cast<std::size_t>(edge.to)] = {static_cast<int>(e), edge.length};
            seen[static_cast<std::size_t>(edge.to)] = true;
        }
        for (int j = 1; j < n; ++j) {
            nodes[static_cast<std::size_t>(j)] = next++;
            node_points_.push_back({static_cast<int>(e), j * he});
        }
    }
    num_nodes_ = next;
}

double Mesh::segment_length(int edge) const {
    return graph_.edge(edge).length / segments(edge);
}

BasisRow Mesh::eval_basis(const GraphPoint& s) const {
    graph_.check_point(s);
    const double len = graph_.edge(s.edge).length;
    const int n = segments(s.edge);
    const double he = len / n;
    const double pos = s.t / he;
    const double nearest = std::round(pos);
    const auto& nodes = edge_nodes(s.edge);
    if (std::abs(pos - nearest) <= 1e-12 * std::max(1.0, pos)) {
        return {{nodes[static_cast<std::size_t>(nearest)], 1.0}};
    }
    const int j = std::clamp(static_cast<int>(std::floor(pos)), 0, n - 1);
    const double w = pos - j;
    return {{nodes[static_cast<std::size_t>(j)], 1.0 - w}, {nodes[static_cast<std::size_t>(j) + 1], w}};
}

Eigen::SparseMatrix<double> Mesh::projector(const std::vector<GraphPoint>& points) const {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(points.size() * 2);
    for (std::size_t i = 0; i < points.size(); ++i)
        for (auto [j, w] : eval_basis(points[i])) trips.emplace_back(static_cast<int>(i), j, w);
    Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(points.size()), num_nodes_);
    A.setFromTriplets(trips.begin(), trips.end());
    return A;
}

Eigen::SparseMatrix<double> Mesh::projector_to(const Mesh& fine) const {
    std::vector<GraphPoint> pts(static_cast<std::size_t>(fine.num_nodes()));
    for (int i = 0; i < fine.num_nodes(); ++i) pts[static_cast<std::size_t>(i)] = fine.node_point(i);
    return projector(pts);
}

Eigen::VectorXd Mesh::node_distances(const GraphPoint& s) const {
    const Eigen::VectorXd dv = distances_to_vertices(graph_, s);
    Eigen::VectorXd out(num_nodes_);
    for (int v = 0; v < static_cast<int>(graph_.num_vertices()); ++v) out(v) = dv(v);
    for (std::size_t e = 0; e < graph_.num_edges(); ++e) {
        const Edge& edge = graph_.edges()[e];
        const int n = segments_[e];
        const double he = edge.length / n;
        for (int j = 1; j < n; ++j) {
            const double t = j * he;
            double d = std::min(dv(edge.from) + t, dv(edge.to) + edge.length - t);
            if (static_cast<int>(e) == s.edge) d = std::min(d, std::abs(t - s.t));
            out(edge_nodes_[e][static_cast<std::size_t>(j)]) = d;
        }
    }
    return out;
}

Eigen::VectorXd Mesh::sample(const EdgeFunction& f) const {
    Eigen::VectorXd out(num_nodes_);
    for (int i = 0; i < num_nodes_; ++i) out(i) = f(node_point(i));
    return out;
}

Mesh build_mesh(const MetricGraph& graph, double target_h) {
    if (!(target_h > 0.0)) throw std::invalid_argument("mesh: target h must be positive");
    require_valid(graph);
    std::vector<int> segs;
    for (const auto& e : graph.edges()) {
        // Guard against ceil(1.0000000000000002) on exact divisions.
        const double ratio = e.length / target_h;
        const double r = std::round(ratio);
        const int n = std::abs(ratio - r) < 1e-9 * r ? static_cast<int>(r) : static_cast<int>(std::ceil(ratio));
        segs.push_back(std::max(2, n));
    }
    return Mesh(graph, std::move(segs));
}

double practical_range(const Mesh& mesh, const GraphPoint& s, const Eigen::VectorXd& cov_row,
                       const Eigen::VectorXd& marginal_std, double threshold) {
    const int n = mesh.num_nodes();
    if (cov_row.size() != n || marginal_std.size() != n)
        throw std::invalid_argument("practical_range: vectors must have one entry per mesh node");
    if ((marginal_std.array() <= 0.0).any())
        throw std::invalid_argument("practical_range: nonpositive marginal variance");
    double var_s = 0.0;
    for (auto [j, w] : mesh.eval_basis(s)) var_s += w * cov_row(j);
    if (!(var_s > 0.0)) throw std::invalid_argument("practical_range: nonpositive marginal variance");
    const double sd_s = std::sqrt(var_s);
    if (threshold >= 1.0) return 0.0;

    const Eigen::VectorXd dist = mesh.node_distances(s);
    const Eigen::VectorXd corr = cov_row.array() / (sd_s * marginal_std.array());
    const MetricGraph& g = mesh.graph();
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        if (corr(i) <= threshold) best = std::min(best, dist(i));
    // Refine within segments whose endpoints straddle the threshold.
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& nodes = mesh.edge_nodes(static_cast<int>(e));
        const double he = mesh.segment_length(static_cast<int>(e));
        for (std::size_t j = 0; j + 1 < nodes.size(); ++j) {
            const double ca = corr(nodes[j]), cb = corr(nodes[j + 1]);
            if ((ca > threshold) == (cb > threshold)) continue;
            const double lam = (ca - threshold) / (ca - cb);
            const GraphPoint p{static_cast<int>(e), std::min(g.edge(static_cast<int>(e)).length, (j + lam) * he)};
            best = std::min(best, geodesic(g, s, p));
        }
    }
    if (std::isfinite(best)) return best;
    double diameter = 0.0;
    for (int i = 0; i < n; ++i) diameter = std::max(diameter, mesh.node_distances(mesh.node_point(i)).maxCoeff());
    return diameter;
}

}  // namespace graphfield
