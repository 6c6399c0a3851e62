#include "graphfield/assembly.hpp"

#include "graphfield/io.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace graphfield {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// Calls fn(edge, segment index, node a, node b, segment length) for every segment.
template <class Fn>
void for_each_segment(const Mesh& mesh, Fn&& fn) {
    const auto& g = mesh.graph();
    for (int e = 0; e < static_cast<int>(g.num_edges()); ++e) {
        const auto& nodes = mesh.edge_nodes(e);
        const double he = mesh.segment_length(e);
        for (std::size_t j = 0; j + 1 < nodes.size(); ++j) fn(e, static_cast<int>(j), nodes[j], nodes[j + 1], he);
    }
}

SparseMatrix from_triplets(int n, const Triplets& t) {
    SparseMatrix m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
}

void add_element(Triplets& t, int a, int b, double daa, double dab) {
    t.emplace_back(a, a, daa);
    t.emplace_back(b, b, daa);
    t.emplace_back(a, b, dab);
    t.emplace_back(b, a, dab);
}

}  // namespace

SparseMatrix assemble_mass(const Mesh& mesh) {
    Triplets t;
    for_each_segment(mesh, [&](int, int, int a, int b, double h) { add_element(t, a, b, h / 3.0, h / 6.0); });
    return from_triplets(mesh.num_nodes(), t);
}

Diagonal lump_mass(const SparseMatrix& C) {
    Diagonal d = Diagonal::Zero(C.rows());
    for (int k = 0; k < C.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(C, k); it; ++it) d(it.row()) += it.value();
    return d;
}

SparseMatrix assemble_stiffness(const Mesh& mesh) {
    Triplets t;
    for_each_segment(mesh, [&](int, int, int a, int b, double h) { add_element(t, a, b, 1.0 / h, -1.0 / h); });
    return from_triplets(mesh.num_nodes(), t);
}

Diagonal kappa_squared_at_nodes(const Mesh& mesh, const EdgeFunction& kappa) {
    Diagonal k2(mesh.num_nodes());
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        const double k = kappa(mesh.node_point(i));
        if (!(k > 0.0) || !std::isfinite(k)) {
            std::ostringstream msg;
            msg << "positivity violated: kappa = " << k << " at node " << i;
            throw std::invalid_argument(msg.str());
        }
        k2(i) = k * k;
    }
    return k2;
}

SparseMatrix assemble_kappa_mass(const Mesh& mesh, const EdgeFunction& kappa, MassKind kind) {
    if (kind == MassKind::Lumped) {
        const Diagonal k2 = kappa_squared_at_nodes(mesh, kappa);
        return diagonal_matrix(k2.cwiseProduct(lump_mass(assemble_mass(mesh))));
    }
    // Two-point Gauss rule on each segment: exact for kappa^2 linear.
    const double g = 0.5 / std::sqrt(3.0);
    const double nodes[2] = {0.5 - g, 0.5 + g};
    Triplets t;
    for_each_segment(mesh, [&](int e, int j, int a, int b, double h) {
        double aa = 0.0, bb = 0.0, ab = 0.0;
        for (double xi : nodes) {
            const double k = kappa({e, (j + xi) * h});
            if (!(k > 0.0) || !std::isfinite(k))
                throw std::invalid_argument("positivity violated: kappa <= 0 at a quadrature point");
            const double w = 0.5 * h * k * k;
            aa += w * (1.0 - xi) * (1.0 - xi);
            bb += w * xi * xi;
            ab += w * xi * (1.0 - xi);
        }
        t.emplace_back(a, a, aa);
        t.emplace_back(b, b, bb);
        t.emplace_back(a, b, ab);
        t.emplace_back(b, a, ab);
    });
    return from_triplets(mesh.num_nodes(), t);
}

SparseMatrix operator_matrix(const Mesh& mesh, const EdgeFunction& kappa, MassKind kind) {
    SparseMatrix L = assemble_stiffness(mesh) + assemble_kappa_mass(mesh, kappa, kind);
    L.makeCompressed();
    return L;
}

SparseMatrix diagonal_matrix(const Diagonal& d) {
    SparseMatrix m(d.size(), d.size());
    m.reserve(Eigen::VectorXi::Ones(d.size()));
    for (Eigen::Index i = 0; i < d.size(); ++i) m.insert(i, i) = d(i);
    m.makeCompressed();
    return m;
}

void dump_matrix(std::ostream& out, const SparseMatrix& m) { write_matrix_market_like(out, m); }

}  // namespace graphfield
