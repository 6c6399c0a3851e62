#pragma once

#include "graphfield/cholesky.hpp"
#include "graphfield/mesh.hpp"

#include <Eigen/Dense>

#include <iosfwd>

namespace graphfield {

/// Diagonal matrix stored as its diagonal.
using Diagonal = Eigen::VectorXd;

/// Consistent mass matrix C_ij = (psi_i, psi_j).
SparseMatrix assemble_mass(const Mesh& mesh);

/// Row sums of C.
Diagonal lump_mass(const SparseMatrix& C);

/// Stiffness matrix G_ij = sum_e int psi_i' psi_j'. Kirchhoff conditions are
/// natural: shared vertex nodes, no boundary elimination.
SparseMatrix assemble_stiffness(const Mesh& mesh);

/// kappa^2 sampled at the nodes. Throws if kappa <= 0 (or non-finite) anywhere.
Diagonal kappa_squared_at_nodes(const Mesh& mesh, const EdgeFunction& kappa);

enum class MassKind {
    Lumped,      ///< diag(kappa^2) * C~  (sparse pipeline default)
    Consistent,  ///< C^kappa by 2-point Gauss quadrature of kappa^2 psi_i psi_j
};

/// C^kappa (consistent, quadrature) or diag(kappa^2) C~ (lumped).
SparseMatrix assemble_kappa_mass(const Mesh& mesh, const EdgeFunction& kappa,
                                 MassKind kind = MassKind::Lumped);

/// L = G + kappa^2 C~ (lumped, default) or L = G + C^kappa.
SparseMatrix operator_matrix(const Mesh& mesh, const EdgeFunction& kappa,
                             MassKind kind = MassKind::Lumped);

SparseMatrix diagonal_matrix(const Diagonal& d);

/// "i j value" with 17 significant digits.
void dump_matrix(std::ostream& out, const SparseMatrix& m);

}  // namespace graphfield
