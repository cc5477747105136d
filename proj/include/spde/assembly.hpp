#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <functional>

#include "spde/mesh.hpp"

namespace spde {

/// Nodal values of a P1 finite element function at the interior vertices;
/// the function is zero on the boundary by construction.
using NodalField = Eigen::VectorXd;

/// Scalar function on the closed domain. 1D callers receive y == 0.
using ScalarField = std::function<double(double, double)>;

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Assembled operators of the mass-lumped P1 discretization.
///
/// stiffness  S   : integrals of grad(phi_j) . grad(phi_i)
/// lumped_mass m  : integrals of phi_i (diagonal of the lumped mass matrix)
/// mass        M_c: consistent mass, used for exact L2 norms of FE functions
///
/// The operator A with A_ij = S_ij / m_i (equivalently the discrete
/// Dirichlet Laplacian up to sign) is never stored; it is applied through
/// (S, m) so the implicit solves keep a symmetric system.
struct FemOperators {
  SparseMat stiffness;
  Eigen::VectorXd lumped_mass;
  SparseMat mass;

  int num_dofs() const { return static_cast<int>(lumped_mass.size()); }
};

FemOperators assemble(const Mesh& mesh);

/// Nodal interpolant: values[i] = g(x_i).
NodalField interpolate(const Mesh& mesh, const ScalarField& g);

/// Quasi-interpolant: values[j] = integral(g phi_j) / integral(phi_j) over
/// supp(phi_j), evaluated with a per-element rule that is exact for cubics.
NodalField quasi_interpolate(const Mesh& mesh, const ScalarField& g);

/// Lumped (mass-lumping) inner product and norm.
double inner_h(const NodalField& a, const NodalField& b,
               const FemOperators& ops);
double norm_h(const NodalField& v, const FemOperators& ops);

/// Exact L2 norm of the FE function (consistent mass quadratic form).
double norm_l2(const NodalField& v, const FemOperators& ops);

/// H1 seminorm: sqrt(v' S v).
double seminorm_h1(const NodalField& v, const FemOperators& ops);

/// Applies A: result[i] = (S v)_i / m_i.
NodalField apply_A(const NodalField& v, const FemOperators& ops);

}  // namespace spde
