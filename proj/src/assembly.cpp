#include "spde/assembly.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace spde {

namespace {

void check_size(const NodalField& v, const FemOperators& ops,
                const char* what) {
  if (v.size() != ops.num_dofs()) {
    throw std::invalid_argument(std::string(what) +
                                ": field length does not match DOF count");
  }
}

}  // namespace

FemOperators assemble(const Mesh& mesh) {
  const int n_dofs = mesh.num_dofs;
  const int nv = mesh.vertices_per_element();

  std::vector<Eigen::Triplet<double>> s_trip, m_trip;
  s_trip.reserve(mesh.elements.size() * nv * nv);
  m_trip.reserve(mesh.elements.size() * nv * nv);
  Eigen::VectorXd lumped = Eigen::VectorXd::Zero(n_dofs);

  for (const Simplex& element : mesh.elements) {
    const double measure = element_measure(mesh, element);
    const auto grads = element_basis_gradients(mesh, element);
    // P1 mass on a simplex: measure/(d+1)(d+2) * (1 + delta_ij).
    const double mass_off = measure / double((nv) * (nv + 1));
    for (int i = 0; i < nv; ++i) {
      const int gi = mesh.vertex_dof[element.v[i]];
      if (gi < 0) continue;
      lumped[gi] += measure / nv;
      for (int j = 0; j < nv; ++j) {
        const int gj = mesh.vertex_dof[element.v[j]];
        if (gj < 0) continue;
        s_trip.emplace_back(gi, gj, measure * grads.col(i).dot(grads.col(j)));
        m_trip.emplace_back(gi, gj, mass_off * (i == j ? 2.0 : 1.0));
      }
    }
  }

  FemOperators ops;
  ops.lumped_mass = std::move(lumped);
  ops.stiffness.resize(n_dofs, n_dofs);
  ops.stiffness.setFromTriplets(s_trip.begin(), s_trip.end());
  // Drop structurally-zero couplings (diagonal-square neighbours cancel).
  ops.stiffness.prune([](int, int, double value) { return value != 0.0; });
  ops.stiffness.makeCompressed();
  ops.mass.resize(n_dofs, n_dofs);
  ops.mass.setFromTriplets(m_trip.begin(), m_trip.end());
  ops.mass.makeCompressed();
  return ops;
}

NodalField interpolate(const Mesh& mesh, const ScalarField& g) {
  NodalField values(mesh.num_dofs);
  for (int dof = 0; dof < mesh.num_dofs; ++dof) {
    const int v = mesh.dof_vertex[dof];
    const double value = g(mesh.vertices(v, 0), mesh.vertices(v, 1));
    if (!std::isfinite(value)) {
      throw std::invalid_argument("interpolate: g is not finite at a vertex");
    }
    values[dof] = value;
  }
  return values;
}

NodalField quasi_interpolate(const Mesh& mesh, const ScalarField& g) {
  const int n_dofs = mesh.num_dofs;
  Eigen::VectorXd numer = Eigen::VectorXd::Zero(n_dofs);
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(n_dofs);

  if (mesh.dim == 1) {
    // Two-point Gauss rule per element, exact for cubics.
    const double xi = 1.0 / std::sqrt(3.0);
    const double qp[2] = {0.5 * (1.0 - xi), 0.5 * (1.0 + xi)};
    for (const Simplex& element : mesh.elements) {
      const double x0 = mesh.vertices(element.v[0], 0);
      const double x1 = mesh.vertices(element.v[1], 0);
      const double len = x1 - x0;
      for (double t : qp) {
        const double x = x0 + t * len;
        const double w = 0.5 * len;
        const double phi[2] = {1.0 - t, t};
        const double gv = g(x, 0.0);
        for (int i = 0; i < 2; ++i) {
          const int gi = mesh.vertex_dof[element.v[i]];
          if (gi < 0) continue;
          numer[gi] += w * gv * phi[i];
          denom[gi] += w * phi[i];
        }
      }
    }
  } else {
    // Four-point rule on triangles, exact for cubics: centroid with weight
    // -27/48 plus the three (3/5,1/5,1/5) points with weight 25/48.
    constexpr double w_c = -27.0 / 48.0;
    constexpr double w_p = 25.0 / 48.0;
    const double bary[4][3] = {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0},
                               {0.6, 0.2, 0.2},
                               {0.2, 0.6, 0.2},
                               {0.2, 0.2, 0.6}};
    const double weights[4] = {w_c, w_p, w_p, w_p};
    for (const Simplex& element : mesh.elements) {
      const double area = element_measure(mesh, element);
      const Eigen::Vector2d a = mesh.vertices.row(element.v[0]);
      const Eigen::Vector2d b = mesh.vertices.row(element.v[1]);
      const Eigen::Vector2d c = mesh.vertices.row(element.v[2]);
      for (int q = 0; q < 4; ++q) {
        const Eigen::Vector2d x =
            bary[q][0] * a + bary[q][1] * b + bary[q][2] * c;
        const double w = weights[q] * area;
        const double gv = g(x.x(), x.y());
        for (int i = 0; i < 3; ++i) {
          const int gi = mesh.vertex_dof[element.v[i]];
          if (gi < 0) continue;
          numer[gi] += w * gv * bary[q][i];
          denom[gi] += w * bary[q][i];
        }
      }
    }
  }
  return numer.cwiseQuotient(denom);
}

double inner_h(const NodalField& a, const NodalField& b,
               const FemOperators& ops) {
  check_size(a, ops, "inner_h");
  check_size(b, ops, "inner_h");
  return (a.array() * ops.lumped_mass.array() * b.array()).sum();
}

double norm_h(const NodalField& v, const FemOperators& ops) {
  return std::sqrt(inner_h(v, v, ops));
}

double norm_l2(const NodalField& v, const FemOperators& ops) {
  check_size(v, ops, "norm_l2");
  return std::sqrt(v.dot(ops.mass * v));
}

double seminorm_h1(const NodalField& v, const FemOperators& ops) {
  check_size(v, ops, "seminorm_h1");
  return std::sqrt(v.dot(ops.stiffness * v));
}

NodalField apply_A(const NodalField& v, const FemOperators& ops) {
  check_size(v, ops, "apply_A");
  return (ops.stiffness * v).cwiseQuotient(ops.lumped_mass);
}

}  // namespace spde
