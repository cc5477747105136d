#include "spde/mesh.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace spde {

Mesh build_interval_mesh(int n) {
  if (n < 2) {
    throw std::invalid_argument(
        "build_interval_mesh: n must be >= 2 (no interior vertex otherwise)");
  }
  Mesh mesh;
  mesh.dim = 1;
  mesh.n = n;
  mesh.h = 1.0 / n;
  mesh.num_dofs = n - 1;
  mesh.structured = true;

  mesh.vertices.resize(n + 1, 2);
  mesh.vertex_dof.resize(n + 1);
  mesh.dof_vertex.resize(n - 1);
  for (int i = 0; i <= n; ++i) {
    mesh.vertices(i, 0) = double(i) / n;
    mesh.vertices(i, 1) = 0.0;
    const bool interior = i > 0 && i < n;
    mesh.vertex_dof[i] = interior ? i - 1 : -1;
    if (interior) mesh.dof_vertex[i - 1] = i;
  }

  mesh.elements.reserve(n);
  for (int i = 0; i < n; ++i) {
    Simplex e;
    e.v = {i, i + 1, -1};
    mesh.elements.push_back(e);
  }
  return mesh;
}

Mesh build_unit_square_mesh(int n) {
  if (n < 2) {
    throw std::invalid_argument(
        "build_unit_square_mesh: n must be >= 2 (no interior vertex otherwise)");
  }
  Mesh mesh;
  mesh.dim = 2;
  mesh.n = n;
  mesh.h = 1.0 / n;
  mesh.num_dofs = (n - 1) * (n - 1);
  mesh.structured = true;

  const int verts_per_side = n + 1;
  mesh.vertices.resize(verts_per_side * verts_per_side, 2);
  mesh.vertex_dof.resize(verts_per_side * verts_per_side);
  mesh.dof_vertex.resize(mesh.num_dofs);
  for (int iy = 0; iy <= n; ++iy) {
    for (int ix = 0; ix <= n; ++ix) {
      const int vid = iy * verts_per_side + ix;
      mesh.vertices(vid, 0) = double(ix) / n;
      mesh.vertices(vid, 1) = double(iy) / n;
      const bool interior = ix > 0 && ix < n && iy > 0 && iy < n;
      if (interior) {
        const int dof = (iy - 1) * (n - 1) + (ix - 1);
        mesh.vertex_dof[vid] = dof;
        mesh.dof_vertex[dof] = vid;
      } else {
        mesh.vertex_dof[vid] = -1;
      }
    }
  }

  mesh.elements.reserve(2 * n * n);
  for (int cy = 0; cy < n; ++cy) {
    for (int cx = 0; cx < n; ++cx) {
      const int v00 = cy * verts_per_side + cx;
      const int v10 = v00 + 1;
      const int v01 = v00 + verts_per_side;
      const int v11 = v01 + 1;
      Simplex lower, upper;  // split along the v00-v11 diagonal
      lower.v = {v00, v10, v11};
      upper.v = {v00, v11, v01};
      mesh.elements.push_back(lower);
      mesh.elements.push_back(upper);
    }
  }
  return mesh;
}

double element_measure(const Mesh& mesh, const Simplex& element) {
  if (mesh.dim == 1) {
    return std::abs(mesh.vertices(element.v[1], 0) -
                    mesh.vertices(element.v[0], 0));
  }
  const Eigen::Vector2d a = mesh.vertices.row(element.v[0]);
  const Eigen::Vector2d b = mesh.vertices.row(element.v[1]);
  const Eigen::Vector2d c = mesh.vertices.row(element.v[2]);
  const Eigen::Vector2d ab = b - a;
  const Eigen::Vector2d ac = c - a;
  return 0.5 * std::abs(ab.x() * ac.y() - ab.y() * ac.x());
}

Eigen::Matrix<double, 2, 3> element_basis_gradients(const Mesh& mesh,
                                                    const Simplex& element) {
  Eigen::Matrix<double, 2, 3> grads = Eigen::Matrix<double, 2, 3>::Zero();
  if (mesh.dim == 1) {
    const double x0 = mesh.vertices(element.v[0], 0);
    const double x1 = mesh.vertices(element.v[1], 0);
    const double len = x1 - x0;
    grads(0, 0) = -1.0 / len;
    grads(0, 1) = 1.0 / len;
    return grads;
  }
  const Eigen::Vector2d a = mesh.vertices.row(element.v[0]);
  const Eigen::Vector2d b = mesh.vertices.row(element.v[1]);
  const Eigen::Vector2d c = mesh.vertices.row(element.v[2]);
  Eigen::Matrix2d jac;
  jac.col(0) = b - a;
  jac.col(1) = c - a;
  const Eigen::Matrix2d inv_t = jac.inverse().transpose();
  grads.col(0) = inv_t * Eigen::Vector2d(-1.0, -1.0);
  grads.col(1) = inv_t * Eigen::Vector2d(1.0, 0.0);
  grads.col(2) = inv_t * Eigen::Vector2d(0.0, 1.0);
  return grads;
}

AcutenessReport check_weak_acuteness(const Mesh& mesh) {
  AcutenessReport report;
  report.worst_pair = -std::numeric_limits<double>::infinity();
  const int nv = mesh.vertices_per_element();
  for (std::size_t k = 0; k < mesh.elements.size(); ++k) {
    const Simplex& element = mesh.elements[k];
    const double measure = element_measure(mesh, element);
    const auto grads = element_basis_gradients(mesh, element);
    for (int i = 0; i < nv; ++i) {
      for (int j = i + 1; j < nv; ++j) {
        const double pair = measure * grads.col(i).dot(grads.col(j));
        if (pair > report.worst_pair) {
          report.worst_pair = pair;
          report.worst_element = static_cast<int>(k);
        }
      }
    }
  }
  report.ok = report.worst_pair <= 1e-14;
  return report;
}

void write_mesh_csv(const Mesh& mesh, const std::string& vertices_path,
                    const std::string& elements_path) {
  std::FILE* vf = std::fopen(vertices_path.c_str(), "w");
  if (!vf) throw std::runtime_error("cannot open " + vertices_path);
  std::fprintf(vf, "id,x,y,dof\n");
  for (int v = 0; v < mesh.vertices.rows(); ++v) {
    std::fprintf(vf, "%d,%.17g,%.17g,%d\n", v, mesh.vertices(v, 0),
                 mesh.vertices(v, 1), mesh.vertex_dof[v]);
  }
  std::fclose(vf);

  std::FILE* ef = std::fopen(elements_path.c_str(), "w");
  if (!ef) throw std::runtime_error("cannot open " + elements_path);
  std::fprintf(ef, "id,v0,v1,v2\n");
  for (std::size_t k = 0; k < mesh.elements.size(); ++k) {
    const auto& e = mesh.elements[k];
    std::fprintf(ef, "%zu,%d,%d,%d\n", k, e.v[0], e.v[1], e.v[2]);
  }
  std::fclose(ef);
}

}  // namespace spde
