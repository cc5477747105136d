#pragma once

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

namespace spde {

/// A simplex stored as global vertex ids; 1D elements leave v[2] == -1.
struct Simplex {
  std::array<int, 3> v{-1, -1, -1};
};

/// Structured triangulation of the unit interval or unit square with
/// homogeneous-Dirichlet numbering: degrees of freedom are exactly the
/// interior grid vertices, numbered row-major by grid position.
///
/// In 2D every grid cell is split along the lower-left to upper-right
/// diagonal (Friedrichs-Keller), which makes the mesh weakly acute and the
/// stiffness matrix the classical 5-point stencil.
struct Mesh {
  int dim = 0;
  int n = 0;       // subdivisions per side
  double h = 0.0;  // 1/n
  int num_dofs = 0;

  Eigen::Matrix<double, Eigen::Dynamic, 2> vertices;  // all grid vertices
  Eigen::VectorXi vertex_dof;                         // -1 on the boundary
  Eigen::VectorXi dof_vertex;                         // dof -> vertex id
  std::vector<Simplex> elements;

  // Set by the builders; hand-assembled fixtures leave it false and are
  // excluded from the structured-grid fast paths.
  bool structured = false;

  int vertices_per_element() const { return dim + 1; }
  bool on_boundary(int vertex) const { return vertex_dof[vertex] < 0; }
};

Mesh build_interval_mesh(int n);
Mesh build_unit_square_mesh(int n);

/// Measure (length/area) of one element.
double element_measure(const Mesh& mesh, const Simplex& element);

/// Constant P1 basis gradients on one element, one column per local vertex.
Eigen::Matrix<double, 2, 3> element_basis_gradients(const Mesh& mesh,
                                                    const Simplex& element);

struct AcutenessReport {
  bool ok = false;
  double worst_pair = 0.0;  // largest off-diagonal element gradient product
  int worst_element = -1;
};

/// Weak acuteness: every element-local pair of distinct basis gradients must
/// have a nonpositive inner product (up to roundoff).
AcutenessReport check_weak_acuteness(const Mesh& mesh);

/// Debug dump of vertices (id,x,y,dof) and elements (id,v0,v1,v2) as CSV.
void write_mesh_csv(const Mesh& mesh, const std::string& vertices_path,
                    const std::string& elements_path);

}  // namespace spde
