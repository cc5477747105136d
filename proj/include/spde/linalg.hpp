#pragma once

#include <Eigen/Core>

#include <memory>

#include "spde/assembly.hpp"
#include "spde/mesh.hpp"

namespace spde {

enum class SolverMode { Auto, Cg, Spectral };

/// Orthonormal discrete sine transform for the structured grids, together
/// with the matching eigenvalues of the one-dimensional stencil. The 2D
/// operator separates, so one plan covers both dimensions.
struct DstPlan {
  int n = 0;                    // grid subdivisions, transform is (n-1)^2
  Eigen::MatrixXd transform;    // symmetric, orthogonal
  Eigen::VectorXd eigenvalues;  // (2 - 2 cos(p pi h)) / h^2, p = 1..n-1
};

DstPlan make_dst_plan(int n);

/// Solver for (diag(m) + theta_dt S) U = diag(m) b. The system matrix is
/// symmetric positive definite and an M-matrix, so a nonnegative right-hand
/// side yields a componentwise (numerically) nonnegative solution.
struct ImplicitSolver {
  double theta_dt = 0.0;
  double tol = 1e-10;
  int max_iter = 0;
  bool spectral = false;
  int dim = 0;
  int grid_n = 0;
  const FemOperators* ops = nullptr;

  // spectral path
  std::shared_ptr<const DstPlan> plan;
  Eigen::ArrayXXd spectral_scale;  // 1 / (1 + theta_dt mu), grid layout

  // conjugate-gradient path
  SparseMat system;          // diag(m) + theta_dt S
  Eigen::VectorXd jacobi_inv;
};

ImplicitSolver make_implicit_solver(const Mesh& mesh, const FemOperators& ops,
                                    double theta_dt,
                                    SolverMode mode = SolverMode::Auto,
                                    double tol = 1e-10, int max_iter = 0);

/// Deterministic for fixed inputs. Throws std::runtime_error when the CG
/// iteration fails to reach the requested relative residual.
NodalField solve(const ImplicitSolver& solver, const NodalField& b);

/// Heat semigroup e^{-tA} prepared once for a fixed t (used per time step).
struct HeatSemigroup {
  double t = 0.0;
  bool spectral = false;
  int dim = 0;
  int grid_n = 0;
  std::shared_ptr<const DstPlan> plan;
  Eigen::ArrayXXd spectral_scale;  // exp(-t mu)
  Eigen::MatrixXd dense;           // dense fallback operator

  NodalField apply(const NodalField& v) const;
};

HeatSemigroup make_heat_semigroup(const Mesh& mesh, const FemOperators& ops,
                                  double t);

/// Convenience wrapper: e^{-tA} v. Structured meshes use the sine transform;
/// otherwise a dense symmetric eigendecomposition up to 2048 DOFs.
NodalField expm_action(const Mesh& mesh, const FemOperators& ops,
                       const NodalField& v, double t);

}  // namespace spde
