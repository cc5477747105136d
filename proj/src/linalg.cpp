#include "spde/linalg.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace spde {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;

// DOFs are numbered row-major by grid position: dof = iy*(n-1) + ix.
Eigen::MatrixXd to_grid(const NodalField& v, int n) {
  const int m = n - 1;
  return Eigen::Map<const RowMat>(v.data(), m, m);
}

NodalField from_grid(const Eigen::MatrixXd& grid) {
  const int m = static_cast<int>(grid.rows());
  NodalField v(m * m);
  Eigen::Map<RowMat>(v.data(), m, m) = grid;
  return v;
}

// Diagonal spectral filter in the sine basis; scale(p,q) multiplies the
// (p,q) mode. 1D uses the first column.
NodalField apply_spectral_filter(const DstPlan& plan, int dim,
                                 const Eigen::ArrayXXd& scale,
                                 const NodalField& v) {
  if (dim == 1) {
    Eigen::VectorXd coeffs = plan.transform * v;
    coeffs.array() *= scale.col(0);
    return plan.transform * coeffs;
  }
  Eigen::MatrixXd coeffs = plan.transform * to_grid(v, plan.n) * plan.transform;
  coeffs.array() *= scale;
  return from_grid(plan.transform * coeffs * plan.transform);
}

Eigen::ArrayXXd spectral_mu(const DstPlan& plan, int dim) {
  const int m = plan.n - 1;
  if (dim == 1) {
    Eigen::ArrayXXd mu(m, 1);
    mu.col(0) = plan.eigenvalues.array();
    return mu;
  }
  Eigen::ArrayXXd mu(m, m);
  for (int p = 0; p < m; ++p) {
    for (int q = 0; q < m; ++q) {
      mu(p, q) = plan.eigenvalues[p] + plan.eigenvalues[q];
    }
  }
  return mu;
}

// Dense symmetric form of A = diag(1/m) S: similar transform with diag(m)^(1/2).
Eigen::MatrixXd dense_expm(const FemOperators& ops, double t) {
  const Eigen::VectorXd sqrt_m = ops.lumped_mass.cwiseSqrt();
  const Eigen::VectorXd inv_sqrt_m = sqrt_m.cwiseInverse();
  Eigen::MatrixXd sym = Eigen::MatrixXd(ops.stiffness);
  sym = inv_sqrt_m.asDiagonal() * sym * inv_sqrt_m.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("expm_action: dense eigendecomposition failed");
  }
  const Eigen::VectorXd damped = (-t * eig.eigenvalues().array()).exp();
  Eigen::MatrixXd exp_sym = eig.eigenvectors() * damped.asDiagonal() *
                            eig.eigenvectors().transpose();
  return inv_sqrt_m.asDiagonal() * exp_sym * sqrt_m.asDiagonal();
}

int default_max_iter(int n_dofs) {
  return 10 * static_cast<int>(std::ceil(std::sqrt(double(n_dofs)))) + 10;
}

}  // namespace

DstPlan make_dst_plan(int n) {
  if (n < 2) throw std::invalid_argument("make_dst_plan: n must be >= 2");
  DstPlan plan;
  plan.n = n;
  const int m = n - 1;
  const double h = 1.0 / n;
  plan.transform.resize(m, m);
  plan.eigenvalues.resize(m);
  const double norm = std::sqrt(2.0 / n);
  for (int p = 0; p < m; ++p) {
    plan.eigenvalues[p] = (2.0 - 2.0 * std::cos((p + 1) * M_PI * h)) / (h * h);
    for (int i = 0; i < m; ++i) {
      plan.transform(p, i) = norm * std::sin((p + 1) * (i + 1) * M_PI / n);
    }
  }
  return plan;
}

ImplicitSolver make_implicit_solver(const Mesh& mesh, const FemOperators& ops,
                                    double theta_dt, SolverMode mode,
                                    double tol, int max_iter) {
  if (theta_dt < 0.0) {
    throw std::invalid_argument("make_implicit_solver: theta_dt must be >= 0");
  }
  ImplicitSolver solver;
  solver.theta_dt = theta_dt;
  solver.tol = tol;
  solver.max_iter = max_iter > 0 ? max_iter : default_max_iter(mesh.num_dofs);
  solver.dim = mesh.dim;
  solver.grid_n = mesh.n;
  solver.ops = &ops;

  const bool want_spectral = mode != SolverMode::Cg;
  if (want_spectral && !mesh.structured) {
    if (mode == SolverMode::Spectral) {
      throw std::invalid_argument(
          "make_implicit_solver: spectral path needs a structured mesh");
    }
  }
  solver.spectral = want_spectral && mesh.structured;

  if (solver.spectral) {
    auto plan = std::make_shared<DstPlan>(make_dst_plan(mesh.n));
    solver.spectral_scale =
        (1.0 + theta_dt * spectral_mu(*plan, mesh.dim)).inverse();
    solver.plan = std::move(plan);
  } else {
    SparseMat system = ops.stiffness * theta_dt;
    Eigen::VectorXd diag_add = ops.lumped_mass;
    for (int i = 0; i < system.rows(); ++i) {
      system.coeffRef(i, i) += diag_add[i];
    }
    system.makeCompressed();
    solver.system = std::move(system);
    solver.jacobi_inv = solver.system.diagonal().cwiseInverse();
  }
  return solver;
}

NodalField solve(const ImplicitSolver& solver, const NodalField& b) {
  if (b.size() != solver.ops->num_dofs()) {
    throw std::invalid_argument("solve: right-hand side has wrong length");
  }
  if (!b.allFinite()) {
    throw std::invalid_argument("solve: right-hand side is not finite");
  }
  if (solver.theta_dt == 0.0) return b;

  if (solver.spectral) {
    return apply_spectral_filter(*solver.plan, solver.dim,
                                 solver.spectral_scale, b);
  }

  // Jacobi-preconditioned conjugate gradient on the symmetrized system.
  const Eigen::VectorXd rhs =
      solver.ops->lumped_mass.asDiagonal() * b;
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return NodalField::Zero(b.size());

  NodalField x = b;  // the solve is a small perturbation of the identity
  Eigen::VectorXd r = rhs - solver.system * x;
  Eigen::VectorXd z = solver.jacobi_inv.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  for (int iter = 0; iter < solver.max_iter; ++iter) {
    if (r.norm() <= solver.tol * rhs_norm) return x;
    const Eigen::VectorXd ap = solver.system * p;
    const double alpha = rz / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    z = solver.jacobi_inv.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  if (r.norm() <= solver.tol * rhs_norm) return x;
  throw std::runtime_error(
      "solve: conjugate gradient failed to converge, residual " +
      std::to_string(r.norm() / rhs_norm));
}

NodalField HeatSemigroup::apply(const NodalField& v) const {
  if (t == 0.0) return v;
  if (spectral) return apply_spectral_filter(*plan, dim, spectral_scale, v);
  return dense * v;
}

HeatSemigroup make_heat_semigroup(const Mesh& mesh, const FemOperators& ops,
                                  double t) {
  if (t < 0.0) {
    throw std::invalid_argument("make_heat_semigroup: t must be >= 0");
  }
  HeatSemigroup semigroup;
  semigroup.t = t;
  semigroup.dim = mesh.dim;
  semigroup.grid_n = mesh.n;
  if (mesh.structured) {
    semigroup.spectral = true;
    auto plan = std::make_shared<DstPlan>(make_dst_plan(mesh.n));
    semigroup.spectral_scale = (-t * spectral_mu(*plan, mesh.dim)).exp();
    semigroup.plan = std::move(plan);
  } else if (mesh.num_dofs <= 2048) {
    semigroup.dense = dense_expm(ops, t);
  } else {
    throw std::runtime_error(
        "make_heat_semigroup: unsupported mesh (unstructured and > 2048 DOFs)");
  }
  return semigroup;
}

NodalField expm_action(const Mesh& mesh, const FemOperators& ops,
                       const NodalField& v, double t) {
  if (v.size() != ops.num_dofs()) {
    throw std::invalid_argument("expm_action: field has wrong length");
  }
  return make_heat_semigroup(mesh, ops, t).apply(v);
}

}  // namespace spde
