#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "spde/assembly.hpp"
#include "spde/rng.hpp"

using namespace spde;

namespace {

NodalField random_field(int size, std::uint64_t tag) {
  rng::CounterStream stream(777, tag);
  NodalField v(size);
  for (int i = 0; i < size; ++i) v[i] = stream.next_gaussian();
  return v;
}

int dof_at(const Mesh& mesh, int ix, int iy) {
  return (iy - 1) * (mesh.n - 1) + (ix - 1);
}

}  // namespace

TEST_CASE("2D stiffness rows reproduce the 5-point stencil") {
  const Mesh mesh = build_unit_square_mesh(8);
  const FemOperators ops = assemble(mesh);
  const int center = dof_at(mesh, 4, 4);  // fully interior

  Eigen::VectorXd row = Eigen::VectorXd::Zero(mesh.num_dofs);
  for (SparseMat::InnerIterator it(ops.stiffness, center); it; ++it) {
    row[it.col()] = it.value();
  }
  CHECK(row[center] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(row[dof_at(mesh, 3, 4)] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(row[dof_at(mesh, 5, 4)] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(row[dof_at(mesh, 4, 3)] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(row[dof_at(mesh, 4, 5)] == doctest::Approx(-1.0).epsilon(1e-14));
  // diagonal-of-the-square neighbours carry no coupling (pruned exactly)
  CHECK(row[dof_at(mesh, 5, 5)] == 0.0);
  CHECK(row[dof_at(mesh, 3, 3)] == 0.0);
  for (SparseMat::InnerIterator it(ops.stiffness, center); it; ++it) {
    CHECK(it.value() != 0.0);  // no explicit zeros stored
  }
}

TEST_CASE("lumped mass is h^2 at every DOF and h in 1D") {
  const Mesh square = build_unit_square_mesh(16);
  const FemOperators ops = assemble(square);
  const double h2 = square.h * square.h;
  CHECK(ops.lumped_mass.minCoeff() == doctest::Approx(h2).epsilon(1e-14));
  CHECK(ops.lumped_mass.maxCoeff() == doctest::Approx(h2).epsilon(1e-14));

  const Mesh line = build_interval_mesh(8);
  const FemOperators lops = assemble(line);
  CHECK(lops.lumped_mass.minCoeff() == doctest::Approx(line.h));
  CHECK(lops.lumped_mass.maxCoeff() == doctest::Approx(line.h));
  // 1D stiffness row: (-1/h, 2/h, -1/h)
  Eigen::VectorXd row = Eigen::VectorXd::Zero(line.num_dofs);
  for (SparseMat::InnerIterator it(lops.stiffness, 3); it; ++it) {
    row[it.col()] = it.value();
  }
  CHECK(row[3] == doctest::Approx(2.0 / line.h));
  CHECK(row[2] == doctest::Approx(-1.0 / line.h));
  CHECK(row[4] == doctest::Approx(-1.0 / line.h));
}

TEST_CASE("consistent mass has the right interior row") {
  const Mesh mesh = build_unit_square_mesh(8);
  const FemOperators ops = assemble(mesh);
  const double h2 = mesh.h * mesh.h;
  const int center = dof_at(mesh, 4, 4);
  double diag = 0.0, row_sum = 0.0;
  for (SparseMat::InnerIterator it(ops.mass, center); it; ++it) {
    row_sum += it.value();
    if (it.col() == center) diag = it.value();
  }
  CHECK(diag == doctest::Approx(0.5 * h2).epsilon(1e-13));
  CHECK(row_sum == doctest::Approx(h2).epsilon(1e-13));  // integral of phi_i
}

TEST_CASE("stiffness off-diagonals are nonpositive on generated meshes") {
  for (int n : {4, 9, 16}) {
    const Mesh mesh = build_unit_square_mesh(n);
    const FemOperators ops = assemble(mesh);
    for (int row = 0; row < ops.stiffness.rows(); ++row) {
      for (SparseMat::InnerIterator it(ops.stiffness, row); it; ++it) {
        if (it.col() != row) CHECK(it.value() <= 0.0);
      }
    }
  }
}

TEST_CASE("interpolant hits nodal values and is idempotent") {
  const Mesh tiny = build_unit_square_mesh(2);
  const NodalField u0 = interpolate(tiny, [](double x, double y) {
    return std::sin(M_PI * x) * std::sin(M_PI * y);
  });
  CHECK(u0.size() == 1);
  CHECK(u0[0] == doctest::Approx(1.0).epsilon(1e-15));

  const Mesh mesh = build_unit_square_mesh(6);
  const NodalField zero = interpolate(mesh, [](double, double) { return 0.0; });
  CHECK(zero.norm() == 0.0);

  // affine g: nodal values are exact and re-interpolation is the identity
  auto affine = [](double x, double y) { return 2.0 * x - 3.0 * y + 0.25; };
  const NodalField v = interpolate(mesh, affine);
  const NodalField again = interpolate(mesh, [&](double x, double y) {
    // evaluate the FE function: at nodes it equals the nodal vector
    return affine(x, y);
  });
  CHECK((v - again).lpNorm<Eigen::Infinity>() == 0.0);

  CHECK_THROWS_AS(
      interpolate(mesh, [](double, double) {
        return std::numeric_limits<double>::quiet_NaN();
      }),
      std::invalid_argument);
}

TEST_CASE("quasi-interpolant: constants exactly, affine at symmetric nodes") {
  const Mesh mesh = build_unit_square_mesh(8);
  const NodalField c = quasi_interpolate(mesh, [](double, double) {
    return 3.25;
  });
  for (int i = 0; i < c.size(); ++i) {
    CHECK(c[i] == doctest::Approx(3.25).epsilon(1e-14));
  }

  // The hat support is centrally symmetric about its node, so affine g is
  // reproduced at the node itself.
  auto affine = [](double x, double y) { return 1.5 * x - 0.5 * y + 0.1; };
  const NodalField qa = quasi_interpolate(mesh, affine);
  const NodalField pa = interpolate(mesh, affine);
  CHECK((qa - pa).lpNorm<Eigen::Infinity>() < 1e-13);

  const Mesh line = build_interval_mesh(8);
  const NodalField ql = quasi_interpolate(line, [](double x, double) {
    return 0.75 * x + 0.2;
  });
  const NodalField pl = interpolate(line, [](double x, double) {
    return 0.75 * x + 0.2;
  });
  CHECK((ql - pl).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("quasi-interpolation bound for the smooth built-in mode") {
  // |pi_h g - Q_h g|_h <= h |grad g|_inf with g = sin(pi x) sin(pi y),
  // whose gradient has sup norm pi.
  for (int n : {4, 8, 16, 32}) {
    const Mesh mesh = build_unit_square_mesh(n);
    const FemOperators ops = assemble(mesh);
    auto g = [](double x, double y) {
      return std::sin(M_PI * x) * std::sin(M_PI * y);
    };
    const NodalField gap = interpolate(mesh, g) - quasi_interpolate(mesh, g);
    CHECK(norm_h(gap, ops) <= mesh.h * M_PI + 1e-8);
  }
  for (int n : {4, 8, 16, 32}) {
    const Mesh mesh = build_interval_mesh(n);
    const FemOperators ops = assemble(mesh);
    auto g = [](double x, double) { return std::sin(M_PI * x); };
    const NodalField gap = interpolate(mesh, g) - quasi_interpolate(mesh, g);
    CHECK(norm_h(gap, ops) <= mesh.h * M_PI + 1e-8);
  }
}

TEST_CASE("lumped norms: basis vectors, zero field, inner product identity") {
  const Mesh mesh = build_unit_square_mesh(8);
  const FemOperators ops = assemble(mesh);

  NodalField e = NodalField::Zero(mesh.num_dofs);
  e[17] = 1.0;
  CHECK(norm_h(e, ops) == doctest::Approx(mesh.h).epsilon(1e-14));
  CHECK(seminorm_h1(e, ops) == doctest::Approx(2.0).epsilon(1e-14));  // sqrt(4)

  const NodalField zero = NodalField::Zero(mesh.num_dofs);
  CHECK(norm_h(zero, ops) == 0.0);
  CHECK(norm_l2(zero, ops) == 0.0);
  CHECK(seminorm_h1(zero, ops) == 0.0);

  const NodalField v = random_field(mesh.num_dofs, 5);
  const double n_h = norm_h(v, ops);
  CHECK(inner_h(v, v, ops) == doctest::Approx(n_h * n_h).epsilon(1e-14));

  NodalField wrong(3);
  CHECK_THROWS_AS(norm_h(wrong, ops), std::invalid_argument);
  CHECK_THROWS_AS(inner_h(v, wrong, ops), std::invalid_argument);
}

TEST_CASE("L2 norm is dominated by the lumped norm; ratio stays bounded") {
  double prev_worst = 0.0;
  for (int n : {8, 16, 32}) {
    const Mesh mesh = build_unit_square_mesh(n);
    const FemOperators ops = assemble(mesh);
    double worst_ratio = 0.0;
    const int trials = n == 8 ? 10000 : 1000;
    for (int t = 0; t < trials; ++t) {
      const NodalField v = random_field(mesh.num_dofs, 100 + t);
      const double l2 = norm_l2(v, ops);
      const double lumped = norm_h(v, ops);
      CHECK(l2 <= lumped * (1.0 + 1e-12));
      worst_ratio = std::max(worst_ratio, lumped / l2);
    }
    // boundedness, not a specific constant: sqrt(3) for this mesh family
    CHECK(worst_ratio < 2.0);
    if (prev_worst > 0.0) CHECK(std::abs(worst_ratio - prev_worst) < 0.5);
    prev_worst = worst_ratio;
  }
}

TEST_CASE("L2 norm of the interpolated initial profile approaches 1/2") {
  // integral of sin^2(pi x) sin^2(pi y) over the unit square is 1/4
  double prev_err = 1.0;
  for (int n : {8, 16, 32}) {
    const Mesh mesh = build_unit_square_mesh(n);
    const FemOperators ops = assemble(mesh);
    const NodalField v = interpolate(mesh, [](double x, double y) {
      return std::sin(M_PI * x) * std::sin(M_PI * y);
    });
    const double err = std::abs(norm_l2(v, ops) * norm_l2(v, ops) - 0.25);
    CHECK(err < prev_err / 3.0);  // roughly O(h^2)
    prev_err = err;
  }
  CHECK(prev_err < 2e-3);
}

TEST_CASE("apply_A reproduces the scaled 5-point stencil and its eigenpairs") {
  const Mesh mesh = build_unit_square_mesh(8);
  const FemOperators ops = assemble(mesh);
  const double h = mesh.h;

  const NodalField zero = NodalField::Zero(mesh.num_dofs);
  CHECK(apply_A(zero, ops).norm() == 0.0);

  const NodalField v = random_field(mesh.num_dofs, 9);
  const NodalField av = apply_A(v, ops);
  const int center = dof_at(mesh, 4, 4);
  const double expected =
      (4.0 * v[center] - v[dof_at(mesh, 3, 4)] - v[dof_at(mesh, 5, 4)] -
       v[dof_at(mesh, 4, 3)] - v[dof_at(mesh, 4, 5)]) /
      (h * h);
  CHECK(av[center] == doctest::Approx(expected).epsilon(1e-12));

  // discrete sine modes are eigenvectors with the classical eigenvalues
  for (int p : {1, 3}) {
    for (int q : {2, 5}) {
      NodalField mode(mesh.num_dofs);
      for (int d = 0; d < mesh.num_dofs; ++d) {
        const int vert = mesh.dof_vertex[d];
        mode[d] = std::sin(p * M_PI * mesh.vertices(vert, 0)) *
                  std::sin(q * M_PI * mesh.vertices(vert, 1));
      }
      const double mu = (4.0 - 2.0 * std::cos(p * M_PI * h) -
                         2.0 * std::cos(q * M_PI * h)) /
                        (h * h);
      CHECK((apply_A(mode, ops) - mu * mode).lpNorm<Eigen::Infinity>() <
            1e-10 * mu);
    }
  }
}
