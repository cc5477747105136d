#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "spde/experiments.hpp"
#include "spde/rng.hpp"
#include "spde/schemes.hpp"

using namespace spde;

namespace {

// n=2 leaves a single interior node with mode value 1; with zero-weight
// solves and a zeroed stiffness the diffusion disappears entirely and every
// step is scalar.
struct SingleDof {
  Mesh mesh = build_unit_square_mesh(2);
  FemOperators ops = assemble(mesh);
  NoiseModel noise;
  ImplicitSolver identity_solver;

  explicit SingleDof(double lambda)
      : noise(builtin_model("sine2d", mesh, lambda)),
        identity_solver(make_implicit_solver(mesh, ops, 0.0)) {
    ops.stiffness.setZero();
  }

  StepContext ctx(double dt, double g) const {
    StepContext c;
    c.dt = dt;
    c.g = Eigen::VectorXd::Constant(1, g);
    c.full_solver = &identity_solver;
    c.half_solver = &identity_solver;
    c.noise = &noise;
    c.ops = &ops;
    return c;
  }
};

struct GridSetup {
  Mesh mesh;
  FemOperators ops;
  NoiseModel noise;
  ImplicitSolver full;
  ImplicitSolver half;
  HeatSemigroup semigroup;
  double dt;

  GridSetup(int n, double lambda, double dt_in)
      : mesh(build_unit_square_mesh(n)),
        ops(assemble(mesh)),
        noise(builtin_model("sine2d", mesh, lambda)),
        full(make_implicit_solver(mesh, ops, dt_in)),
        half(make_implicit_solver(mesh, ops, 0.5 * dt_in)),
        semigroup(make_heat_semigroup(mesh, ops, dt_in)),
        dt(dt_in) {}

  StepContext ctx(double g, double g1 = 0.0, double g2 = 0.0,
                  bool with_half = false) const {
    StepContext c;
    c.dt = dt;
    c.g = Eigen::VectorXd::Constant(1, g);
    if (with_half) {
      c.g_lo = Eigen::VectorXd::Constant(1, g1);
      c.g_hi = Eigen::VectorXd::Constant(1, g2);
    }
    c.full_solver = &full;
    c.half_solver = &half;
    c.semigroup = &semigroup;
    c.noise = &noise;
    c.ops = &ops;
    return c;
  }

  NodalField random_nonneg(std::uint64_t tag) const {
    rng::CounterStream stream(31415, tag);
    NodalField u(mesh.num_dofs);
    for (int i = 0; i < u.size(); ++i) u[i] = std::abs(stream.next_gaussian());
    return u;
  }

  NodalField sine_mode(int p, int q) const {
    NodalField v(mesh.num_dofs);
    for (int d = 0; d < mesh.num_dofs; ++d) {
      const int vert = mesh.dof_vertex[d];
      v[d] = std::sin(p * M_PI * mesh.vertices(vert, 0)) *
             std::sin(q * M_PI * mesh.vertices(vert, 1));
    }
    return v;
  }
};

bool nonneg_up_to_slack(const NodalField& u) {
  return u.minCoeff() >= -1e-12 * u.cwiseAbs().maxCoeff();
}

// 3 standard errors of the sample variance of the mean-one lognormal with
// log-variance sigma_sq, over the given number of draws.
double lognormal_var_band(double sigma_sq, int draws) {
  const double var = std::exp(sigma_sq) - 1.0;
  const double central4 = std::exp(6.0 * sigma_sq) -
                          4.0 * std::exp(3.0 * sigma_sq) +
                          6.0 * std::exp(sigma_sq) - 3.0;
  return 3.0 * std::sqrt((central4 - var * var) / draws);
}

}  // namespace

TEST_CASE("lambda = 0 collapses every scheme to its deterministic skeleton") {
  GridSetup s(8, 0.0, 0.125);
  rng::CounterStream stream(1, 0);
  NodalField u(s.mesh.num_dofs);
  for (int i = 0; i < u.size(); ++i) u[i] = stream.next_gaussian();

  const NodalField backward_euler = solve(s.full, u);
  const NodalField two_half_steps = solve(s.half, solve(s.half, u));

  for (SchemeId id :
       {SchemeId::Split2, SchemeId::StrangB, SchemeId::Ema, SchemeId::Emi}) {
    const NodalField out = step(id, u, s.ctx(0.83, 0.4, 0.9, true));
    CHECK((out - backward_euler).lpNorm<Eigen::Infinity>() == 0.0);
  }
  const NodalField strang = step(SchemeId::StrangA, u, s.ctx(0.83));
  CHECK((strang - two_half_steps).lpNorm<Eigen::Infinity>() == 0.0);

  const NodalField sexp = step(SchemeId::Sexp, u, s.ctx(-1.7));
  CHECK((sexp - s.semigroup.apply(u)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("single-DOF splitting step is an exact geometric Brownian move") {
  const double lambda = 1.3, dt = 0.2, u0 = 0.7;
  SingleDof s(lambda);
  NodalField u = NodalField::Constant(1, u0);

  const double g = 0.45;
  const NodalField one = step(SchemeId::Split2, u, s.ctx(dt, g));
  const double expected =
      u0 * std::exp(lambda * g * std::sqrt(dt) - 0.5 * lambda * lambda * dt);
  CHECK(one[0] == doctest::Approx(expected).epsilon(1e-15));

  // with the diffusion solve disabled the exponential map has mean one
  const int draws = 200000;
  rng::CounterStream stream(7, 7);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double v = step(SchemeId::Split2, u, s.ctx(dt, stream.next_gaussian()))[0];
    sum += v;
    sum_sq += v * v;
  }
  const double sigma_sq = lambda * lambda * dt;
  const double mean = sum / draws;
  const double var = (sum_sq / draws - mean * mean) / (u0 * u0);
  const double exact_var = std::exp(sigma_sq) - 1.0;
  CHECK(std::abs(mean - u0) <
        3.0 * u0 * std::sqrt(exact_var / draws));
  CHECK(std::abs(var - exact_var) < lognormal_var_band(sigma_sq, draws));
}

TEST_CASE("single-DOF Strang variants reproduce the same exponential") {
  const double lambda = 0.9, dt = 0.3, u0 = 1.1;
  SingleDof s(lambda);
  const NodalField u = NodalField::Constant(1, u0);

  // strang_a with identity solves equals the split2 exponential
  const double g = -0.6;
  CHECK(step(SchemeId::StrangA, u, s.ctx(dt, g))[0] ==
        doctest::Approx(step(SchemeId::Split2, u, s.ctx(dt, g))[0])
            .epsilon(1e-15));

  // strang_b composes two half-step exponentials into one full GBM factor
  auto ctx = s.ctx(dt, 0.0);
  const double g1 = 0.8, g2 = -1.2;
  ctx.g_lo = Eigen::VectorXd::Constant(1, g1);
  ctx.g_hi = Eigen::VectorXd::Constant(1, g2);
  const double out = step(SchemeId::StrangB, u, ctx)[0];
  const double expected =
      u0 * std::exp(lambda * (g1 + g2) * std::sqrt(0.5 * dt) -
                    0.5 * lambda * lambda * dt);
  CHECK(out == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("splitting schemes never leave the nonnegative cone") {
  GridSetup s(8, 4.0, 0.1);
  rng::CounterStream gaussians(22, 0);
  for (int trial = 0; trial < 10000; ++trial) {
    const NodalField u = s.random_nonneg(trial);
    const double g = gaussians.next_gaussian();
    const double g1 = gaussians.next_gaussian();
    // recombine so the half draws stay consistent with g
    const double g2 = g * std::sqrt(2.0) - g1;
    for (SchemeId id :
         {SchemeId::Split2, SchemeId::StrangA, SchemeId::StrangB}) {
      const NodalField out = step(id, u, s.ctx(g, g1, g2, true));
      CHECK(nonneg_up_to_slack(out));
    }
  }
}

TEST_CASE("euler-maruyama goes negative exactly when the multiplier does") {
  const double lambda = 2.0, dt = 0.25;
  SingleDof s(lambda);
  const NodalField u = NodalField::Constant(1, 1.0);
  const double threshold = -1.0 / (lambda * std::sqrt(dt));

  CHECK(step(SchemeId::Ema, u, s.ctx(dt, threshold * 1.01))[0] < 0.0);
  CHECK(step(SchemeId::Ema, u, s.ctx(dt, threshold * 0.99))[0] > 0.0);

  // drift-free mean is preserved
  rng::CounterStream stream(3, 3);
  const int draws = 200000;
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) {
    sum += step(SchemeId::Ema, u, s.ctx(dt, stream.next_gaussian()))[0];
  }
  const double se = lambda * std::sqrt(dt) / std::sqrt(double(draws));
  CHECK(std::abs(sum / draws - 1.0) < 3.0 * se);
}

TEST_CASE("euler-maruyama sums noise over several modes") {
  const double lambda = 1.4, dt = 0.05;
  const Mesh mesh = build_unit_square_mesh(4);
  const FemOperators ops = assemble(mesh);
  Eigen::MatrixXd modes(mesh.num_dofs, 2);
  modes.col(0) = interpolate(mesh, [](double x, double y) {
    return std::sin(M_PI * x) * std::sin(M_PI * y);
  });
  modes.col(1) = interpolate(mesh, [](double x, double y) {
    return 0.5 * std::cos(M_PI * x) * std::sin(M_PI * y);
  });
  const NoiseModel noise =
      make_noise_model(modes, 1.0, true, LinearDiffusion{lambda});
  const ImplicitSolver full = make_implicit_solver(mesh, ops, dt);

  StepContext ctx;
  ctx.dt = dt;
  ctx.g = Eigen::Vector2d(0.3, -1.1);
  ctx.full_solver = &full;
  ctx.noise = &noise;
  ctx.ops = &ops;

  rng::CounterStream stream(61, 0);
  NodalField u(mesh.num_dofs);
  for (int i = 0; i < u.size(); ++i) u[i] = stream.next_gaussian();

  const NodalField rhs =
      u.array() + std::sqrt(dt) * lambda *
                      (0.3 * modes.col(0).array() - 1.1 * modes.col(1).array()) *
                      u.array();
  const NodalField expected = solve(full, rhs);
  const NodalField out = step(SchemeId::Ema, u, ctx);
  CHECK((out - expected).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("milstein multiplier identity and sign condition") {
  rng::CounterStream stream(17, 0);
  for (int i = 0; i < 1000000; ++i) {
    const double a = 3.0 * (stream.next_uniform() - 0.5);
    const double g = stream.next_gaussian();
    const double closed_form =
        0.5 * ((1.0 + a * g) * (1.0 + a * g) + (1.0 - a * a));
    CHECK(std::abs(emi_linear_multiplier(a, g) - closed_form) <= 1e-14);
  }
  // |a| <= 1 keeps the multiplier nonnegative; |a| > 1 can fail
  CHECK(emi_linear_multiplier(1.5, -1.0) == doctest::Approx(-0.5));
  for (int i = 0; i < 10000; ++i) {
    const double a = 2.0 * stream.next_uniform() - 1.0;
    CHECK(emi_linear_multiplier(a, stream.next_gaussian()) >= 0.0);
  }
}

TEST_CASE("milstein stays nonnegative under the step-size condition") {
  // |lambda| sqrt(dt) c_e = 4 * sqrt(1/16) * 1 = 1
  GridSetup s(8, 4.0, 1.0 / 16.0);
  rng::CounterStream gaussians(23, 0);
  for (int trial = 0; trial < 10000; ++trial) {
    const NodalField u = s.random_nonneg(50000 + trial);
    const NodalField out =
        step(SchemeId::Emi, u, s.ctx(gaussians.next_gaussian()));
    CHECK(nonneg_up_to_slack(out));
  }
}

TEST_CASE("milstein general diffusion agrees with the linear fast path") {
  const double lambda = 1.7;
  GridSetup linear(6, lambda, 0.1);
  GridSetup general(6, lambda, 0.1);
  general.noise = make_noise_model(
      linear.noise.modes, 1.0, true,
      GeneralDiffusion{[lambda](double x) { return lambda * x; },
                       [lambda](double) { return lambda; }, lambda});
  rng::CounterStream stream(29, 0);
  NodalField u(linear.mesh.num_dofs);
  for (int i = 0; i < u.size(); ++i) u[i] = stream.next_gaussian();
  const double g = stream.next_gaussian();
  const NodalField a = step(SchemeId::Emi, u, linear.ctx(g));
  const NodalField b = step(SchemeId::Emi, u, general.ctx(g));
  CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-13 * u.cwiseAbs().maxCoeff());
}

TEST_CASE("clipped milstein is the plain step clamped at zero") {
  GridSetup s(6, 6.0, 0.5);  // violent noise so negatives actually occur
  rng::CounterStream stream(41, 0);
  bool saw_negative = false;
  for (int trial = 0; trial < 200; ++trial) {
    const NodalField u = s.random_nonneg(90000 + trial);
    const double g = stream.next_gaussian();
    const NodalField raw = step(SchemeId::Emi, u, s.ctx(g));
    const NodalField clipped = step(SchemeId::EmiClip, u, s.ctx(g));
    CHECK((clipped - raw.cwiseMax(0.0)).lpNorm<Eigen::Infinity>() == 0.0);
    saw_negative = saw_negative || raw.minCoeff() < 0.0;
    CHECK(clipped.minCoeff() >= 0.0);
  }
  CHECK(saw_negative);
}

TEST_CASE("exponential integrator decays eigenmodes exactly") {
  GridSetup s(8, 0.0, 0.01);
  const int p = 2, q = 1;
  const NodalField mode = s.sine_mode(p, q);
  const double mu = (4.0 - 2.0 * std::cos(p * M_PI * s.mesh.h) -
                     2.0 * std::cos(q * M_PI * s.mesh.h)) /
                    (s.mesh.h * s.mesh.h);
  const NodalField out = step(SchemeId::Sexp, mode, s.ctx(0.0));
  CHECK((out - std::exp(-s.dt * mu) * mode).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("exponential integrator meets drift-implicit EMa at second order") {
  // Both integrators share the explicit noise term, so the one-step gap is
  // the difference of the drift propagators applied to the noisy state;
  // exp(-x) - 1/(1+x) = O(x^2), so halving dt shrinks the gap by about four.
  const double lambda = 2.0, g = 0.7;
  auto gap = [&](double dt) {
    GridSetup grid(8, lambda, dt);
    const NodalField u = grid.sine_mode(1, 1);
    const NodalField a = step(SchemeId::Sexp, u, grid.ctx(g));
    const NodalField b = step(SchemeId::Ema, u, grid.ctx(g));
    return (a - b).norm();
  };
  const double ratio = gap(0.002) / gap(0.001);
  CHECK(ratio > 3.2);
  CHECK(ratio < 4.6);
}

TEST_CASE("sexp can go negative when the pre-semigroup state does") {
  const double lambda = 2.0, dt = 0.25;
  SingleDof s(lambda);
  GridSetup grid(2, lambda, dt);
  const NodalField u = NodalField::Constant(1, 1.0);
  const double bad_g = -1.2 / (lambda * std::sqrt(dt));
  const NodalField out = step(SchemeId::Sexp, u, grid.ctx(bad_g));
  CHECK(out[0] < 0.0);
}

TEST_CASE("strang_b without half-step noise is rejected") {
  GridSetup s(4, 1.0, 0.1);
  const NodalField u = s.random_nonneg(0);
  CHECK_THROWS_AS(step(SchemeId::StrangB, u, s.ctx(0.5)),
                  std::invalid_argument);
}

TEST_CASE("scheme names round-trip") {
  for (SchemeId id : {SchemeId::Ema, SchemeId::Emi, SchemeId::EmiClip,
                      SchemeId::Split2, SchemeId::StrangA, SchemeId::StrangB,
                      SchemeId::Sexp}) {
    CHECK(parse_scheme(scheme_name(id)) == id);
  }
  CHECK(!parse_scheme("euler").has_value());
}

TEST_CASE("multi-step single-DOF splitting matches the GBM law") {
  const double lambda = 0.5, t_end = 1.0;
  const int steps = 8;
  const double dt = t_end / steps;
  const double u0 = 1.0;
  SingleDof split_setup(lambda);

  auto law_check = [&](SchemeId id) {
    const int paths = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int p = 0; p < paths; ++p) {
      NodalField u = NodalField::Constant(1, u0);
      for (int k = 0; k < steps; ++k) {
        auto ctx = split_setup.ctx(dt, rng::gaussian_at(612, p, 0, 2 * k));
        if (id == SchemeId::StrangB) {
          const double g1 = rng::gaussian_at(612, p, 0, 2 * k);
          const double g2 = rng::gaussian_at(612, p, 0, 2 * k + 1);
          ctx.g = Eigen::VectorXd::Constant(1, (g1 + g2) / std::sqrt(2.0));
          ctx.g_lo = Eigen::VectorXd::Constant(1, g1);
          ctx.g_hi = Eigen::VectorXd::Constant(1, g2);
        }
        u = step(id, u, ctx);
      }
      sum += u[0];
      sum_sq += u[0] * u[0];
    }
    const double sigma_sq = lambda * lambda * t_end;
    const double mean = sum / paths;
    const double var = sum_sq / paths - mean * mean;
    const double exact_var = std::exp(sigma_sq) - 1.0;
    CHECK(std::abs(mean - u0) < 3.0 * std::sqrt(exact_var / paths));
    CHECK(std::abs(var - exact_var) < lognormal_var_band(sigma_sq, paths));
  };
  law_check(SchemeId::Split2);
  law_check(SchemeId::StrangB);
}
