#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string_view>
#include <variant>

#include "spde/assembly.hpp"
#include "spde/mesh.hpp"

namespace spde {

/// Diffusion coefficient f(u) = lambda * u.
struct LinearDiffusion {
  double lambda = 0.0;
};

/// General Lipschitz f with f(0) = 0 and derivative for the Milstein term.
struct GeneralDiffusion {
  std::function<double(double)> f;
  std::function<double(double)> df;
  double lipschitz = 0.0;  // c_f
};

using DiffusionSpec = std::variant<LinearDiffusion, GeneralDiffusion>;

bool is_linear(const DiffusionSpec& spec);
double linear_lambda(const DiffusionSpec& spec);  // throws if not linear
double diffusion_eval(const DiffusionSpec& spec, double s);
double diffusion_derivative(const DiffusionSpec& spec, double s);
double diffusion_lipschitz(const DiffusionSpec& spec);  // c_f

/// Finite-dimensional noise: M spatial modes sampled at the mesh DOFs plus
/// the diffusion coefficient. c_e bounds the sup norm of the modes.
struct NoiseModel {
  Eigen::MatrixXd modes;  // num_dofs x M, column k holds e_k(x_i)
  double c_e = 0.0;
  bool c_e_exact = true;  // false when c_e is only the nodal max
  DiffusionSpec diffusion;

  int num_modes() const { return static_cast<int>(modes.cols()); }
};

/// Validates the mode bound and f(0) = 0 before returning the model.
NoiseModel make_noise_model(Eigen::MatrixXd modes, double c_e, bool c_e_exact,
                            DiffusionSpec diffusion);

/// Built-in single-mode models: "sine2d" is sin(pi x) sin(pi y) on the unit
/// square, "sine1d" is sin(pi x) on the interval; both have c_e = 1.
NoiseModel builtin_model(std::string_view name, const Mesh& mesh,
                         double lambda);

/// Per-path Brownian increments at the finest dyadic resolution.
///
/// Increment j of mode k is sqrt(T/K) times a Gaussian addressed by
/// (master_seed, path_id, k, j); regenerating with the same key reproduces
/// identical values regardless of threads or call order.
struct BrownianLattice {
  std::uint64_t master_seed = 0;
  std::uint64_t path_id = 0;
  double t_end = 0.0;
  int k_fine = 0;             // power of two
  Eigen::MatrixXd increments;  // k_fine x M
};

BrownianLattice make_brownian_lattice(std::uint64_t master_seed,
                                      std::uint64_t path_id, int num_modes,
                                      int k_fine, double t_end);

/// Coarse increments at dt = T * factor / k_fine together with the two
/// half-step sums (empty when factor == 1). Coarsening is pairwise block
/// summation, so parents equal the sum of their children bitwise.
struct StepIncrements {
  double dt = 0.0;
  int steps = 0;
  Eigen::MatrixXd db;       // steps x M
  Eigen::MatrixXd db_lo;    // first-half sums, steps x M
  Eigen::MatrixXd db_hi;    // second-half sums

  bool has_half() const { return db_lo.size() > 0; }
};

StepIncrements increments_at(const BrownianLattice& lattice, int factor);

}  // namespace spde
