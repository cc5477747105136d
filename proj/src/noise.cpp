#include "spde/noise.hpp"

#include <cmath>
#include <stdexcept>

#include "spde/rng.hpp"

namespace spde {

bool is_linear(const DiffusionSpec& spec) {
  return std::holds_alternative<LinearDiffusion>(spec);
}

double linear_lambda(const DiffusionSpec& spec) {
  if (const auto* linear = std::get_if<LinearDiffusion>(&spec)) {
    return linear->lambda;
  }
  throw std::invalid_argument("diffusion spec is not linear");
}

double diffusion_eval(const DiffusionSpec& spec, double s) {
  if (const auto* linear = std::get_if<LinearDiffusion>(&spec)) {
    return linear->lambda * s;
  }
  return std::get<GeneralDiffusion>(spec).f(s);
}

double diffusion_derivative(const DiffusionSpec& spec, double s) {
  if (const auto* linear = std::get_if<LinearDiffusion>(&spec)) {
    return linear->lambda;
  }
  return std::get<GeneralDiffusion>(spec).df(s);
}

double diffusion_lipschitz(const DiffusionSpec& spec) {
  if (const auto* linear = std::get_if<LinearDiffusion>(&spec)) {
    return std::abs(linear->lambda);
  }
  return std::get<GeneralDiffusion>(spec).lipschitz;
}

NoiseModel make_noise_model(Eigen::MatrixXd modes, double c_e, bool c_e_exact,
                            DiffusionSpec diffusion) {
  if (modes.cols() < 1) {
    throw std::invalid_argument("make_noise_model: at least one mode required");
  }
  if (modes.array().abs().maxCoeff() > c_e * (1.0 + 1e-14)) {
    throw std::invalid_argument(
        "make_noise_model: a nodal mode value exceeds the stated bound c_e");
  }
  if (std::abs(diffusion_eval(diffusion, 0.0)) > 1e-14) {
    throw std::invalid_argument("make_noise_model: f(0) must vanish");
  }
  NoiseModel model;
  model.modes = std::move(modes);
  model.c_e = c_e;
  model.c_e_exact = c_e_exact;
  model.diffusion = std::move(diffusion);
  return model;
}

NoiseModel builtin_model(std::string_view name, const Mesh& mesh,
                         double lambda) {
  ScalarField mode;
  if (name == "sine2d") {
    if (mesh.dim != 2) {
      throw std::invalid_argument("builtin_model: sine2d needs a 2D mesh");
    }
    mode = [](double x, double y) {
      return std::sin(M_PI * x) * std::sin(M_PI * y);
    };
  } else if (name == "sine1d") {
    if (mesh.dim != 1) {
      throw std::invalid_argument("builtin_model: sine1d needs a 1D mesh");
    }
    mode = [](double x, double) { return std::sin(M_PI * x); };
  } else {
    throw std::invalid_argument("builtin_model: unknown model '" +
                                std::string(name) + "'");
  }
  Eigen::MatrixXd modes(mesh.num_dofs, 1);
  modes.col(0) = interpolate(mesh, mode);
  return make_noise_model(std::move(modes), 1.0, true,
                          LinearDiffusion{lambda});
}

BrownianLattice make_brownian_lattice(std::uint64_t master_seed,
                                      std::uint64_t path_id, int num_modes,
                                      int k_fine, double t_end) {
  if (k_fine < 1 || (k_fine & (k_fine - 1)) != 0) {
    throw std::invalid_argument(
        "make_brownian_lattice: k_fine must be a power of two");
  }
  if (num_modes < 1 || t_end <= 0.0) {
    throw std::invalid_argument("make_brownian_lattice: bad modes or t_end");
  }
  BrownianLattice lattice;
  lattice.master_seed = master_seed;
  lattice.path_id = path_id;
  lattice.t_end = t_end;
  lattice.k_fine = k_fine;
  lattice.increments.resize(k_fine, num_modes);
  const double scale = std::sqrt(t_end / k_fine);
  for (int mode = 0; mode < num_modes; ++mode) {
    for (int step = 0; step < k_fine; ++step) {
      lattice.increments(step, mode) =
          scale * rng::gaussian_at(master_seed, path_id,
                                   static_cast<std::uint32_t>(mode),
                                   static_cast<std::uint32_t>(step));
    }
  }
  return lattice;
}

namespace {

// Pairwise sum over a dyadic block; parents are bitwise equal to the sum of
// their two children because both sides reduce through this same tree.
double block_sum(const Eigen::MatrixXd& fine, int mode, int begin, int len) {
  if (len == 1) return fine(begin, mode);
  const int half = len / 2;
  return block_sum(fine, mode, begin, half) +
         block_sum(fine, mode, begin + half, half);
}

}  // namespace

StepIncrements increments_at(const BrownianLattice& lattice, int factor) {
  if (factor < 1 || (factor & (factor - 1)) != 0 ||
      lattice.k_fine % factor != 0) {
    throw std::invalid_argument(
        "increments_at: factor must be a power of two dividing k_fine");
  }
  const int steps = lattice.k_fine / factor;
  const int modes = static_cast<int>(lattice.increments.cols());

  StepIncrements out;
  out.dt = lattice.t_end * factor / lattice.k_fine;
  out.steps = steps;
  out.db.resize(steps, modes);
  if (factor >= 2) {
    out.db_lo.resize(steps, modes);
    out.db_hi.resize(steps, modes);
  }
  for (int mode = 0; mode < modes; ++mode) {
    for (int j = 0; j < steps; ++j) {
      if (factor == 1) {
        out.db(j, mode) = lattice.increments(j * factor, mode);
        continue;
      }
      const int half = factor / 2;
      const double lo = block_sum(lattice.increments, mode, j * factor, half);
      const double hi =
          block_sum(lattice.increments, mode, j * factor + half, half);
      out.db_lo(j, mode) = lo;
      out.db_hi(j, mode) = hi;
      out.db(j, mode) = lo + hi;
    }
  }
  return out;
}

}  // namespace spde
