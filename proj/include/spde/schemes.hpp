#pragma once

#include <Eigen/Core>

#include <optional>
#include <string_view>

#include "spde/linalg.hpp"
#include "spde/noise.hpp"

namespace spde {

enum class SchemeId { Ema, Emi, EmiClip, Split2, StrangA, StrangB, Sexp };

const char* scheme_name(SchemeId id);
std::optional<SchemeId> parse_scheme(std::string_view name);

/// Exponential splitting and the semigroup integrator need the linear
/// diffusion f(u) = lambda u with a single mode.
bool scheme_requires_linear(SchemeId id);
/// Only the outer-exponential Strang variant consumes half-step Gaussians.
bool scheme_needs_half_steps(SchemeId id);

/// Everything one step needs besides the state: the step's normalized
/// Gaussians (one per mode), prebuilt solvers for weights dt and dt/2, the
/// prepared semigroup for the exponential integrator, and the noise model.
/// g * sqrt(dt) equals g_lo * sqrt(dt/2) + g_hi * sqrt(dt/2) up to rounding,
/// so all schemes consume the same Brownian path.
struct StepContext {
  double dt = 0.0;
  Eigen::VectorXd g;     // per-mode full-step Gaussians
  Eigen::VectorXd g_lo;  // per-mode half-step Gaussians (may be empty)
  Eigen::VectorXd g_hi;
  const ImplicitSolver* full_solver = nullptr;  // weight dt
  const ImplicitSolver* half_solver = nullptr;  // weight dt/2
  const HeatSemigroup* semigroup = nullptr;     // e^{-dt A}
  const NoiseModel* noise = nullptr;
  const FemOperators* ops = nullptr;
};

/// One-step map U_n -> U_{n+1}.
NodalField step(SchemeId id, const NodalField& u, const StepContext& ctx);

/// Nodewise Milstein multiplier for linear diffusion, a = lambda sqrt(dt) E:
/// 1 + a g + a^2 (g^2 - 1) / 2, which equals ((1 + a g)^2 + (1 - a^2)) / 2
/// and is therefore nonnegative whenever |a| <= 1.
double emi_linear_multiplier(double a, double g);

}  // namespace spde
