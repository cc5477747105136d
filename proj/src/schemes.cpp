#include "spde/schemes.hpp"

#include <cmath>
#include <stdexcept>

namespace spde {

const char* scheme_name(SchemeId id) {
  switch (id) {
    case SchemeId::Ema: return "ema";
    case SchemeId::Emi: return "emi";
    case SchemeId::EmiClip: return "emi_clip";
    case SchemeId::Split2: return "split2";
    case SchemeId::StrangA: return "strang_a";
    case SchemeId::StrangB: return "strang_b";
    case SchemeId::Sexp: return "sexp";
  }
  return "?";
}

std::optional<SchemeId> parse_scheme(std::string_view name) {
  if (name == "ema") return SchemeId::Ema;
  if (name == "emi") return SchemeId::Emi;
  if (name == "emi_clip" || name == "emi-clip") return SchemeId::EmiClip;
  if (name == "split2") return SchemeId::Split2;
  if (name == "strang_a" || name == "strang-a") return SchemeId::StrangA;
  if (name == "strang_b" || name == "strang-b") return SchemeId::StrangB;
  if (name == "sexp") return SchemeId::Sexp;
  return std::nullopt;
}

bool scheme_requires_linear(SchemeId id) {
  switch (id) {
    case SchemeId::Split2:
    case SchemeId::StrangA:
    case SchemeId::StrangB:
    case SchemeId::Sexp:
      return true;
    default:
      return false;
  }
}

bool scheme_needs_half_steps(SchemeId id) { return id == SchemeId::StrangB; }

double emi_linear_multiplier(double a, double g) {
  return 1.0 + a * g + 0.5 * a * a * (g * g - 1.0);
}

namespace {

// Nodewise geometric-Brownian factor exp(lambda g sqrt(dt) E - lambda^2 dt E^2 / 2).
Eigen::ArrayXd gbm_factor(const NoiseModel& noise, double lambda, double g,
                          double dt) {
  const Eigen::ArrayXd mode = noise.modes.col(0).array();
  return (lambda * g * std::sqrt(dt) * mode -
          0.5 * lambda * lambda * dt * mode.square())
      .exp();
}

NodalField noise_increment(const NoiseModel& noise, const NodalField& u,
                           const Eigen::VectorXd& g, double dt) {
  const double sqrt_dt = std::sqrt(dt);
  NodalField f_u(u.size());
  if (is_linear(noise.diffusion)) {
    f_u = linear_lambda(noise.diffusion) * u;
  } else {
    const auto& spec = std::get<GeneralDiffusion>(noise.diffusion);
    for (Eigen::Index i = 0; i < u.size(); ++i) f_u[i] = spec.f(u[i]);
  }
  NodalField incr = NodalField::Zero(u.size());
  for (int k = 0; k < noise.num_modes(); ++k) {
    incr.array() += sqrt_dt * g[k] * noise.modes.col(k).array() * f_u.array();
  }
  return incr;
}

NodalField step_split2(const NodalField& u, const StepContext& ctx) {
  const double lambda = linear_lambda(ctx.noise->diffusion);
  const NodalField half =
      u.array() * gbm_factor(*ctx.noise, lambda, ctx.g[0], ctx.dt);
  return solve(*ctx.full_solver, half);
}

NodalField step_strang_a(const NodalField& u, const StepContext& ctx) {
  const double lambda = linear_lambda(ctx.noise->diffusion);
  const NodalField first = solve(*ctx.half_solver, u);
  const NodalField mid =
      first.array() * gbm_factor(*ctx.noise, lambda, ctx.g[0], ctx.dt);
  return solve(*ctx.half_solver, mid);
}

NodalField step_strang_b(const NodalField& u, const StepContext& ctx) {
  if (ctx.g_lo.size() == 0 || ctx.g_hi.size() == 0) {
    throw std::invalid_argument("strang_b: half-step Gaussians unavailable");
  }
  const double lambda = linear_lambda(ctx.noise->diffusion);
  const double half_dt = 0.5 * ctx.dt;
  const NodalField first =
      u.array() * gbm_factor(*ctx.noise, lambda, ctx.g_lo[0], half_dt);
  const NodalField mid = solve(*ctx.full_solver, first);
  return mid.array() * gbm_factor(*ctx.noise, lambda, ctx.g_hi[0], half_dt);
}

NodalField step_ema(const NodalField& u, const StepContext& ctx) {
  const NodalField rhs = u + noise_increment(*ctx.noise, u, ctx.g, ctx.dt);
  return solve(*ctx.full_solver, rhs);
}

NodalField step_emi(const NodalField& u, const StepContext& ctx) {
  if (ctx.noise->num_modes() != 1) {
    throw std::invalid_argument("emi: restricted to a single noise mode");
  }
  const double g = ctx.g[0];
  NodalField rhs(u.size());
  if (is_linear(ctx.noise->diffusion)) {
    const double a_scale =
        linear_lambda(ctx.noise->diffusion) * std::sqrt(ctx.dt);
    const Eigen::ArrayXd mode = ctx.noise->modes.col(0).array();
    rhs = u.array() *
          (a_scale * mode).unaryExpr([g](double a) {
            return emi_linear_multiplier(a, g);
          });
  } else {
    const auto& spec = std::get<GeneralDiffusion>(ctx.noise->diffusion);
    const Eigen::ArrayXd mode = ctx.noise->modes.col(0).array();
    Eigen::ArrayXd f_u(u.size()), df_u(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      f_u[i] = spec.f(u[i]);
      df_u[i] = spec.df(u[i]);
    }
    rhs = u.array() + std::sqrt(ctx.dt) * g * mode * f_u +
          0.5 * ctx.dt * (g * g - 1.0) * mode.square() * df_u * f_u;
  }
  return solve(*ctx.full_solver, rhs);
}

NodalField step_sexp(const NodalField& u, const StepContext& ctx) {
  if (!ctx.semigroup) {
    throw std::invalid_argument("sexp: semigroup operator unavailable");
  }
  const double lambda = linear_lambda(ctx.noise->diffusion);
  const NodalField pre =
      u.array() * (1.0 + lambda * std::sqrt(ctx.dt) * ctx.g[0] *
                             ctx.noise->modes.col(0).array());
  return ctx.semigroup->apply(pre);
}

}  // namespace

NodalField step(SchemeId id, const NodalField& u, const StepContext& ctx) {
  switch (id) {
    case SchemeId::Split2: return step_split2(u, ctx);
    case SchemeId::StrangA: return step_strang_a(u, ctx);
    case SchemeId::StrangB: return step_strang_b(u, ctx);
    case SchemeId::Ema: return step_ema(u, ctx);
    case SchemeId::Emi: return step_emi(u, ctx);
    case SchemeId::EmiClip: return step_emi(u, ctx).cwiseMax(0.0);
    case SchemeId::Sexp: return step_sexp(u, ctx);
  }
  throw std::logic_error("step: unknown scheme");
}

}  // namespace spde
