#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spde/schemes.hpp"

namespace spde {

/// Runs fn(i) for i in [0, count) on up to `threads` workers (0 = one per
/// hardware thread, capped by the SPDE_THREADS environment variable).
/// Work items must be independent; exceptions propagate to the caller.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

/// Worker count after applying the SPDE_THREADS cap.
int resolve_thread_count(int requested);

struct SolverOptions {
  SolverMode mode = SolverMode::Auto;
  double tol = 1e-10;
  int max_iter = 0;  // 0 = default
};

/// Immutable per-(mesh, dt) bundle shared by every path of a study point.
struct StepKernel {
  SchemeId scheme{};
  double dt = 0.0;
  const Mesh* mesh = nullptr;
  const FemOperators* ops = nullptr;
  const NoiseModel* noise = nullptr;
  ImplicitSolver full_solver;
  ImplicitSolver half_solver;
  HeatSemigroup semigroup;  // prepared only for the exponential integrator
  bool has_semigroup = false;
};

StepKernel make_step_kernel(SchemeId scheme, const Mesh& mesh,
                            const FemOperators& ops, const NoiseModel& noise,
                            double dt, const SolverOptions& solver = {});

/// One sampled path: nodal snapshots at the checkpoint times (multiples of
/// checkpoint_dt, including 0 and T), the running minimum over all steps and
/// nodes, and whether every state stayed above -1e-12 * max|state|.
struct Trajectory {
  SchemeId scheme{};
  int mesh_n = 0;
  int dim = 0;
  double dt = 0.0;
  double checkpoint_dt = 0.0;
  std::vector<double> times;
  std::vector<NodalField> snapshots;
  double watermark = 0.0;
  bool nonneg = true;
};

Trajectory run_path_with(const StepKernel& kernel,
                         const BrownianLattice& lattice, double t_end,
                         const NodalField& u0, double checkpoint_dt);

Trajectory run_path(SchemeId scheme, const Mesh& mesh, const FemOperators& ops,
                    const NoiseModel& noise, const BrownianLattice& lattice,
                    double dt, double t_end, const ScalarField& u0,
                    double checkpoint_dt = 0.0,
                    const SolverOptions& solver = {});

/// Evaluates the coarse piecewise-affine function at the fine DOF
/// coordinates. Requires nested dyadic meshes (fine n a multiple of coarse
/// n); the embedding is exact, no quadrature.
NodalField prolong(const NodalField& coarse_field, const Mesh& coarse,
                   const Mesh& fine);

struct MetricBreakdown {
  double sup_l2 = 0.0;        // sup over checkpoints of mean squared L2 gap
  double grad_integral = 0.0;  // trapezium-rule time integral of mean |.|_H1^2
  double total = 0.0;
};

/// Strong-error metric between trajectory ensembles driven by the same
/// Brownian paths. Study snapshots are prolonged to the reference mesh; both
/// ensembles must share checkpoint times and path count.
MetricBreakdown error_metric_breakdown(std::span<const Trajectory> study,
                                       std::span<const Trajectory> reference,
                                       const Mesh& study_mesh,
                                       const Mesh& reference_mesh,
                                       const FemOperators& reference_ops);

double error_metric(std::span<const Trajectory> study,
                    std::span<const Trajectory> reference,
                    const Mesh& study_mesh, const Mesh& reference_mesh,
                    const FemOperators& reference_ops);

enum class StudyAxis { Time, Space };

struct StudyPointResult {
  SchemeId scheme{};
  double h = 0.0;
  double dt = 0.0;
  int paths = 0;
  double metric = 0.0;
  double slope_running = 0.0;  // NaN until two points exist
  double runtime_s = 0.0;
};

struct ErrorReport {
  SchemeId scheme{};
  StudyAxis axis{};
  std::vector<StudyPointResult> points;
  double slope = 0.0;
  double fit_residual = 0.0;
  int paths = 0;
};

struct StudyConfig {
  StudyAxis axis = StudyAxis::Time;
  std::vector<SchemeId> schemes;
  int n = 0;                    // time axis: fixed mesh subdivisions
  std::vector<double> dt_grid;  // time axis: study steps (coarse to fine)
  double ref_dt = 0.0;
  std::vector<int> n_grid;      // space axis: study meshes (coarse to fine)
  double dt = 0.0;              // space axis: shared time step
  int ref_n = 0;
  double t_end = 0.0;
  double lambda = 0.0;
  int paths = 0;
  std::uint64_t seed = 0;
  SolverOptions solver;
  std::string cache_dir;  // empty disables the reference cache
  int threads = 0;
  bool timings = false;
};

std::vector<ErrorReport> convergence_study(const StudyConfig& config);

/// Ordinary least squares of log2(metric) against log2(parameter). The two
/// points nearest the reference are dropped when their metric sits below
/// 10x the solver tolerance (coupling floor), keeping at least three points.
struct SlopeFit {
  double slope = 0.0;
  double residual = 0.0;
  int points_used = 0;
};

SlopeFit fit_log2_slope(std::span<const double> parameter,
                        std::span<const double> metric,
                        double floor_threshold = 0.0);

struct CensusConfig {
  std::vector<SchemeId> schemes;
  std::vector<double> lambdas;
  int n = 0;
  std::vector<double> dt_grid;
  double t_end = 0.0;
  int paths = 100;
  std::uint64_t seed = 0;
  SolverOptions solver;
  int threads = 0;
};

struct CensusRow {
  SchemeId scheme{};
  double lambda = 0.0;
  int n = 0;
  double dt = 0.0;
  int paths = 0;
  int k_nonneg = 0;
};

std::vector<CensusRow> nonneg_census(const CensusConfig& config);

struct EnergyConfig {
  SchemeId scheme = SchemeId::Split2;
  int n = 16;
  double lambda = 3.0;
  double dt = 0.0;
  double t_end = 0.5;
  std::vector<double> times;  // snapped to the step grid
  int paths = 500;
  std::uint64_t seed = 0;
  SolverOptions solver;
  int threads = 0;
};

struct EnergyRow {
  double t = 0.0;        // snapped evaluation time
  double mean_sq = 0.0;  // sample mean of |u(t)|_h^2
  double stderr_sq = 0.0;
  double bound = 0.0;    // exp(t c_f^2 c_e^2 M) |u(0)|_h^2
  bool ok = false;
};

struct EnergyReport {
  std::vector<EnergyRow> rows;
  bool decay_monotone = false;  // lambda = 0: pathwise |u|_h never increases
  bool ok = false;
};

EnergyReport energy_check(const EnergyConfig& config);

}  // namespace spde
