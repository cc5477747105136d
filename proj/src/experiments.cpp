#include "spde/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace spde {

namespace {

bool is_pow2(long value) { return value >= 1 && (value & (value - 1)) == 0; }

// Ratio of two dyadic config values; throws unless it is a whole number.
long exact_ratio(double numerator, double denominator, const char* what) {
  const double ratio = numerator / denominator;
  const long rounded = std::lround(ratio);
  if (rounded < 1 || std::abs(ratio - double(rounded)) > 1e-9 * ratio) {
    throw std::invalid_argument(std::string(what) +
                                ": ratio " + std::to_string(ratio) +
                                " is not a whole number");
  }
  return rounded;
}

double builtin_u0(const Mesh& mesh, double x, double y) {
  return mesh.dim == 2 ? std::sin(M_PI * x) * std::sin(M_PI * y)
                       : std::sin(M_PI * x);
}

NodalField builtin_u0_field(const Mesh& mesh) {
  return interpolate(mesh, [&mesh](double x, double y) {
    return builtin_u0(mesh, x, y);
  });
}

double wall_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

}  // namespace

int resolve_thread_count(int requested) {
  int count = requested > 0
                  ? requested
                  : static_cast<int>(std::thread::hardware_concurrency());
  if (count < 1) count = 1;
  if (const char* env = std::getenv("SPDE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) count = std::min(count, cap);
  }
  return count;
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  const int workers = std::min(resolve_thread_count(threads), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(count);
          break;
        }
      }
    });
  }
  for (auto& worker : pool) worker.join();
  if (error) std::rethrow_exception(error);
}

StepKernel make_step_kernel(SchemeId scheme, const Mesh& mesh,
                            const FemOperators& ops, const NoiseModel& noise,
                            double dt, const SolverOptions& solver) {
  if (dt <= 0.0) throw std::invalid_argument("make_step_kernel: dt <= 0");
  if (scheme_requires_linear(scheme)) {
    if (!is_linear(noise.diffusion) || noise.num_modes() != 1) {
      throw std::invalid_argument(
          std::string(scheme_name(scheme)) +
          " requires the linear diffusion with a single mode");
    }
  }
  if ((scheme == SchemeId::Emi || scheme == SchemeId::EmiClip) &&
      noise.num_modes() != 1) {
    throw std::invalid_argument("emi requires a single noise mode");
  }
  StepKernel kernel;
  kernel.scheme = scheme;
  kernel.dt = dt;
  kernel.mesh = &mesh;
  kernel.ops = &ops;
  kernel.noise = &noise;
  kernel.full_solver =
      make_implicit_solver(mesh, ops, dt, solver.mode, solver.tol,
                           solver.max_iter);
  if (scheme == SchemeId::StrangA) {
    kernel.half_solver =
        make_implicit_solver(mesh, ops, 0.5 * dt, solver.mode, solver.tol,
                             solver.max_iter);
  }
  if (scheme == SchemeId::Sexp) {
    kernel.semigroup = make_heat_semigroup(mesh, ops, dt);
    kernel.has_semigroup = true;
  }
  return kernel;
}

Trajectory run_path_with(const StepKernel& kernel,
                         const BrownianLattice& lattice, double t_end,
                         const NodalField& u0, double checkpoint_dt) {
  const double dt = kernel.dt;
  if (t_end <= 0.0) throw std::invalid_argument("run_path: t_end must be > 0");
  if (lattice.t_end != t_end) {
    throw std::invalid_argument("run_path: lattice covers a different horizon");
  }
  const long steps = exact_ratio(t_end, dt, "run_path: t_end/dt");
  if (checkpoint_dt <= 0.0) checkpoint_dt = dt;
  const long snap_every = exact_ratio(checkpoint_dt, dt,
                                      "run_path: checkpoint_dt/dt");
  if (steps % snap_every != 0) {
    throw std::invalid_argument("run_path: T is not a checkpoint multiple");
  }
  const long factor = exact_ratio(dt * lattice.k_fine, t_end,
                                  "run_path: lattice factor");
  if (!is_pow2(factor) || lattice.k_fine % factor != 0) {
    throw std::invalid_argument("run_path: lattice resolution incompatible");
  }
  const StepIncrements incr =
      increments_at(lattice, static_cast<int>(factor));
  if (scheme_needs_half_steps(kernel.scheme) && !incr.has_half()) {
    throw std::invalid_argument(
        "run_path: scheme needs half-step noise, use a finer lattice");
  }

  Trajectory traj;
  traj.scheme = kernel.scheme;
  traj.mesh_n = kernel.mesh->n;
  traj.dim = kernel.mesh->dim;
  traj.dt = dt;
  traj.checkpoint_dt = checkpoint_dt;
  traj.times.reserve(steps / snap_every + 1);
  traj.snapshots.reserve(steps / snap_every + 1);

  const double sqrt_dt = std::sqrt(dt);
  const double sqrt_half_dt = std::sqrt(0.5 * dt);
  const double nonneg_tol = 1e-12;

  NodalField u = u0;
  auto track = [&](const NodalField& state) {
    const double low = state.minCoeff();
    traj.watermark = std::min(traj.watermark, low);
    if (low < -nonneg_tol * state.cwiseAbs().maxCoeff()) traj.nonneg = false;
  };
  traj.watermark = u.minCoeff();
  traj.nonneg = true;
  track(u);
  traj.times.push_back(0.0);
  traj.snapshots.push_back(u);

  StepContext ctx;
  ctx.dt = dt;
  ctx.full_solver = &kernel.full_solver;
  ctx.half_solver =
      kernel.half_solver.ops != nullptr ? &kernel.half_solver : nullptr;
  ctx.semigroup = kernel.has_semigroup ? &kernel.semigroup : nullptr;
  ctx.noise = kernel.noise;
  ctx.ops = kernel.ops;

  for (long n = 0; n < steps; ++n) {
    ctx.g = incr.db.row(n).transpose() / sqrt_dt;
    if (incr.has_half()) {
      ctx.g_lo = incr.db_lo.row(n).transpose() / sqrt_half_dt;
      ctx.g_hi = incr.db_hi.row(n).transpose() / sqrt_half_dt;
    }
    u = step(kernel.scheme, u, ctx);
    track(u);
    if ((n + 1) % snap_every == 0) {
      traj.times.push_back(double(n + 1) * dt);
      traj.snapshots.push_back(u);
    }
  }
  return traj;
}

Trajectory run_path(SchemeId scheme, const Mesh& mesh, const FemOperators& ops,
                    const NoiseModel& noise, const BrownianLattice& lattice,
                    double dt, double t_end, const ScalarField& u0,
                    double checkpoint_dt, const SolverOptions& solver) {
  const StepKernel kernel =
      make_step_kernel(scheme, mesh, ops, noise, dt, solver);
  return run_path_with(kernel, lattice, t_end, interpolate(mesh, u0),
                       checkpoint_dt);
}

NodalField prolong(const NodalField& coarse_field, const Mesh& coarse,
                   const Mesh& fine) {
  if (coarse.dim != fine.dim || fine.n % coarse.n != 0) {
    throw std::invalid_argument("prolong: meshes are not nested");
  }
  if (coarse_field.size() != coarse.num_dofs) {
    throw std::invalid_argument("prolong: field does not match coarse mesh");
  }
  if (fine.n == coarse.n) return coarse_field;

  const int nc = coarse.n;
  // Nodal value of the coarse function, boundary rows/columns are zero.
  auto coarse_value = [&](int ix, int iy) -> double {
    if (ix <= 0 || ix >= nc || iy <= 0 || iy >= nc) return 0.0;
    return coarse.dim == 1 ? coarse_field[ix - 1]
                           : coarse_field[(iy - 1) * (nc - 1) + (ix - 1)];
  };

  NodalField fine_field(fine.num_dofs);
  for (int dof = 0; dof < fine.num_dofs; ++dof) {
    const int vertex = fine.dof_vertex[dof];
    const double x = fine.vertices(vertex, 0);
    const double y = fine.vertices(vertex, 1);
    if (coarse.dim == 1) {
      int cell = std::min(int(x * nc), nc - 1);
      const double local = x * nc - cell;
      fine_field[dof] = coarse_value(cell, 1) +
                        local * (coarse_value(cell + 1, 1) -
                                 coarse_value(cell, 1));
      continue;
    }
    const int cx = std::min(int(x * nc), nc - 1);
    const int cy = std::min(int(y * nc), nc - 1);
    const double xi = x * nc - cx;
    const double eta = y * nc - cy;
    const double v00 = coarse_value(cx, cy);
    const double v11 = coarse_value(cx + 1, cy + 1);
    if (eta <= xi) {  // lower triangle of the diagonal split
      const double v10 = coarse_value(cx + 1, cy);
      fine_field[dof] = v00 + xi * (v10 - v00) + eta * (v11 - v10);
    } else {
      const double v01 = coarse_value(cx, cy + 1);
      fine_field[dof] = v00 + eta * (v01 - v00) + xi * (v11 - v01);
    }
  }
  return fine_field;
}

namespace {

// Per-checkpoint squared gaps of one (study, reference) trajectory pair,
// both prolonged into the reference space.
struct PairGaps {
  Eigen::ArrayXd l2_sq;
  Eigen::ArrayXd h1_sq;
};

PairGaps pair_gaps(const Trajectory& study, const Trajectory& reference,
                   const Mesh& study_mesh, const Mesh& reference_mesh,
                   const FemOperators& reference_ops) {
  if (study.times.size() != reference.times.size()) {
    throw std::invalid_argument("error_metric: checkpoint grids differ");
  }
  const int checkpoints = static_cast<int>(study.times.size());
  PairGaps gaps;
  gaps.l2_sq.resize(checkpoints);
  gaps.h1_sq.resize(checkpoints);
  const bool same_space = study_mesh.n == reference_mesh.n;
  for (int j = 0; j < checkpoints; ++j) {
    if (study.times[j] != reference.times[j]) {
      throw std::invalid_argument("error_metric: checkpoint times differ");
    }
    const NodalField diff =
        same_space
            ? NodalField(study.snapshots[j] - reference.snapshots[j])
            : NodalField(prolong(study.snapshots[j], study_mesh,
                                 reference_mesh) -
                         reference.snapshots[j]);
    gaps.l2_sq[j] = diff.dot(reference_ops.mass * diff);
    gaps.h1_sq[j] = diff.dot(reference_ops.stiffness * diff);
  }
  return gaps;
}

MetricBreakdown metric_from_sums(const Eigen::ArrayXd& sum_l2,
                                 const Eigen::ArrayXd& sum_h1, int paths,
                                 double checkpoint_dt) {
  MetricBreakdown breakdown;
  const int checkpoints = static_cast<int>(sum_l2.size());
  breakdown.sup_l2 = sum_l2.maxCoeff() / paths;
  double integral = 0.0;
  for (int j = 0; j < checkpoints; ++j) {
    const double weight = (j == 0 || j == checkpoints - 1) ? 0.5 : 1.0;
    integral += weight * sum_h1[j] / paths;
  }
  breakdown.grad_integral = integral * checkpoint_dt;
  breakdown.total = breakdown.sup_l2 + breakdown.grad_integral;
  return breakdown;
}

}  // namespace

MetricBreakdown error_metric_breakdown(std::span<const Trajectory> study,
                                       std::span<const Trajectory> reference,
                                       const Mesh& study_mesh,
                                       const Mesh& reference_mesh,
                                       const FemOperators& reference_ops) {
  if (study.empty() || study.size() != reference.size()) {
    throw std::invalid_argument("error_metric: ensembles differ in size");
  }
  Eigen::ArrayXd sum_l2, sum_h1;
  for (std::size_t p = 0; p < study.size(); ++p) {
    const PairGaps gaps = pair_gaps(study[p], reference[p], study_mesh,
                                    reference_mesh, reference_ops);
    if (p == 0) {
      sum_l2 = gaps.l2_sq;
      sum_h1 = gaps.h1_sq;
    } else {
      sum_l2 += gaps.l2_sq;
      sum_h1 += gaps.h1_sq;
    }
  }
  return metric_from_sums(sum_l2, sum_h1, static_cast<int>(study.size()),
                          study[0].checkpoint_dt);
}

double error_metric(std::span<const Trajectory> study,
                    std::span<const Trajectory> reference,
                    const Mesh& study_mesh, const Mesh& reference_mesh,
                    const FemOperators& reference_ops) {
  return error_metric_breakdown(study, reference, study_mesh, reference_mesh,
                                reference_ops)
      .total;
}

SlopeFit fit_log2_slope(std::span<const double> parameter,
                        std::span<const double> metric,
                        double floor_threshold) {
  if (parameter.size() != metric.size()) {
    throw std::invalid_argument("fit_log2_slope: length mismatch");
  }
  const int count = static_cast<int>(parameter.size());
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return parameter[a] > parameter[b];  // coarse first
  });

  // Drop up to the two points nearest the reference when they sit on the
  // solver-accuracy floor, but never go below three points.
  std::vector<int> kept = order;
  for (int drop = 0; drop < 2 && kept.size() > 3; ++drop) {
    const int candidate = kept.back();
    if (floor_threshold > 0.0 && metric[candidate] < floor_threshold) {
      kept.pop_back();
    } else {
      break;
    }
  }

  SlopeFit fit;
  fit.points_used = static_cast<int>(kept.size());
  if (kept.size() < 2) {
    fit.slope = std::numeric_limits<double>::quiet_NaN();
    fit.residual = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  double mean_x = 0.0, mean_y = 0.0;
  for (int i : kept) {
    mean_x += std::log2(parameter[i]);
    mean_y += std::log2(metric[i]);
  }
  mean_x /= kept.size();
  mean_y /= kept.size();
  double sxx = 0.0, sxy = 0.0;
  for (int i : kept) {
    const double dx = std::log2(parameter[i]) - mean_x;
    const double dy = std::log2(metric[i]) - mean_y;
    sxx += dx * dx;
    sxy += dx * dy;
  }
  fit.slope = sxy / sxx;
  double ss = 0.0;
  for (int i : kept) {
    const double predicted =
        mean_y + fit.slope * (std::log2(parameter[i]) - mean_x);
    const double r = std::log2(metric[i]) - predicted;
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / kept.size());
  return fit;
}

namespace {

// ---- reference-trajectory disk cache ------------------------------------

constexpr char kCacheMagic[8] = {'S', 'P', 'D', 'E', 'R', 'E', 'F', '1'};
constexpr std::uint32_t kCacheVersion = 1;
constexpr double kCacheMaxBytes = 64.0 * 1024 * 1024;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 1469598103934665603ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::uint64_t reference_key(const Mesh& mesh, SchemeId scheme,
                            std::uint64_t seed, double lambda, double dt,
                            double t_end, int paths, double checkpoint_dt,
                            int k_fine, int modes) {
  std::ostringstream key;
  key << std::hexfloat;
  key << mesh.dim << '|' << mesh.n << '|' << scheme_name(scheme) << '|'
      << seed << '|' << lambda << '|' << dt << '|' << t_end << '|' << paths
      << '|' << checkpoint_dt << '|' << k_fine << '|' << modes;
  return fnv1a(key.str());
}

std::string reference_path(const std::string& cache_dir, std::uint64_t key) {
  char name[32];
  std::snprintf(name, sizeof name, "ref_%016llx.bin",
                static_cast<unsigned long long>(key));
  return (std::filesystem::path(cache_dir) / name).string();
}

struct CacheHeader {
  char magic[8];
  std::uint32_t version;
  std::uint32_t reserved;
  std::uint64_t n_dofs;
  std::uint64_t snapshots;
  std::uint64_t paths;
  std::uint64_t key;
};

bool load_reference_cache(const std::string& file, std::uint64_t key,
                          int n_dofs, int snapshots, int paths,
                          std::vector<std::vector<NodalField>>& out) {
  std::FILE* fp = std::fopen(file.c_str(), "rb");
  if (!fp) return false;
  CacheHeader header{};
  bool ok = std::fread(&header, sizeof header, 1, fp) == 1 &&
            std::memcmp(header.magic, kCacheMagic, 8) == 0 &&
            header.version == kCacheVersion && header.key == key &&
            header.n_dofs == std::uint64_t(n_dofs) &&
            header.snapshots == std::uint64_t(snapshots) &&
            header.paths == std::uint64_t(paths);
  if (ok) {
    out.assign(paths, std::vector<NodalField>(snapshots, NodalField(n_dofs)));
    for (int p = 0; p < paths && ok; ++p) {
      for (int j = 0; j < snapshots && ok; ++j) {
        ok = std::fread(out[p][j].data(), sizeof(double), n_dofs, fp) ==
             std::size_t(n_dofs);
      }
    }
  }
  std::fclose(fp);
  if (!ok) out.clear();
  return ok;
}

void save_reference_cache(const std::string& file, std::uint64_t key,
                          const std::vector<std::vector<NodalField>>& refs) {
  std::filesystem::create_directories(
      std::filesystem::path(file).parent_path());
  std::FILE* fp = std::fopen(file.c_str(), "wb");
  if (!fp) return;  // caching is best-effort
  CacheHeader header{};
  std::memcpy(header.magic, kCacheMagic, 8);
  header.version = kCacheVersion;
  header.n_dofs = refs[0][0].size();
  header.snapshots = refs[0].size();
  header.paths = refs.size();
  header.key = key;
  std::fwrite(&header, sizeof header, 1, fp);
  for (const auto& path_snaps : refs) {
    for (const auto& snap : path_snaps) {
      std::fwrite(snap.data(), sizeof(double), snap.size(), fp);
    }
  }
  std::fclose(fp);
}

// ---- convergence study ----------------------------------------------------

struct PointSetup {
  int n = 0;
  double h = 0.0;
  double dt = 0.0;
  const Mesh* mesh = nullptr;
  const FemOperators* ops = nullptr;
  const NoiseModel* noise = nullptr;
  NodalField u0;
};

void validate_study(const StudyConfig& config) {
  if (config.schemes.empty()) {
    throw std::invalid_argument("convergence_study: no schemes given");
  }
  if (config.paths < 1 || config.t_end <= 0.0) {
    throw std::invalid_argument("convergence_study: bad paths or t_end");
  }
  if (config.axis == StudyAxis::Time) {
    if (config.dt_grid.empty() || config.n < 2 || config.ref_dt <= 0.0) {
      throw std::invalid_argument("convergence_study: incomplete time study");
    }
    for (double dt : config.dt_grid) {
      if (config.ref_dt >= dt) {
        throw std::invalid_argument(
            "convergence_study: reference dt must be finer than the grid");
      }
    }
  } else {
    if (config.n_grid.empty() || config.dt <= 0.0 || config.ref_n < 2) {
      throw std::invalid_argument("convergence_study: incomplete space study");
    }
    for (int n : config.n_grid) {
      if (n >= config.ref_n) {
        throw std::invalid_argument(
            "convergence_study: reference mesh must be finer than the grid");
      }
      if (config.ref_n % n != 0) {
        throw std::invalid_argument(
            "convergence_study: meshes must be nested in the reference");
      }
    }
  }
}

}  // namespace

std::vector<ErrorReport> convergence_study(const StudyConfig& config) {
  validate_study(config);
  const bool time_axis = config.axis == StudyAxis::Time;

  // Meshes first so every later pointer stays stable.
  std::vector<int> point_n;
  std::vector<double> point_dt;
  if (time_axis) {
    std::vector<double> grid = config.dt_grid;
    std::sort(grid.begin(), grid.end(), std::greater<>());
    for (double dt : grid) {
      point_n.push_back(config.n);
      point_dt.push_back(dt);
    }
  } else {
    std::vector<int> grid = config.n_grid;
    std::sort(grid.begin(), grid.end());
    for (int n : grid) {
      point_n.push_back(n);
      point_dt.push_back(config.dt);
    }
  }
  const int ref_n = time_axis ? config.n : config.ref_n;
  const double ref_dt = time_axis ? config.ref_dt : config.dt;
  const double checkpoint_dt = time_axis ? point_dt.front() : config.dt;
  const int points = static_cast<int>(point_n.size());

  std::vector<int> unique_n = point_n;
  unique_n.push_back(ref_n);
  std::sort(unique_n.begin(), unique_n.end());
  unique_n.erase(std::unique(unique_n.begin(), unique_n.end()),
                 unique_n.end());

  std::vector<Mesh> meshes;
  std::vector<FemOperators> ops;
  std::vector<NoiseModel> noises;
  std::vector<NodalField> u0s;
  meshes.reserve(unique_n.size());
  for (int n : unique_n) {
    meshes.push_back(build_unit_square_mesh(n));
  }
  for (const Mesh& mesh : meshes) {
    ops.push_back(assemble(mesh));
    u0s.push_back(builtin_u0_field(mesh));
  }
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    noises.push_back(builtin_model("sine2d", meshes[i], config.lambda));
  }
  auto mesh_index = [&](int n) {
    return std::distance(unique_n.begin(),
                         std::find(unique_n.begin(), unique_n.end(), n));
  };

  std::vector<PointSetup> setups(points);
  for (int i = 0; i < points; ++i) {
    const auto mi = mesh_index(point_n[i]);
    setups[i] = {point_n[i],          1.0 / point_n[i], point_dt[i],
                 &meshes[mi],         &ops[mi],         &noises[mi],
                 u0s[mi]};
  }
  const auto ref_mi = mesh_index(ref_n);
  const Mesh& ref_mesh = meshes[ref_mi];
  const FemOperators& ref_ops = ops[ref_mi];
  const NoiseModel& ref_noise = noises[ref_mi];
  const NodalField& ref_u0 = u0s[ref_mi];

  // Lattice resolution: twice the finest run so half-step noise exists.
  const long ref_steps = exact_ratio(config.t_end, ref_dt, "study: T/ref_dt");
  if (!is_pow2(ref_steps)) {
    throw std::invalid_argument("convergence_study: T/ref_dt not a power of 2");
  }
  const int k_fine = static_cast<int>(2 * ref_steps);
  const int snapshots =
      static_cast<int>(exact_ratio(config.t_end, checkpoint_dt,
                                   "study: T/checkpoint_dt")) + 1;

  const int paths = config.paths;
  std::vector<ErrorReport> reports;
  reports.reserve(config.schemes.size());

  for (SchemeId scheme : config.schemes) {
    StepKernel ref_kernel = make_step_kernel(scheme, ref_mesh, ref_ops,
                                             ref_noise, ref_dt, config.solver);
    std::vector<StepKernel> kernels;
    kernels.reserve(points);
    for (const PointSetup& setup : setups) {
      kernels.push_back(make_step_kernel(scheme, *setup.mesh, *setup.ops,
                                         *setup.noise, setup.dt,
                                         config.solver));
    }

    // Reference ensemble, cached on disk when it is small enough.
    const double ref_bytes =
        double(paths) * snapshots * ref_mesh.num_dofs * sizeof(double);
    const bool cacheable =
        !config.cache_dir.empty() && ref_bytes <= kCacheMaxBytes;
    std::vector<std::vector<NodalField>> refs;
    bool have_refs = false;
    std::uint64_t key = 0;
    std::string cache_file;
    if (cacheable) {
      key = reference_key(ref_mesh, scheme, config.seed, config.lambda,
                          ref_dt, config.t_end, paths, checkpoint_dt, k_fine,
                          ref_noise.num_modes());
      cache_file = reference_path(config.cache_dir, key);
      have_refs = load_reference_cache(cache_file, key, ref_mesh.num_dofs,
                                       snapshots, paths, refs);
    }
    if (cacheable && !have_refs) {
      refs.assign(paths, {});
      parallel_for(paths, config.threads, [&](int p) {
        const BrownianLattice lattice = make_brownian_lattice(
            config.seed, p, ref_noise.num_modes(), k_fine, config.t_end);
        refs[p] = run_path_with(ref_kernel, lattice, config.t_end, ref_u0,
                                checkpoint_dt)
                      .snapshots;
      });
      save_reference_cache(cache_file, key, refs);
      have_refs = true;
    }

    // Per-path partial sums, reduced in ascending path order afterwards so
    // the result is independent of scheduling.
    struct Partial {
      std::vector<Eigen::ArrayXd> l2, h1;  // per point, per checkpoint
      std::vector<double> runtime;
    };
    std::vector<Partial> partials(paths);

    parallel_for(paths, config.threads, [&](int p) {
      const BrownianLattice lattice = make_brownian_lattice(
          config.seed, p, ref_noise.num_modes(), k_fine, config.t_end);
      Trajectory ref_traj;
      if (have_refs) {
        ref_traj.checkpoint_dt = checkpoint_dt;
        ref_traj.snapshots = refs[p];
        ref_traj.times.resize(snapshots);
        for (int j = 0; j < snapshots; ++j) {
          ref_traj.times[j] = j * checkpoint_dt;
        }
      } else {
        ref_traj = run_path_with(ref_kernel, lattice, config.t_end, ref_u0,
                                 checkpoint_dt);
      }
      Partial& partial = partials[p];
      partial.l2.resize(points);
      partial.h1.resize(points);
      partial.runtime.resize(points);
      for (int i = 0; i < points; ++i) {
        const double t0 = wall_seconds();
        const Trajectory traj =
            run_path_with(kernels[i], lattice, config.t_end,
                          setups[i].u0, checkpoint_dt);
        const PairGaps gaps = pair_gaps(traj, ref_traj, *setups[i].mesh,
                                        ref_mesh, ref_ops);
        partial.l2[i] = gaps.l2_sq;
        partial.h1[i] = gaps.h1_sq;
        partial.runtime[i] = wall_seconds() - t0;
      }
    });

    ErrorReport report;
    report.scheme = scheme;
    report.axis = config.axis;
    report.paths = paths;
    std::vector<double> metrics(points), parameters(points);
    for (int i = 0; i < points; ++i) {
      Eigen::ArrayXd sum_l2 = Eigen::ArrayXd::Zero(snapshots);
      Eigen::ArrayXd sum_h1 = Eigen::ArrayXd::Zero(snapshots);
      double runtime = 0.0;
      for (int p = 0; p < paths; ++p) {
        sum_l2 += partials[p].l2[i];
        sum_h1 += partials[p].h1[i];
        runtime += partials[p].runtime[i];
      }
      const MetricBreakdown breakdown =
          metric_from_sums(sum_l2, sum_h1, paths, checkpoint_dt);
      metrics[i] = breakdown.total;
      parameters[i] = time_axis ? setups[i].dt : setups[i].h;

      StudyPointResult point;
      point.scheme = scheme;
      point.h = setups[i].h;
      point.dt = setups[i].dt;
      point.paths = paths;
      point.metric = breakdown.total;
      point.runtime_s = config.timings ? runtime : 0.0;
      const std::span<const double> par_so_far(parameters.data(), i + 1);
      const std::span<const double> met_so_far(metrics.data(), i + 1);
      point.slope_running =
          i >= 1 ? fit_log2_slope(par_so_far, met_so_far).slope
                 : std::numeric_limits<double>::quiet_NaN();
      report.points.push_back(point);
    }
    const SlopeFit fit =
        points >= 3 ? fit_log2_slope(parameters, metrics,
                                     10.0 * config.solver.tol)
                    : SlopeFit{std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN(), 0};
    report.slope = fit.slope;
    report.fit_residual = fit.residual;
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<CensusRow> nonneg_census(const CensusConfig& config) {
  if (config.schemes.empty() || config.lambdas.empty() ||
      config.dt_grid.empty() || config.n < 2 || config.paths < 1 ||
      config.t_end <= 0.0) {
    throw std::invalid_argument("nonneg_census: incomplete configuration");
  }
  const Mesh mesh = build_unit_square_mesh(config.n);
  const FemOperators ops = assemble(mesh);
  const NodalField u0 = builtin_u0_field(mesh);

  std::vector<double> dt_grid = config.dt_grid;
  std::sort(dt_grid.begin(), dt_grid.end(), std::greater<>());
  const double dt_min = dt_grid.back();
  const long finest_steps = exact_ratio(config.t_end, dt_min, "census: T/dt");
  if (!is_pow2(finest_steps)) {
    throw std::invalid_argument("nonneg_census: T/dt not a power of two");
  }
  const int k_fine = static_cast<int>(2 * finest_steps);

  std::vector<CensusRow> rows;
  for (double lambda : config.lambdas) {
    const NoiseModel noise = builtin_model("sine2d", mesh, lambda);
    std::vector<StepKernel> kernels;
    std::vector<std::pair<SchemeId, double>> cases;
    for (SchemeId scheme : config.schemes) {
      for (double dt : dt_grid) {
        kernels.push_back(make_step_kernel(scheme, mesh, ops, noise, dt,
                                           config.solver));
        cases.emplace_back(scheme, dt);
      }
    }
    const int case_count = static_cast<int>(cases.size());
    std::vector<std::vector<std::uint8_t>> stayed(
        config.paths, std::vector<std::uint8_t>(case_count, 0));
    parallel_for(config.paths, config.threads, [&](int p) {
      const BrownianLattice lattice = make_brownian_lattice(
          config.seed, p, noise.num_modes(), k_fine, config.t_end);
      for (int c = 0; c < case_count; ++c) {
        const Trajectory traj = run_path_with(kernels[c], lattice,
                                              config.t_end, u0,
                                              config.t_end);
        stayed[p][c] = traj.nonneg ? 1 : 0;
      }
    });
    for (int c = 0; c < case_count; ++c) {
      CensusRow row;
      row.scheme = cases[c].first;
      row.lambda = lambda;
      row.n = config.n;
      row.dt = cases[c].second;
      row.paths = config.paths;
      row.k_nonneg = 0;
      for (int p = 0; p < config.paths; ++p) row.k_nonneg += stayed[p][c];
      rows.push_back(row);
    }
  }
  return rows;
}

EnergyReport energy_check(const EnergyConfig& config) {
  if (config.dt <= 0.0 || config.t_end <= 0.0 || config.paths < 2) {
    throw std::invalid_argument("energy_check: incomplete configuration");
  }
  const Mesh mesh = build_unit_square_mesh(config.n);
  const FemOperators ops = assemble(mesh);
  const NodalField u0 = builtin_u0_field(mesh);

  const long steps = exact_ratio(config.t_end, config.dt, "energy: T/dt");
  if (!is_pow2(steps)) {
    throw std::invalid_argument("energy_check: T/dt not a power of two");
  }
  const int k_fine = static_cast<int>(2 * steps);

  const NoiseModel noise = builtin_model("sine2d", mesh, config.lambda);
  const StepKernel kernel = make_step_kernel(config.scheme, mesh, ops, noise,
                                             config.dt, config.solver);

  // Requested times snapped to the step grid; the bound is evaluated at the
  // snapped times, where the estimate is exact.
  std::vector<long> snap_index;
  for (double t : config.times) {
    long idx = std::lround(t / config.dt);
    idx = std::clamp(idx, 0l, steps);
    snap_index.push_back(idx);
  }

  const int time_count = static_cast<int>(snap_index.size());
  std::vector<std::vector<double>> norms_sq(
      config.paths, std::vector<double>(time_count, 0.0));
  parallel_for(config.paths, config.threads, [&](int p) {
    const BrownianLattice lattice = make_brownian_lattice(
        config.seed, p, noise.num_modes(), k_fine, config.t_end);
    const Trajectory traj =
        run_path_with(kernel, lattice, config.t_end, u0, config.dt);
    for (int i = 0; i < time_count; ++i) {
      const double norm = norm_h(traj.snapshots[snap_index[i]], ops);
      norms_sq[p][i] = norm * norm;
    }
  });

  const double c_f = diffusion_lipschitz(noise.diffusion);
  const double growth = c_f * c_f * noise.c_e * noise.c_e * noise.num_modes();
  const double initial = norm_h(u0, ops);
  const double initial_sq = initial * initial;

  EnergyReport report;
  report.ok = true;
  for (int i = 0; i < time_count; ++i) {
    EnergyRow row;
    row.t = snap_index[i] * config.dt;
    double mean = 0.0;
    for (int p = 0; p < config.paths; ++p) mean += norms_sq[p][i];
    mean /= config.paths;
    double var = 0.0;
    for (int p = 0; p < config.paths; ++p) {
      const double d = norms_sq[p][i] - mean;
      var += d * d;
    }
    var /= (config.paths - 1);
    row.mean_sq = mean;
    row.stderr_sq = std::sqrt(var / config.paths);
    row.bound = std::exp(growth * row.t) * initial_sq;
    row.ok = mean <= row.bound + 3.0 * row.stderr_sq;
    report.ok = report.ok && row.ok;
    report.rows.push_back(row);
  }

  // lambda = 0: the implicit step contracts the lumped norm pathwise.
  {
    const NoiseModel noise0 = builtin_model("sine2d", mesh, 0.0);
    const StepKernel kernel0 = make_step_kernel(
        config.scheme, mesh, ops, noise0, config.dt, config.solver);
    const BrownianLattice lattice = make_brownian_lattice(
        config.seed, 0, noise0.num_modes(), k_fine, config.t_end);
    const Trajectory traj =
        run_path_with(kernel0, lattice, config.t_end, u0, config.dt);
    report.decay_monotone = true;
    double previous = norm_h(traj.snapshots[0], ops);
    for (std::size_t j = 1; j < traj.snapshots.size(); ++j) {
      const double current = norm_h(traj.snapshots[j], ops);
      if (current > previous) {
        report.decay_monotone = false;
        break;
      }
      previous = current;
    }
    report.ok = report.ok && report.decay_monotone;
  }
  return report;
}

}  // namespace spde
