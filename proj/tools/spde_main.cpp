// Command-line driver: convergence studies, the nonnegativity census,
// single-path runs, and a self-validation suite. Outputs are CSV files plus
// a JSON manifest; with a fixed seed the CSVs are byte-identical across
// runs and worker counts.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spde/experiments.hpp"
#include "spde/rng.hpp"

using nlohmann::json;
using namespace spde;

namespace {

constexpr const char* kVersion = "spde 1.0.0";

// ---- grid syntax ----------------------------------------------------------
//
// Lists are comma separated; each token is either "2^-k", a plain number, or
// an inclusive dyadic range "2^-a..2^-b".

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const std::size_t comma = text.find(',', begin);
    if (comma == std::string::npos) {
      out.push_back(text.substr(begin));
      break;
    }
    out.push_back(text.substr(begin, comma - begin));
    begin = comma + 1;
  }
  return out;
}

std::optional<int> parse_pow2_exponent(const std::string& token) {
  if (token.rfind("2^", 0) != 0) return std::nullopt;
  try {
    std::size_t used = 0;
    const int exponent = std::stoi(token.substr(2), &used);
    if (used != token.size() - 2) return std::nullopt;
    return exponent;
  } catch (...) {
    return std::nullopt;
  }
}

std::vector<double> parse_dyadic_grid(const std::string& text,
                                      const char* what) {
  std::vector<double> values;
  for (const std::string& token : split_commas(text)) {
    const std::size_t dots = token.find("..");
    if (dots != std::string::npos) {
      const auto first = parse_pow2_exponent(token.substr(0, dots));
      const auto last = parse_pow2_exponent(token.substr(dots + 2));
      if (!first || !last) {
        throw std::invalid_argument(std::string(what) +
                                    ": bad dyadic range '" + token + "'");
      }
      const int step = *last >= *first ? 1 : -1;
      for (int e = *first;; e += step) {
        values.push_back(std::ldexp(1.0, e));
        if (e == *last) break;
      }
      continue;
    }
    if (const auto exponent = parse_pow2_exponent(token)) {
      values.push_back(std::ldexp(1.0, *exponent));
      continue;
    }
    try {
      std::size_t used = 0;
      const double value = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      values.push_back(value);
    } catch (...) {
      throw std::invalid_argument(std::string(what) + ": bad value '" +
                                  token + "'");
    }
  }
  if (values.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty grid");
  }
  return values;
}

// Mesh sizes: either subdivision counts n or dyadic sizes h = 2^-k.
std::vector<int> parse_mesh_grid(const std::string& text, const char* what) {
  std::vector<int> out;
  for (double value : parse_dyadic_grid(text, what)) {
    double n = value > 1.0 ? value : 1.0 / value;
    const long rounded = std::lround(n);
    if (std::abs(n - double(rounded)) > 1e-9 || rounded < 2 ||
        (rounded & (rounded - 1)) != 0) {
      throw std::invalid_argument(std::string(what) +
                                  ": mesh sizes must be powers of two >= 2");
    }
    out.push_back(static_cast<int>(rounded));
  }
  return out;
}

std::vector<SchemeId> parse_schemes(const std::string& text) {
  std::vector<SchemeId> out;
  for (const std::string& token : split_commas(text)) {
    const auto id = parse_scheme(token);
    if (!id) {
      throw std::invalid_argument("unknown scheme '" + token + "'");
    }
    out.push_back(*id);
  }
  return out;
}

SolverMode parse_solver_mode(const std::string& text) {
  if (text == "auto") return SolverMode::Auto;
  if (text == "cg") return SolverMode::Cg;
  if (text == "spectral") return SolverMode::Spectral;
  throw std::invalid_argument("solver mode must be auto, cg or spectral");
}

void require_dyadic_fraction(double t_end, double dt, const char* what) {
  const double ratio = t_end / dt;
  const long steps = std::lround(ratio);
  if (std::abs(ratio - double(steps)) > 1e-9 || steps < 1 ||
      (steps & (steps - 1)) != 0) {
    throw std::invalid_argument(std::string(what) +
                                ": dt must be a dyadic fraction of T");
  }
}

// ---- output files ----------------------------------------------------------

struct Options {
  std::string experiment;
  std::string schemes = "split2";
  std::string h_text;
  std::string dt_text;
  std::string ref_dt_text;
  std::string ref_h_text;
  int paths = 100;
  std::string lambda_text = "3";
  double t_end = 0.5;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string solver_mode = "auto";
  double solver_tol = 1e-10;
  int solver_max_iter = 0;
  std::string noise_model = "sine2d";
  int noise_modes = 1;
  double theta = 1.0;
  bool timings = false;
  bool dump_mesh = false;
  std::uint64_t path_id = 0;
};

std::FILE* open_out(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "w");
  if (!fp) {
    throw std::runtime_error("cannot open output file " + path.string());
  }
  return fp;
}

void write_error_csv(const std::filesystem::path& path, StudyAxis axis,
                     const std::vector<ErrorReport>& reports) {
  std::FILE* fp = open_out(path);
  std::fprintf(fp, "scheme,axis,h,dt,paths,metric,slope_running,runtime_s\n");
  for (const ErrorReport& report : reports) {
    for (const StudyPointResult& point : report.points) {
      std::fprintf(fp, "%s,%s,%.17g,%.17g,%d,%.17g,%.17g,%.6g\n",
                   scheme_name(point.scheme),
                   axis == StudyAxis::Time ? "time" : "space", point.h,
                   point.dt, point.paths, point.metric, point.slope_running,
                   point.runtime_s);
    }
  }
  std::fclose(fp);
}

void write_census_csv(const std::filesystem::path& path,
                      const std::vector<CensusRow>& rows) {
  std::FILE* fp = open_out(path);
  std::fprintf(fp, "scheme,lambda,h,dt,paths,k_nonneg\n");
  for (const CensusRow& row : rows) {
    std::fprintf(fp, "%s,%.17g,%.17g,%.17g,%d,%d\n", scheme_name(row.scheme),
                 row.lambda, 1.0 / row.n, row.dt, row.paths, row.k_nonneg);
  }
  std::fclose(fp);
}

void write_manifest(const std::filesystem::path& out_dir, const Options& opt,
                    const json& extra) {
  json manifest;
  manifest["version"] = kVersion;
  manifest["experiment"] = opt.experiment;
  manifest["schemes"] = opt.schemes;
  manifest["h"] = opt.h_text;
  manifest["dt"] = opt.dt_text;
  manifest["ref_dt"] = opt.ref_dt_text;
  manifest["ref_h"] = opt.ref_h_text;
  manifest["paths"] = opt.paths;
  manifest["lambda"] = opt.lambda_text;
  manifest["T"] = opt.t_end;
  manifest["seed"] = opt.seed;
  manifest["solver"] = {{"mode", opt.solver_mode},
                        {"tol", opt.solver_tol},
                        {"max_iter", opt.solver_max_iter}};
  manifest["noise"] = {{"model", opt.noise_model}, {"modes", opt.noise_modes}};
  manifest["threads"] = resolve_thread_count(0);
  manifest["timings"] = opt.timings;
  for (auto& [key, value] : extra.items()) manifest[key] = value;
  std::FILE* fp = open_out(out_dir / "manifest.json");
  const std::string text = manifest.dump(2);
  std::fwrite(text.data(), 1, text.size(), fp);
  std::fputc('\n', fp);
  std::fclose(fp);
}

SolverOptions solver_options(const Options& opt) {
  SolverOptions solver;
  solver.mode = parse_solver_mode(opt.solver_mode);
  solver.tol = opt.solver_tol;
  solver.max_iter = opt.solver_max_iter;
  return solver;
}

// ---- experiments ------------------------------------------------------------

int run_converge(const Options& opt, StudyAxis axis) {
  StudyConfig config;
  config.axis = axis;
  config.schemes = parse_schemes(opt.schemes);
  config.t_end = opt.t_end;
  const auto lambdas = parse_dyadic_grid(opt.lambda_text, "--lambda");
  if (lambdas.size() != 1) {
    throw std::invalid_argument("convergence studies take a single --lambda");
  }
  config.lambda = lambdas[0];
  config.paths = opt.paths;
  config.seed = opt.seed;
  config.solver = solver_options(opt);
  config.timings = opt.timings;
  config.cache_dir =
      (std::filesystem::path(opt.out_dir) / "cache").string();

  if (axis == StudyAxis::Time) {
    const auto mesh_grid = parse_mesh_grid(opt.h_text, "--h");
    if (mesh_grid.size() != 1) {
      throw std::invalid_argument("converge-time takes a single --h");
    }
    config.n = mesh_grid[0];
    config.dt_grid = parse_dyadic_grid(opt.dt_text, "--dt");
    const auto ref = parse_dyadic_grid(opt.ref_dt_text, "--ref-dt");
    if (ref.size() != 1) {
      throw std::invalid_argument("converge-time takes a single --ref-dt");
    }
    config.ref_dt = ref[0];
    require_dyadic_fraction(opt.t_end, config.ref_dt, "--ref-dt");
    for (double dt : config.dt_grid) {
      require_dyadic_fraction(opt.t_end, dt, "--dt");
    }
  } else {
    config.n_grid = parse_mesh_grid(opt.h_text, "--h");
    const auto ref = parse_mesh_grid(opt.ref_h_text, "--ref-h");
    if (ref.size() != 1) {
      throw std::invalid_argument("converge-space takes a single --ref-h");
    }
    config.ref_n = ref[0];
    const auto dts = parse_dyadic_grid(opt.dt_text, "--dt");
    if (dts.size() != 1) {
      throw std::invalid_argument("converge-space takes a single --dt");
    }
    config.dt = dts[0];
    require_dyadic_fraction(opt.t_end, config.dt, "--dt");
  }

  const auto reports = convergence_study(config);

  const std::filesystem::path out_dir(opt.out_dir);
  std::filesystem::create_directories(out_dir);
  write_error_csv(out_dir / "errors.csv", axis, reports);
  json extra;
  for (const ErrorReport& report : reports) {
    extra["slopes"][scheme_name(report.scheme)] = report.slope;
  }
  write_manifest(out_dir, opt, extra);

  std::printf("# metric slopes (log2-log2 fit)\n");
  std::printf("%-10s %-6s %10s %10s %6s\n", "scheme", "axis", "slope",
              "residual", "paths");
  for (const ErrorReport& report : reports) {
    std::printf("%-10s %-6s %10.4f %10.4f %6d\n", scheme_name(report.scheme),
                axis == StudyAxis::Time ? "time" : "space", report.slope,
                report.fit_residual, report.paths);
  }
  std::printf("wrote %s\n", (out_dir / "errors.csv").c_str());
  return 0;
}

int run_census(const Options& opt) {
  CensusConfig config;
  config.schemes = parse_schemes(opt.schemes);
  config.lambdas = parse_dyadic_grid(opt.lambda_text, "--lambda");
  const auto mesh_grid = parse_mesh_grid(opt.h_text, "--h");
  if (mesh_grid.size() != 1) {
    throw std::invalid_argument("nonneg-census takes a single --h");
  }
  config.n = mesh_grid[0];
  config.dt_grid = parse_dyadic_grid(opt.dt_text, "--dt");
  for (double dt : config.dt_grid) {
    require_dyadic_fraction(opt.t_end, dt, "--dt");
  }
  config.t_end = opt.t_end;
  config.paths = opt.paths;
  config.seed = opt.seed;
  config.solver = solver_options(opt);

  const auto rows = nonneg_census(config);

  const std::filesystem::path out_dir(opt.out_dir);
  std::filesystem::create_directories(out_dir);
  write_census_csv(out_dir / "census.csv", rows);
  write_manifest(out_dir, opt, {});

  std::printf("%-10s %8s %10s %12s %8s\n", "scheme", "lambda", "dt",
              "k_nonneg", "paths");
  for (const CensusRow& row : rows) {
    std::printf("%-10s %8g %10g %12d %8d\n", scheme_name(row.scheme),
                row.lambda, row.dt, row.k_nonneg, row.paths);
  }
  std::printf("wrote %s\n", (out_dir / "census.csv").c_str());
  return 0;
}

int run_single_path(const Options& opt) {
  const auto schemes = parse_schemes(opt.schemes);
  if (schemes.size() != 1) {
    throw std::invalid_argument("single-path takes a single --scheme");
  }
  const auto mesh_grid = parse_mesh_grid(opt.h_text, "--h");
  const auto dts = parse_dyadic_grid(opt.dt_text, "--dt");
  if (mesh_grid.size() != 1 || dts.size() != 1) {
    throw std::invalid_argument("single-path takes a single --h and --dt");
  }
  const auto lambdas = parse_dyadic_grid(opt.lambda_text, "--lambda");
  if (lambdas.size() != 1) {
    throw std::invalid_argument("single-path takes a single --lambda");
  }
  require_dyadic_fraction(opt.t_end, dts[0], "--dt");

  const Mesh mesh = build_unit_square_mesh(mesh_grid[0]);
  const FemOperators ops = assemble(mesh);
  const NoiseModel noise = builtin_model(opt.noise_model, mesh, lambdas[0]);
  const long steps = std::lround(opt.t_end / dts[0]);
  const BrownianLattice lattice = make_brownian_lattice(
      opt.seed, opt.path_id, noise.num_modes(), static_cast<int>(2 * steps),
      opt.t_end);
  const Trajectory traj = run_path(
      schemes[0], mesh, ops, noise, lattice, dts[0], opt.t_end,
      [](double x, double y) { return std::sin(M_PI * x) * std::sin(M_PI * y); },
      dts[0], solver_options(opt));

  const std::filesystem::path out_dir(opt.out_dir);
  std::filesystem::create_directories(out_dir);
  std::FILE* fp = open_out(out_dir / "path_summary.csv");
  std::fprintf(fp, "time,min,max,norm_h,norm_l2\n");
  for (std::size_t j = 0; j < traj.snapshots.size(); ++j) {
    std::fprintf(fp, "%.17g,%.17g,%.17g,%.17g,%.17g\n", traj.times[j],
                 traj.snapshots[j].minCoeff(), traj.snapshots[j].maxCoeff(),
                 norm_h(traj.snapshots[j], ops),
                 norm_l2(traj.snapshots[j], ops));
  }
  std::fclose(fp);
  if (opt.dump_mesh) {
    write_mesh_csv(mesh, (out_dir / "mesh_vertices.csv").string(),
                   (out_dir / "mesh_elements.csv").string());
  }
  json extra;
  extra["watermark"] = traj.watermark;
  extra["nonneg"] = traj.nonneg;
  extra["path_id"] = opt.path_id;
  write_manifest(out_dir, opt, extra);
  std::printf("path %llu: watermark %.3e, %s\n",
              static_cast<unsigned long long>(opt.path_id), traj.watermark,
              traj.nonneg ? "nonnegative" : "went negative");
  std::printf("wrote %s\n", (out_dir / "path_summary.csv").c_str());
  return 0;
}

int run_validate(const Options& opt) {
  int failures = 0;
  auto report = [&](bool ok, const std::string& name) {
    std::printf("%s  %s\n", ok ? "ok  " : "FAIL", name.c_str());
    if (!ok) ++failures;
  };

  // weak acuteness of every generated mesh family
  {
    bool ok = true;
    for (int n : {2, 4, 16, 64}) {
      ok = ok && check_weak_acuteness(build_unit_square_mesh(n)).ok;
    }
    ok = ok && check_weak_acuteness(build_interval_mesh(16)).ok;
    report(ok, "weak acuteness of generated meshes");
  }

  // lumped mass values and the 5-point stencil
  {
    const Mesh mesh = build_unit_square_mesh(8);
    const FemOperators ops = assemble(mesh);
    const double h2 = mesh.h * mesh.h;
    bool ok = std::abs(ops.lumped_mass.minCoeff() - h2) < 1e-15 &&
              std::abs(ops.lumped_mass.maxCoeff() - h2) < 1e-15;
    NodalField e = NodalField::Zero(mesh.num_dofs);
    const int center = 3 * 7 + 3;
    e[center] = 1.0;
    const NodalField row = ops.stiffness * e;
    ok = ok && std::abs(row[center] - 4.0) < 1e-14;
    ok = ok && std::abs(row[center - 1] + 1.0) < 1e-14;
    ok = ok && std::abs(row[center + 7] + 1.0) < 1e-14;
    report(ok, "lumped mass h^2 and 5-point stencil");
  }

  // M-matrix inverse positivity against dense inversion at n=4
  {
    const Mesh mesh = build_unit_square_mesh(4);
    const FemOperators ops = assemble(mesh);
    Eigen::MatrixXd system = Eigen::MatrixXd(ops.stiffness) * 0.7;
    system += Eigen::MatrixXd(ops.lumped_mass.asDiagonal());
    report(system.inverse().minCoeff() >= -1e-14,
           "implicit system is inverse-positive (dense check, n=4)");
  }

  // spectral path against conjugate gradients
  {
    bool ok = true;
    for (int n : {8, 16, 32}) {
      const Mesh mesh = build_unit_square_mesh(n);
      const FemOperators ops = assemble(mesh);
      const ImplicitSolver spectral =
          make_implicit_solver(mesh, ops, 0.25, SolverMode::Spectral);
      const ImplicitSolver cg =
          make_implicit_solver(mesh, ops, 0.25, SolverMode::Cg);
      rng::CounterStream stream(1234, n);
      for (int trial = 0; trial < 3; ++trial) {
        NodalField b(mesh.num_dofs);
        for (int i = 0; i < b.size(); ++i) b[i] = stream.next_gaussian();
        const NodalField us = solve(spectral, b);
        const NodalField uc = solve(cg, b);
        ok = ok && (us - uc).norm() <= 1e-9 * us.norm();
      }
    }
    report(ok, "spectral and cg solvers agree to 1e-9");
  }

  // Brownian lattice dyadic consistency, bitwise
  {
    const BrownianLattice lattice = make_brownian_lattice(7, 1, 1, 64, 1.0);
    bool ok = true;
    for (int factor : {2, 4, 8, 16, 32, 64}) {
      const StepIncrements coarse = increments_at(lattice, factor);
      const StepIncrements fine = increments_at(lattice, factor / 2);
      for (int j = 0; j < coarse.steps; ++j) {
        ok = ok && coarse.db(j, 0) == fine.db(2 * j, 0) + fine.db(2 * j + 1, 0);
      }
    }
    report(ok, "Brownian lattice coarsens bitwise");
  }

  // norm comparison and interpolation properties
  {
    bool ok = true;
    for (int n : {8, 16}) {
      const Mesh mesh = build_unit_square_mesh(n);
      const FemOperators ops = assemble(mesh);
      rng::CounterStream stream(555, n);
      for (int trial = 0; trial < 2000; ++trial) {
        NodalField v(mesh.num_dofs);
        for (int i = 0; i < v.size(); ++i) v[i] = stream.next_gaussian();
        ok = ok && norm_l2(v, ops) <= norm_h(v, ops) * (1.0 + 1e-12);
      }
      auto g = [](double x, double y) {
        return std::sin(M_PI * x) * std::sin(M_PI * y);
      };
      const NodalField gap =
          interpolate(mesh, g) - quasi_interpolate(mesh, g);
      ok = ok && norm_h(gap, ops) <= mesh.h * M_PI + 1e-8;
    }
    report(ok, "norm inequality and quasi-interpolation bound");
  }

  // energy behaviour (noiseless decay plus the noisy moment bound)
  {
    EnergyConfig config;
    config.n = 8;
    config.lambda = 3.0;
    config.dt = 0.5 / 64.0;
    config.t_end = 0.5;
    config.times = {0.1, 0.25, 0.5};
    config.paths = 200;
    config.seed = opt.seed;
    config.solver = solver_options(opt);
    const EnergyReport energy = energy_check(config);
    report(energy.decay_monotone, "noiseless lumped norm decays pathwise");
    report(energy.ok, "lumped energy sits under the exponential bound");
  }

  const std::filesystem::path out_dir(opt.out_dir);
  std::filesystem::create_directories(out_dir);
  json extra;
  extra["checks_failed"] = failures;
  write_manifest(out_dir, opt, extra);

  std::printf(failures == 0 ? "all checks passed\n" : "%d check(s) failed\n",
              failures);
  if (failures != 0) {
    throw std::runtime_error("validation failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mass-lumped FEM engine for the stochastic heat equation"};
  app.set_help_flag("--help", "print usage");
  app.set_config("--config");

  Options opt;
  app.add_option("--experiment", opt.experiment,
                 "converge-time | converge-space | nonneg-census | "
                 "single-path | validate")
      ->required();
  app.add_option("--scheme,--scheme.id", opt.schemes,
                 "comma list: ema,emi,emi_clip,split2,strang_a,strang_b,sexp");
  app.add_option("--h", opt.h_text,
                 "mesh subdivisions per side (n, 2^-k or a 2^-a..2^-b range)");
  app.add_option("--dt,--time.dt", opt.dt_text,
                 "time step grid (2^-k values or 2^-a..2^-b)");
  app.add_option("--ref-dt", opt.ref_dt_text, "reference time step");
  app.add_option("--ref-h", opt.ref_h_text, "reference mesh size");
  app.add_option("--paths", opt.paths, "Monte Carlo paths");
  app.add_option("--lambda,--noise.lambda", opt.lambda_text,
                 "noise intensity (comma list for the census)");
  app.add_option("--T,--time.T", opt.t_end, "end time");
  app.add_option("--seed,--rng.master_seed", opt.seed, "master seed");
  app.add_option("--out", opt.out_dir, "output directory");
  app.add_option("--solver,--solver.mode", opt.solver_mode,
                 "auto | cg | spectral");
  app.add_option("--solver.tol", opt.solver_tol, "solver relative residual");
  app.add_option("--solver.max_iter", opt.solver_max_iter,
                 "solver iteration cap (0 = default)");
  app.add_option("--noise.model", opt.noise_model, "noise model name");
  app.add_option("--noise.modes", opt.noise_modes, "number of noise modes");
  app.add_option("--scheme.theta", opt.theta,
                 "implicitness weight (reserved, must stay 1)");
  app.add_flag("--timings", opt.timings,
               "record wall times in the CSV (off keeps outputs reproducible)");
  app.add_flag("--dump-mesh", opt.dump_mesh,
               "single-path: also dump mesh vertices/elements as CSV");
  app.add_option("--path-id", opt.path_id, "single-path: Brownian path id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& error) {
    std::fprintf(stderr, "%s\n", error.what());
    return 2;
  }

  try {
    if (opt.theta != 1.0) {
      throw std::invalid_argument("scheme.theta is reserved and fixed to 1");
    }
    if (opt.noise_modes != 1) {
      throw std::invalid_argument("built-in noise models provide one mode");
    }
    if (opt.paths < 1) {
      throw std::invalid_argument("--paths must be at least 1");
    }
    if (opt.experiment == "converge-time") {
      return run_converge(opt, StudyAxis::Time);
    }
    if (opt.experiment == "converge-space") {
      return run_converge(opt, StudyAxis::Space);
    }
    if (opt.experiment == "nonneg-census") {
      return run_census(opt);
    }
    if (opt.experiment == "single-path") {
      return run_single_path(opt);
    }
    if (opt.experiment == "validate") {
      return run_validate(opt);
    }
    throw std::invalid_argument("unknown experiment '" + opt.experiment + "'");
  } catch (const std::invalid_argument& error) {
    std::fprintf(stderr, "configuration error: %s\n", error.what());
    return 2;
  } catch (const std::exception& error) {
    std::fprintf(stderr, "numerical error: %s\n", error.what());
    return 3;
  }
}
