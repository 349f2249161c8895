#include "fpfgain/bench/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "fpfgain/oracle.hpp"
#include "fpfgain/rng.hpp"

namespace fpfgain::bench {

using nlohmann::json;

namespace {

// Runs body(0..n-1) on up to `threads` workers. The first exception is rethrown
// after all workers stop.
template <class F> void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!err) err = std::current_exception();
        next = n;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// The m-th ensemble of dimension d. Independent of eps, so every eps in a
// sweep sees the same particles.
std::uint64_t ensemble_seed(std::uint64_t master, std::size_t d, std::size_t m) {
  return stream_seed(stream_seed(master, d), m);
}

bool wants_kernel(const std::vector<GainMethod>& methods) {
  return std::any_of(methods.begin(), methods.end(), [](GainMethod m) { return m != GainMethod::Constant; });
}

PointMatrix replicate_row(const Vector& k, Eigen::Index rows) { return k.transpose().replicate(rows, 1); }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::size_t method_rank(GainMethod m) { return static_cast<std::size_t>(m); }

} // namespace

double rms_error(const PointMatrix& estimate, const PointMatrix& exact) {
  if (estimate.rows() != exact.rows() || estimate.cols() != exact.cols())
    throw ConfigError("rms_error: shape mismatch");
  if (estimate.rows() == 0) throw ConfigError("rms_error: empty input");
  return std::sqrt((estimate - exact).rowwise().squaredNorm().mean());
}

std::vector<CellSummary> summarize(const std::vector<ErrorRecord>& records) {
  // Ordered by (d, eps, method) regardless of the input order.
  std::map<std::tuple<std::size_t, double, std::size_t>, std::vector<const ErrorRecord*>> groups;
  for (const auto& r : records) groups[{r.d, r.epsilon, method_rank(r.method)}].push_back(&r);
  std::vector<CellSummary> out;
  for (const auto& [key, rs] : groups) {
    CellSummary c;
    c.d = std::get<0>(key);
    c.epsilon = std::get<1>(key);
    c.method = rs.front()->method;
    c.N = rs.front()->N;
    c.M = rs.size();
    std::vector<double> errs;
    for (const auto* r : rs) {
      errs.push_back(r->error);
      if (!r->converged) ++c.nonconverged;
    }
    c.mean_error = mean_of(errs);
    c.std_error = stderr_of(errs);
    out.push_back(c);
  }
  return out;
}

ExponentFit fit_exponent(const std::vector<CellSummary>& cells, std::size_t d, GainMethod method,
                         const FitConfig& fit) {
  std::vector<const CellSummary*> sel;
  for (const auto& c : cells)
    if (c.d == d && c.method == method && c.mean_error > 0.0 && std::isfinite(c.mean_error) &&
        (fit.include_nonconverged || c.nonconverged == 0))
      sel.push_back(&c);
  std::sort(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->epsilon < b->epsilon; });
  if (fit.min_epsilon)
    std::erase_if(sel, [&](auto* c) { return c->epsilon < *fit.min_epsilon; });
  if (fit.max_epsilon) {
    std::erase_if(sel, [&](auto* c) { return c->epsilon > *fit.max_epsilon; });
  } else if (!sel.empty()) {
    // variance-dominated side: walk down from the minimum of the error curve
    // while the error keeps growing as eps shrinks
    auto hi = std::min_element(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->mean_error < b->mean_error; });
    auto lo = hi;
    while (lo != sel.begin() && (*(lo - 1))->mean_error > (*lo)->mean_error) --lo;
    sel = std::vector<const CellSummary*>(lo, hi + 1);
  }
  const std::size_t need = std::max<std::size_t>(3, fit.min_points);
  if (sel.size() < need)
    throw ConfigError("fit_exponent: d=" + std::to_string(d) + " " + std::string(to_string(method)) + " has " +
                      std::to_string(sel.size()) + " usable points, need " + std::to_string(need));

  const auto n = static_cast<double>(sel.size());
  double sx = 0, sy = 0;
  for (auto* c : sel) {
    sx += -std::log(c->epsilon);
    sy += std::log(c->mean_error);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (auto* c : sel) {
    const double x = -std::log(c->epsilon) - mx, y = std::log(c->mean_error) - my;
    sxx += x * x;
    sxy += x * y;
  }
  if (!(sxx > 0.0)) throw ConfigError("fit_exponent: eps values are not distinct");
  ExponentFit f;
  f.d = d;
  f.method = method;
  f.alpha = sxy / sxx;
  f.intercept = my - f.alpha * mx;
  f.eps_min = sel.front()->epsilon;
  f.eps_max = sel.back()->epsilon;
  f.points = sel.size();
  double rss = 0;
  for (auto* c : sel) {
    const double r = std::log(c->mean_error) - (f.intercept + f.alpha * -std::log(c->epsilon));
    rss += r * r;
  }
  f.residual = std::sqrt(rss / n);
  return f;
}

ExponentFit fit_exponent(const std::vector<ErrorRecord>& records, std::size_t d, GainMethod method,
                         const FitConfig& fit) {
  return fit_exponent(summarize(records), d, method, fit);
}

// ---------------------------------------------------------------------------

std::vector<GainCurve> run_gain_curve(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const std::size_t d = cfg.dimensions.front();
  const DensitySpec spec = cfg.density.instantiate(d);
  const ObservationFn h = cfg.observation.instantiate(d);
  const OracleGain oracle = make_oracle(spec, h);
  const std::uint64_t seed = ensemble_seed(cfg.seed, d, 0);
  const ParticleEnsemble ens = make_ensemble(spec, h, cfg.particles, seed);
  const auto N = static_cast<Eigen::Index>(cfg.particles);
  const std::size_t axis = h.single_axis().value_or(0);

  const PointMatrix exact = oracle.evaluate(ens.points);
  const PointMatrix constant = replicate_row(gain_constant(ens), N);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return ens.points(a, static_cast<Eigen::Index>(axis)) < ens.points(b, static_cast<Eigen::Index>(axis)); });

  std::vector<GainMethod> methods;
  for (auto m : cfg.methods)
    if (m != GainMethod::Constant) methods.push_back(m);
  if (methods.empty()) methods.push_back(GainMethod::G2);

  std::vector<GainCurve> curves(cfg.epsilons.size());
  parallel_for(cfg.epsilons.size(), cfg.threads, [&](std::size_t e) {
    GainCurve& c = curves[e];
    c.epsilon = cfg.epsilons[e];
    c.methods = methods;
    const auto op = MarkovOperator::build(ens.points, c.epsilon);
    const KernelGains kg = kernel_gains(op, ens, &h, cfg.solver);
    c.converged = kg.solution.diagnostics.converged;
    const auto ax = static_cast<Eigen::Index>(axis);
    for (auto i : order) {
      c.x.push_back(ens.points(i, ax));
      c.exact.push_back(exact(i, ax));
      c.constant.push_back(constant(i, ax));
    }
    for (auto m : methods) {
      const PointMatrix& K = m == GainMethod::G1 ? kg.g1 : kg.g2;
      if (K.size() == 0) throw ConfigError("G1 needs the gradient of h");
      std::vector<double> col;
      for (auto i : order) col.push_back(K(i, ax));
      c.kernel.push_back(std::move(col));
      c.rms_to_constant.push_back(rms_error(K, constant));
      c.rms_to_exact.push_back(rms_error(K, exact));
    }
  });

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    json summary;
    summary["config"] = to_json(cfg);
    summary["oracle"] = std::string(to_string(oracle.provenance()));
    summary["d"] = d;
    summary["N"] = cfg.particles;
    summary["seed"] = seed;
    summary["constant_rms_to_exact"] = rms_error(constant, exact);
    summary["curves"] = json::array();
    for (const auto& c : curves) {
      char name[64];
      std::snprintf(name, sizeof name, "gain_curve_eps_%g.csv", c.epsilon);
      const auto path = *out_dir / name;
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw ConfigError("cannot write " + path.string());
      out << "d,epsilon,N,seed,method,rank,x,gain\n";
      auto emit = [&](std::string_view method, const std::vector<double>& col) {
        for (std::size_t r = 0; r < col.size(); ++r)
          out << d << ',' << format_double(c.epsilon) << ',' << cfg.particles << ',' << seed << ',' << method << ','
              << r << ',' << format_double(c.x[r]) << ',' << format_double(col[r]) << '\n';
      };
      emit("exact", c.exact);
      emit("constant", c.constant);
      for (std::size_t k = 0; k < c.methods.size(); ++k) emit(to_string(c.methods[k]), c.kernel[k]);

      json cj = {{"epsilon", c.epsilon}, {"converged", c.converged}, {"file", path.filename().string()}};
      for (std::size_t k = 0; k < c.methods.size(); ++k) {
        const std::string m(to_string(c.methods[k]));
        cj["rms_to_constant"][m] = c.rms_to_constant[k];
        cj["rms_to_exact"][m] = c.rms_to_exact[k];
      }
      summary["curves"].push_back(cj);
    }
    write_json(*out_dir / "gain_curve_summary.json", summary);
  }
  return curves;
}

// ---------------------------------------------------------------------------

SweepResult run_error_sweep(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const std::size_t M = cfg.simulations;
  const std::size_t E = cfg.epsilons.size();

  struct DimSetup {
    std::size_t d;
    DensitySpec spec;
    ObservationFn h;
    OracleGain oracle;
  };
  std::vector<DimSetup> dims;
  for (auto d : cfg.dimensions) {
    DensitySpec spec = cfg.density.instantiate(d);
    ObservationFn h = cfg.observation.instantiate(d);
    OracleGain oracle = make_oracle(spec, h);
    dims.push_back({d, std::move(spec), std::move(h), std::move(oracle)});
  }
  for (auto m : cfg.methods)
    if (m == GainMethod::G1 && !dims.front().h.has_gradient()) throw ConfigError("G1 needs the gradient of h");

  // Solve from the largest eps down, warm-starting each solve from the
  // previous one; the result order is fixed afterwards.
  std::vector<std::size_t> eps_order(E);
  std::iota(eps_order.begin(), eps_order.end(), 0);
  std::stable_sort(eps_order.begin(), eps_order.end(),
                   [&](auto a, auto b) { return cfg.epsilons[a] > cfg.epsilons[b]; });

  struct Slot {
    std::vector<ErrorRecord> records;
    std::vector<std::string> warnings;
  };
  std::vector<Slot> slots(dims.size() * M);
  const bool kernel = wants_kernel(cfg.methods);

  parallel_for(slots.size(), cfg.threads, [&](std::size_t item) {
    const DimSetup& ds = dims[item / M];
    const std::size_t m = item % M;
    Slot& slot = slots[item];
    const std::uint64_t seed = ensemble_seed(cfg.seed, ds.d, m);
    const ParticleEnsemble ens = make_ensemble(ds.spec, ds.h, cfg.particles, seed);
    const PointMatrix exact = ds.oracle.evaluate(ens.points);
    const auto N = static_cast<Eigen::Index>(cfg.particles);
    const double const_err = rms_error(replicate_row(gain_constant(ens), N), exact);

    SolverConfig solver = cfg.solver;
    for (std::size_t e : eps_order) {
      const double eps = cfg.epsilons[e];
      auto record = [&](GainMethod method, double err, bool conv, std::size_t iters, double wall) {
        ErrorRecord r;
        r.d = ds.d;
        r.epsilon = eps;
        r.N = cfg.particles;
        r.seed = seed;
        r.method = method;
        r.error = err;
        r.converged = conv;
        r.iterations = iters;
        r.wall_time = wall;
        slot.records.push_back(r);
      };
      std::optional<KernelGains> kg;
      double wall = 0.0;
      if (kernel) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const auto op = MarkovOperator::build(ens.points, eps);
          kg = kernel_gains(op, ens, &ds.h, solver);
          solver.warm_start = kg->solution.phi;
        } catch (const NumericalError& ex) {
          slot.warnings.push_back("d=" + std::to_string(ds.d) + " eps=" + format_double(eps) +
                                  " seed=" + std::to_string(seed) + ": " + ex.what());
          solver.warm_start.reset();
        }
        wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      for (auto method : cfg.methods) {
        if (method == GainMethod::Constant) {
          record(method, const_err, true, 0, 0.0);
        } else if (kg) {
          const PointMatrix& K = method == GainMethod::G1 ? kg->g1 : kg->g2;
          const auto& diag = kg->solution.diagnostics;
          record(method, rms_error(K, exact), diag.converged, diag.iterations, wall);
        }
      }
    }
  });

  SweepResult res;
  for (auto& s : slots) {
    res.records.insert(res.records.end(), s.records.begin(), s.records.end());
    res.warnings.insert(res.warnings.end(), s.warnings.begin(), s.warnings.end());
  }
  // deterministic order by cell key: d, eps, simulation index, method
  std::map<std::uint64_t, std::size_t> sim_index;
  for (std::size_t di = 0; di < dims.size(); ++di)
    for (std::size_t m = 0; m < M; ++m) sim_index[ensemble_seed(cfg.seed, dims[di].d, m)] = m;
  std::stable_sort(res.records.begin(), res.records.end(), [&](const ErrorRecord& a, const ErrorRecord& b) {
    return std::make_tuple(a.d, a.epsilon, sim_index[a.seed], method_rank(a.method)) <
           std::make_tuple(b.d, b.epsilon, sim_index[b.seed], method_rank(b.method));
  });
  res.cells = summarize(res.records);
  for (const auto& ds : dims)
    for (auto method : cfg.methods) {
      if (method == GainMethod::Constant) continue;
      try {
        res.fits.push_back(fit_exponent(res.cells, ds.d, method, cfg.fit));
      } catch (const ConfigError& ex) {
        res.warnings.push_back(ex.what());
      }
    }

  if (out_dir) {
    write_records_csv(*out_dir / "records.csv", res.records);
    write_cells_csv(*out_dir / "cells.csv", res.cells);
    write_fits_csv(*out_dir / "fits.csv", res.fits);
    {
      // wall-clock timings change run to run, so they live apart from the records
      std::ofstream t(*out_dir / "timings.csv", std::ios::binary | std::ios::trunc);
      t << "d,epsilon,N,seed,method,wall_time_s\n";
      for (const auto& r : res.records)
        if (r.method != GainMethod::Constant)
          t << r.d << ',' << format_double(r.epsilon) << ',' << r.N << ',' << r.seed << ',' << to_string(r.method)
            << ',' << format_double(r.wall_time) << '\n';
    }
    json summary;
    summary["config"] = to_json(cfg);
    summary["oracle"] = std::string(to_string(dims.front().oracle.provenance()));
    summary["cells"] = json::array();
    for (const auto& c : res.cells) summary["cells"].push_back(to_json(c));
    summary["fits"] = json::array();
    for (const auto& f : res.fits) summary["fits"].push_back(to_json(f));
    summary["warnings"] = res.warnings;
    write_json(*out_dir / "error_sweep_summary.json", summary);
  }
  return res;
}

// ---------------------------------------------------------------------------

double continuum_delta(double eps, double s2) { return eps * (s2 + 4 * eps) / (s2 * s2 + 3 * eps * s2 + 4 * eps * eps); }

double continuum_bias_g1(double eps, double s2, double h_norm) {
  return eps * (s2 - 4 * eps) / (s2 + 4 * eps) * h_norm;
}

double continuum_bias_g2(double eps, double s2, double h_norm) {
  return eps * s2 * s2 * s2 / ((s2 + 4 * eps) * (s2 * s2 + 3 * eps * s2 + 4 * eps * eps)) * h_norm;
}

std::vector<BiasPoint> run_bias_curve(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const std::size_t d = cfg.dimensions.front();
  const DensitySpec spec = cfg.density.instantiate(d);
  if (!spec.is_gaussian()) throw ConfigError("bias-curve needs a Gaussian density");
  const Gaussian& g = spec.gaussian();
  const double s2 = g.covariance()(0, 0);
  if ((g.covariance() - s2 * Eigen::MatrixXd::Identity(g.covariance().rows(), g.covariance().cols())).norm() >
      1e-12 * s2)
    throw ConfigError("bias-curve needs an isotropic covariance sigma^2 I");

  const ObservationFn h = cfg.observation.instantiate(d);
  Vector H = Vector::Zero(static_cast<Eigen::Index>(d));
  switch (cfg.observation.kind) {
  case ObservationConfig::Kind::Linear:
    if (cfg.observation.H.size() == 1) H[0] = cfg.observation.H[0];
    else
      for (std::size_t k = 0; k < d; ++k) H[static_cast<Eigen::Index>(k)] = cfg.observation.H[k];
    break;
  case ObservationConfig::Kind::Coordinate: H[static_cast<Eigen::Index>(cfg.observation.index)] = 1.0; break;
  default: throw ConfigError("bias-curve needs a linear observation");
  }
  const double hn = H.norm();
  if (!(hn > 0.0)) throw ConfigError("bias-curve needs H != 0");
  const Vector Hhat = H / hn;
  const Vector K_exact = s2 * H;

  // eps-independent ensembles; replicate 0 is the main one.
  const std::size_t R = cfg.bias_replicates;
  const std::size_t n_rep = std::max<std::size_t>(200, cfg.particles / 10);
  std::vector<std::size_t> sizes{cfg.particles};
  for (std::size_t r = 0; r < R; ++r) sizes.push_back(n_rep);

  const std::size_t E = cfg.epsilons.size();
  std::vector<std::size_t> eps_order(E);
  std::iota(eps_order.begin(), eps_order.end(), 0);
  std::stable_sort(eps_order.begin(), eps_order.end(),
                   [&](auto a, auto b) { return cfg.epsilons[a] > cfg.epsilons[b]; });

  // bias[ensemble][eps] for G1 and G2
  std::vector<std::vector<double>> b1(sizes.size(), std::vector<double>(E)), b2 = b1;
  std::vector<char> conv(sizes.size() * E, 1);
  auto one = [&](std::size_t k) {
    const ParticleEnsemble ens = make_ensemble(spec, h, sizes[k], ensemble_seed(cfg.seed, d, k));
    SolverConfig solver = cfg.solver;
    for (std::size_t e : eps_order) {
      const auto op = MarkovOperator::build(ens.points, cfg.epsilons[e]);
      const KernelGains kg = kernel_gains(op, ens, &h, solver);
      solver.warm_start = kg.solution.phi;
      conv[k * E + e] = kg.solution.diagnostics.converged;
      b1[k][e] = (K_exact - Vector(kg.g1.colwise().mean().transpose())).dot(Hhat);
      b2[k][e] = (K_exact - Vector(kg.g2.colwise().mean().transpose())).dot(Hhat);
    }
  };
  // The main ensemble holds the largest operator; run it alone so concurrent
  // replicates do not stack their memory on top of it.
  one(0);
  parallel_for(R, cfg.threads, [&](std::size_t r) { one(r + 1); });

  std::vector<BiasPoint> out(E);
  const double scale = std::sqrt(static_cast<double>(n_rep) / static_cast<double>(cfg.particles));
  for (std::size_t e = 0; e < E; ++e) {
    BiasPoint& p = out[e];
    p.epsilon = cfg.epsilons[e];
    p.bias_g1 = b1[0][e];
    p.bias_g2 = b2[0][e];
    std::vector<double> r1, r2;
    for (std::size_t r = 1; r <= R; ++r) {
      r1.push_back(b1[r][e]);
      r2.push_back(b2[r][e]);
    }
    // stderr_of is the error of the replicate mean; one replicate's spread is sqrt(R) larger
    const double root_r = std::sqrt(static_cast<double>(R));
    p.se_g1 = stderr_of(r1) * root_r * scale;
    p.se_g2 = stderr_of(r2) * root_r * scale;
    p.closed_g1 = continuum_bias_g1(p.epsilon, s2, hn);
    p.closed_g2 = continuum_bias_g2(p.epsilon, s2, hn);
    for (std::size_t k = 0; k < sizes.size(); ++k) p.converged = p.converged && conv[k * E + e];
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream csv(*out_dir / "bias_curve.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw ConfigError("cannot write bias_curve.csv");
    csv << "d,epsilon,N,seed,sigma2,bias_G1,se_G1,closed_G1,bias_G2,se_G2,closed_G2,converged\n";
    const auto seed = ensemble_seed(cfg.seed, d, 0);
    for (const auto& p : out)
      csv << d << ',' << format_double(p.epsilon) << ',' << cfg.particles << ',' << seed << ',' << format_double(s2)
          << ',' << format_double(p.bias_g1) << ',' << format_double(p.se_g1) << ',' << format_double(p.closed_g1)
          << ',' << format_double(p.bias_g2) << ',' << format_double(p.se_g2) << ',' << format_double(p.closed_g2)
          << ',' << (p.converged ? 1 : 0) << '\n';
    json summary;
    summary["config"] = to_json(cfg);
    summary["sigma2"] = s2;
    summary["H_norm"] = hn;
    summary["replicates"] = R;
    summary["replicate_particles"] = n_rep;
    summary["points"] = json::array();
    for (const auto& p : out)
      summary["points"].push_back({{"epsilon", p.epsilon},
                                   {"bias_G1", p.bias_g1},
                                   {"se_G1", p.se_g1},
                                   {"closed_G1", p.closed_g1},
                                   {"bias_G2", p.bias_g2},
                                   {"se_G2", p.se_g2},
                                   {"closed_G2", p.closed_g2},
                                   {"converged", p.converged}});
    write_json(*out_dir / "bias_curve_summary.json", summary);
  }
  return out;
}

// ---------------------------------------------------------------------------

FilterScenario make_scenario(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.dimensions.front();
  DensitySpec prior = cfg.density.instantiate(d);
  ObservationFn h = cfg.observation.instantiate(d);
  const auto di = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd A = cfg.fpf.A.size() ? cfg.fpf.A : Eigen::MatrixXd::Zero(di, di);

  std::optional<Vector> H;
  if (cfg.observation.kind == ObservationConfig::Kind::Linear) {
    H = Vector::Zero(di);
    if (cfg.observation.H.size() == 1) (*H)[0] = cfg.observation.H[0];
    else
      for (std::size_t k = 0; k < d; ++k) (*H)[static_cast<Eigen::Index>(k)] = cfg.observation.H[k];
  } else if (cfg.observation.kind == ObservationConfig::Kind::Coordinate) {
    H = Vector::Zero(di);
    (*H)[static_cast<Eigen::Index>(cfg.observation.index)] = 1.0;
  }

  if (prior.is_gaussian() && H)
    return FilterScenario::linear_gaussian(A, *H, prior.gaussian(), cfg.fpf.dt, cfg.fpf.horizon, cfg.particles, seed);

  FilterScenario sc{[A](std::span<const double> x, std::span<double> out) {
                      Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
                      Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size())) = A * xv;
                    },
                    std::move(h),
                    std::move(prior),
                    cfg.fpf.dt,
                    cfg.fpf.horizon,
                    cfg.particles,
                    seed,
                    std::nullopt};
  sc.validate();
  return sc;
}

FpfDemoResult run_fpf_demo(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const std::size_t S = cfg.fpf.seeds;
  const auto& modes = cfg.fpf.modes;

  struct SeedResult {
    double kb_mse = 0.0;
    std::vector<double> mse, dev, final_dev;
    Trajectory truth;
    std::vector<FilterRun> runs;
    std::optional<KalmanBucyPath> kb;
  };
  std::vector<SeedResult> per(S);
  const bool has_kb = make_scenario(cfg, 0).linear.has_value();
  for (auto m : modes)
    if (m == GainMode::Oracle && !has_kb) throw ConfigError("fpf oracle mode needs a linear Gaussian scenario");

  parallel_for(S, cfg.threads, [&](std::size_t s) {
    const FilterScenario sc = make_scenario(cfg, stream_seed(cfg.seed, s));
    SeedResult& r = per[s];
    r.truth = simulate_truth(sc);
    if (has_kb) {
      r.kb = kalman_bucy(sc, r.truth);
      r.kb_mse = mean_square_error(r.kb->mean, r.truth.x);
    }
    for (auto mode : modes) {
      StepOptions opt;
      opt.mode = mode;
      opt.epsilon = cfg.fpf.epsilon;
      opt.solver = cfg.solver;
      FilterRun run = run_filter(sc, r.truth, opt);
      r.mse.push_back(run.mean_square_error);
      if (r.kb) {
        const std::size_t K = run.particle_mean.size() - 1;
        double acc = 0.0;
        for (std::size_t k = 1; k <= K; ++k) acc += run.particle_mean[k][0] - r.kb->mean[k][0];
        r.dev.push_back(acc / static_cast<double>(K));
        r.final_dev.push_back(run.particle_mean[K][0] - r.kb->mean[K][0]);
      }
      if (s == 0) r.runs.push_back(std::move(run));
    }
    if (s != 0) r.truth = {};
  });

  FpfDemoResult res;
  res.seeds = S;
  res.has_kalman = has_kb;
  {
    std::vector<double> kb;
    for (auto& r : per) kb.push_back(r.kb_mse);
    res.kb_mse_mean = has_kb ? mean_of(kb) : 0.0;
    res.kb_mse_stderr = has_kb ? stderr_of(kb) : 0.0;
  }
  for (std::size_t k = 0; k < modes.size(); ++k) {
    ModeSummary ms;
    ms.mode = modes[k];
    std::vector<double> mse, dev, fdev;
    for (auto& r : per) {
      mse.push_back(r.mse[k]);
      if (has_kb) {
        dev.push_back(r.dev[k]);
        fdev.push_back(r.final_dev[k]);
      }
    }
    ms.mse_mean = mean_of(mse);
    ms.mse_stderr = stderr_of(mse);
    ms.kb_dev_mean = mean_of(dev);
    ms.kb_dev_stderr = stderr_of(dev);
    ms.kb_final_dev_mean = mean_of(fdev);
    ms.kb_final_dev_stderr = stderr_of(fdev);
    res.modes.push_back(ms);
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    const SeedResult& r0 = per.front();
    const std::size_t d = cfg.dimensions.front();
    std::ofstream tr(*out_dir / "fpf_trajectory.csv", std::ios::binary | std::ios::trunc);
    if (!tr) throw ConfigError("cannot write fpf_trajectory.csv");
    tr << "t";
    for (std::size_t j = 0; j < d; ++j) tr << ",x" << j;
    tr << ",z";
    if (r0.kb)
      for (std::size_t j = 0; j < d; ++j) tr << ",kb_mean" << j;
    for (const auto& run : r0.runs) {
      for (std::size_t j = 0; j < d; ++j) tr << ",mean_" << to_string(run.mode) << j;
      tr << ",sqerr_" << to_string(run.mode);
    }
    tr << '\n';
    for (std::size_t k = 0; k < r0.truth.t.size(); ++k) {
      tr << format_double(r0.truth.t[k]);
      const auto ki = static_cast<Eigen::Index>(k);
      for (std::size_t j = 0; j < d; ++j) tr << ',' << format_double(r0.truth.x(ki, static_cast<Eigen::Index>(j)));
      tr << ',' << format_double(r0.truth.z[k]);
      if (r0.kb)
        for (std::size_t j = 0; j < d; ++j) tr << ',' << format_double(r0.kb->mean[k][static_cast<Eigen::Index>(j)]);
      for (const auto& run : r0.runs) {
        const Vector& m = run.particle_mean[k];
        for (std::size_t j = 0; j < d; ++j) tr << ',' << format_double(m[static_cast<Eigen::Index>(j)]);
        tr << ',' << format_double((m - r0.truth.x.row(ki).transpose()).squaredNorm());
      }
      tr << '\n';
    }

    std::ofstream ps(*out_dir / "fpf_seeds.csv", std::ios::binary | std::ios::trunc);
    ps << "seed_index,seed,mode,mse,kb_mse,kb_dev,kb_final_dev\n";
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t k = 0; k < modes.size(); ++k)
        ps << s << ',' << stream_seed(cfg.seed, s) << ',' << to_string(modes[k]) << ',' << format_double(per[s].mse[k])
           << ',' << format_double(per[s].kb_mse) << ',' << format_double(has_kb ? per[s].dev[k] : 0.0) << ','
           << format_double(has_kb ? per[s].final_dev[k] : 0.0) << '\n';

    json summary;
    summary["config"] = to_json(cfg);
    summary["seeds"] = S;
    summary["kalman_bucy"] = has_kb ? json{{"mse_mean", res.kb_mse_mean}, {"mse_stderr", res.kb_mse_stderr}} : json();
    summary["modes"] = json::array();
    for (const auto& ms : res.modes) {
      json mj = {{"mode", std::string(to_string(ms.mode))}, {"mse_mean", ms.mse_mean}, {"mse_stderr", ms.mse_stderr}};
      if (has_kb) {
        mj["kb_deviation_mean"] = ms.kb_dev_mean;
        mj["kb_deviation_stderr"] = ms.kb_dev_stderr;
        mj["kb_final_deviation_mean"] = ms.kb_final_dev_mean;
        mj["kb_final_deviation_stderr"] = ms.kb_final_dev_stderr;
      }
      summary["modes"].push_back(mj);
    }
    write_json(*out_dir / "fpf_summary.json", summary);
  }
  return res;
}

} // namespace fpfgain::bench
