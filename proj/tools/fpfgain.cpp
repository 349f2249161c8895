// Command-line front end for the benchmark harness.
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "fpfgain/bench/experiments.hpp"

using namespace fpfgain;
using namespace fpfgain::bench;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", c.seed, "master seed (overrides seed)");
  sub->add_option("--threads", c.threads, "worker threads (overrides threads)")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c, std::filesystem::path& out) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (!c.out.empty()) cfg.output_dir = c.out;
  out = cfg.output_dir;
  std::filesystem::create_directories(out);
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel gain approximation benchmarks"};
  app.require_subcommand(1);

  Common gc, es, fe, bc, fd;
  std::string records;
  auto* gain = app.add_subcommand("gain-curve", "per-particle gain curves at each eps");
  auto* sweep = app.add_subcommand("error-sweep", "error vs (d, eps) over M simulations per cell");
  auto* fit = app.add_subcommand("fit-exponent", "fit log error vs log(1/eps) from a records CSV");
  auto* bias = app.add_subcommand("bias-curve", "empirical vs closed-form bias, linear Gaussian case");
  auto* demo = app.add_subcommand("fpf-demo", "run the particle filter with each gain mode");
  add_common(gain, gc);
  add_common(sweep, es);
  add_common(fit, fe);
  fit->add_option("--records", records, "records CSV (default <out>/records.csv)");
  add_common(bias, bc);
  add_common(demo, fd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    std::filesystem::path out;
    if (gain->parsed()) {
      auto cfg = resolve(gc, out);
      auto curves = run_gain_curve(cfg, out);
      for (const auto& c : curves) {
        std::printf("eps=%-10g", c.epsilon);
        for (std::size_t k = 0; k < c.methods.size(); ++k)
          std::printf("  %s: rms_to_constant=%.4g rms_to_exact=%.4g", std::string(to_string(c.methods[k])).c_str(),
                      c.rms_to_constant[k], c.rms_to_exact[k]);
        std::printf("%s\n", c.converged ? "" : "  (not converged)");
      }
    } else if (sweep->parsed()) {
      auto cfg = resolve(es, out);
      auto res = run_error_sweep(cfg, out);
      for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      for (const auto& f : res.fits)
        std::printf("d=%zu %s alpha=%.4f over eps in [%g, %g] (%zu points)\n", f.d,
                    std::string(to_string(f.method)).c_str(), f.alpha, f.eps_min, f.eps_max, f.points);
      std::printf("%zu records written to %s\n", res.records.size(), (out / "records.csv").c_str());
    } else if (fit->parsed()) {
      auto cfg = resolve(fe, out);
      const std::filesystem::path in = records.empty() ? out / "records.csv" : std::filesystem::path(records);
      const auto recs = read_records_csv(in);
      const auto cells = summarize(recs);
      std::vector<ExponentFit> fits;
      for (auto d : cfg.dimensions)
        for (auto m : cfg.methods)
          if (m != GainMethod::Constant) fits.push_back(fit_exponent(cells, d, m, cfg.fit));
      write_fits_csv(out / "fits.csv", fits);
      nlohmann::json j;
      j["config"] = to_json(cfg);
      j["records"] = in.string();
      j["fits"] = nlohmann::json::array();
      for (const auto& f : fits) {
        j["fits"].push_back(to_json(f));
        std::printf("d=%zu %s alpha=%.4f over eps in [%g, %g] (%zu points)\n", f.d,
                    std::string(to_string(f.method)).c_str(), f.alpha, f.eps_min, f.eps_max, f.points);
      }
      write_json(out / "fit_summary.json", j);
    } else if (bias->parsed()) {
      auto cfg = resolve(bc, out);
      auto pts = run_bias_curve(cfg, out);
      std::printf("%-10s %12s %12s %12s %12s\n", "eps", "bias_G1", "closed_G1", "bias_G2", "closed_G2");
      for (const auto& p : pts)
        std::printf("%-10g %12.5f %12.5f %12.5f %12.5f\n", p.epsilon, p.bias_g1, p.closed_g1, p.bias_g2, p.closed_g2);
    } else if (demo->parsed()) {
      auto cfg = resolve(fd, out);
      auto res = run_fpf_demo(cfg, out);
      if (res.has_kalman) std::printf("kalman-bucy  mse=%.5g +- %.2g\n", res.kb_mse_mean, res.kb_mse_stderr);
      for (const auto& m : res.modes)
        std::printf("%-11s  mse=%.5g +- %.2g\n", std::string(to_string(m.mode)).c_str(), m.mse_mean, m.mse_stderr);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  return 0;
}
