#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fpfgain/bench/experiments.hpp"

using namespace fpfgain;
using namespace fpfgain::bench;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fpfgain_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::vector<CellSummary> power_law(std::size_t d, double alpha, double c) {
  std::vector<CellSummary> cells;
  for (double e : geometric_grid(1e-3, 1.0, 10)) {
    CellSummary s;
    s.d = d;
    s.epsilon = e;
    s.M = 1;
    s.mean_error = c * std::pow(e, -alpha);
    cells.push_back(s);
  }
  return cells;
}

} // namespace

TEST_CASE("geometric grid") {
  const auto g = geometric_grid(1e-3, 1.0, 10);
  REQUIRE(g.size() == 31);
  CHECK(g.front() == 1e-3);
  CHECK(g.back() == 1.0);
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(std::pow(10.0, 0.1)));
  CHECK(geometric_grid(0.5, 0.5, 3).size() == 1);
  CHECK_THROWS_AS(geometric_grid(0.0, 1.0, 10), ConfigError);
  CHECK_THROWS_AS(geometric_grid(1.0, 0.1, 10), ConfigError);
}

TEST_CASE("exponent fit recovers synthetic power laws") {
  FitConfig all;
  all.max_epsilon = 1.0;
  auto f = fit_exponent(power_law(1, 1.5, 0.2), 1, GainMethod::G2, all);
  CHECK(std::abs(f.alpha - 1.5) < 1e-10);
  CHECK(std::abs(f.intercept - std::log(0.2)) < 1e-10);
  CHECK(f.points == 31);
  CHECK(f.residual < 1e-10);
  for (std::size_t d = 1; d <= 4; ++d) {
    const double alpha = 1.0 + static_cast<double>(d) / 4.0;
    CHECK(std::abs(fit_exponent(power_law(d, alpha, 1.0), d, GainMethod::G2, all).alpha - alpha) < 1e-10);
  }
  // default window: the decreasing branch ending at the minimum
  auto cells = power_law(2, 1.0, 1.0);
  for (auto& c : cells)
    if (c.epsilon > 0.11) c.mean_error = 10.0 * std::pow(c.epsilon / 0.1, 2); // rises again past 0.1
  auto w = fit_exponent(cells, 2, GainMethod::G2);
  CHECK(w.eps_max == doctest::Approx(0.1));
  CHECK(std::abs(w.alpha - 1.0) < 1e-10);
}

TEST_CASE("exponent fit rejects thin data") {
  FitConfig narrow;
  narrow.min_epsilon = 0.5;
  narrow.max_epsilon = 0.7;
  CHECK_THROWS_AS(fit_exponent(power_law(1, 1.0, 1.0), 1, GainMethod::G2, narrow), ConfigError);
  CHECK_THROWS_AS(fit_exponent(power_law(1, 1.0, 1.0), 3, GainMethod::G2), ConfigError);
  auto cells = power_law(1, 1.0, 1.0);
  for (auto& c : cells) c.nonconverged = 1;
  CHECK_THROWS_AS(fit_exponent(cells, 1, GainMethod::G2), ConfigError);
  FitConfig keep;
  keep.include_nonconverged = true;
  CHECK(fit_exponent(cells, 1, GainMethod::G2, keep).alpha == doctest::Approx(1.0));
}

TEST_CASE("summaries") {
  std::vector<ErrorRecord> recs;
  for (int m = 0; m < 4; ++m) {
    ErrorRecord r;
    r.epsilon = 0.1;
    r.N = 10;
    r.error = 1.0 + m;
    r.converged = m != 2;
    recs.push_back(r);
  }
  const auto cells = summarize(recs);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].M == 4);
  CHECK(cells[0].mean_error == doctest::Approx(2.5));
  CHECK(cells[0].nonconverged == 1);
  PointMatrix a(2, 1), b(2, 1);
  a << 1.0, 2.0;
  b << 1.0, 0.0;
  CHECK(rms_error(a, b) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("records CSV round trip is exact") {
  std::vector<ErrorRecord> recs(3);
  recs[0] = {2, 0.1 * 3, 200, 1234567890123ULL, GainMethod::G2, 1.0 / 3.0, true, 17, 0.0};
  recs[1] = {1, 1e-3, 200, 5, GainMethod::Constant, std::nextafter(0.7, 1.0), false, 10000, 0.0};
  recs[2] = {4, 2.5, 10, 0, GainMethod::G1, 1e-300, true, 1, 0.0};
  const auto dir = scratch("csv");
  write_records_csv(dir / "r.csv", recs);
  const auto back = read_records_csv(dir / "r.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].d == recs[i].d);
    CHECK(back[i].epsilon == recs[i].epsilon);
    CHECK(back[i].seed == recs[i].seed);
    CHECK(back[i].method == recs[i].method);
    CHECK(back[i].error == recs[i].error);
    CHECK(back[i].converged == recs[i].converged);
    CHECK(back[i].iterations == recs[i].iterations);
  }
  std::ofstream(dir / "bad.csv") << "x,y\n1,2\n";
  CHECK_THROWS_AS(read_records_csv(dir / "bad.csv"), ConfigError);
  CHECK_THROWS_AS(read_records_csv(dir / "missing.csv"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config parsing") {
  const auto cfg = parse_config(json::parse(R"({
    "density": {"family": "symmetric_bimodal", "mu": 1.5},
    "observation": {"type": "linear", "H": 2.0},
    "methods": ["g1", "G2"],
    "epsilon_grid": {"min": 0.01, "max": 1, "per_decade": 2},
    "dimensions": [1, 3],
    "particles": 50,
    "solver": {"residual_tol": 1e-9, "max_iterations": 500},
    "fpf": {"A": -0.5}
  })"));
  CHECK(cfg.density.mu == 1.5);
  CHECK(cfg.density.sigma2 == 0.2);
  CHECK(cfg.epsilons.size() == 5);
  CHECK(cfg.methods.size() == 2);
  CHECK(cfg.solver.max_iterations == 500);
  const auto h = cfg.observation.instantiate(3);
  CHECK(h.value(std::vector<double>{1.0, 7.0, 7.0}) == 2.0);
  CHECK(cfg.density.instantiate(3).dimension() == 3);
  // defaults
  const auto dflt = parse_config(json::object());
  CHECK(dflt.epsilons.size() == 31);
  CHECK(dflt.particles == 200);
  CHECK(dflt.simulations == 100);
  // round trip through to_json
  const auto again = parse_config(to_json(cfg));
  CHECK(again.epsilons == cfg.epsilons);
  CHECK(to_json(again) == to_json(cfg));
}

TEST_CASE("config errors name the key") {
  auto err = [](const char* text) -> std::string {
    try {
      parse_config(json::parse(text));
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(err(R"({"particle": 10})").find("particle") != std::string::npos);
  CHECK(err(R"({"particles": 1})").find("particles") != std::string::npos);
  CHECK(err(R"({"epsilons": [0.1, -1]})").find("epsilons") != std::string::npos);
  CHECK(err(R"({"epsilons": [0.1], "epsilon_grid": {}})").find("epsilons") != std::string::npos);
  CHECK(err(R"({"density": {"family": "cauchy"}})").find("density") != std::string::npos);
  CHECK(err(R"({"observation": {"type": "linear", "H": [1], "x": 2}})").find("observation") != std::string::npos);
  CHECK(err(R"({"methods": ["G7"]})") != "");
  CHECK(err(R"({"particles": "many"})").find("particles") != std::string::npos);
  CHECK(err(R"({"solver": {"max_iterations": 0}})").find("solver") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("error sweep output is independent of the thread count") {
  auto cfg = parse_config(json::parse(R"({
    "methods": ["G2", "constant"],
    "epsilons": [0.05, 0.2, 0.5],
    "dimensions": [1, 2],
    "particles": 40,
    "simulations": 3,
    "seed": 9
  })"));
  const auto d1 = scratch("sweep1"), d2 = scratch("sweep2");
  cfg.threads = 1;
  const auto a = run_error_sweep(cfg, d1);
  cfg.threads = 3;
  const auto b = run_error_sweep(cfg, d2);
  CHECK(a.records.size() == 2 * 3 * 3 * 2);
  for (const char* f : {"records.csv", "cells.csv", "error_sweep_summary.json"})
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  // the constant gain does not depend on eps
  for (const auto& r : a.records)
    if (r.method == GainMethod::Constant)
      for (const auto& s : a.records)
        if (s.method == GainMethod::Constant && s.d == r.d && s.seed == r.seed) CHECK(s.error == r.error);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("closed-form bias identities") {
  const double s2 = 1.0;
  CHECK(std::abs(continuum_bias_g1(s2 / 4, s2, 1.0)) < 1e-15);
  CHECK(continuum_bias_g1(0.1, s2, 1.0) > 0.0);
  CHECK(continuum_bias_g1(0.5, s2, 1.0) < 0.0);
  for (double e : {1e-6, 1e-5}) {
    CHECK(continuum_bias_g1(e, s2, 1.0) / e == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(continuum_bias_g2(e, s2, 1.0) / e == doctest::Approx(1.0).epsilon(1e-4));
  }
  for (double e : {0.05, 0.25, 1.0, 4.0}) {
    const double delta = continuum_delta(e, s2);
    CHECK(delta > 0.0);
    CHECK(continuum_bias_g2(e, s2, 1.0) == doctest::Approx(delta * s2 * s2 * s2 / ((s2 + 4 * e) * (s2 + 4 * e))));
    CHECK(continuum_bias_g1(e, s2, 2.0) == doctest::Approx(2.0 * continuum_bias_g1(e, s2, 1.0)));
  }
  CHECK(continuum_bias_g2(1e6, s2, 1.0) < 1e-6);
}
