#include "fpfgain/bench/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fpfgain::bench {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw ConfigError("config: " + key + ": " + what);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) bad(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
}

double get_double(const json& j, const std::string& key) {
  if (!j.is_number()) bad(key, "expected a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) bad(key, "not finite");
  return v;
}

double get_positive(const json& j, const std::string& key) {
  double v = get_double(j, key);
  if (!(v > 0.0)) bad(key, "must be positive");
  return v;
}

std::size_t get_count(const json& j, const std::string& key, std::size_t min = 1) {
  if (!j.is_number_integer()) bad(key, "expected an integer");
  auto v = j.get<long long>();
  if (v < static_cast<long long>(min)) bad(key, "must be >= " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

Vector get_vector(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) bad(key, "expected a non-empty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = get_double(j[i], key);
  return v;
}

Eigen::MatrixXd get_matrix(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) bad(key, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  if (!j[0].is_array()) bad(key, "expected a non-empty array of rows");
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) bad(key, "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = get_double(j[r][c], key);
  }
  return m;
}

Gaussian parse_gaussian(const json& j, const std::string& key) {
  check_keys(j, key, {"mean", "covariance"});
  if (!j.contains("mean") || !j.contains("covariance")) bad(key, "needs mean and covariance");
  Vector mean = get_vector(j["mean"], key + ".mean");
  Eigen::MatrixXd cov = get_matrix(j["covariance"], key + ".covariance");
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) bad(key, "covariance shape does not match mean");
  try {
    return Gaussian(std::move(mean), std::move(cov));
  } catch (const ConfigError& e) {
    bad(key, e.what());
  }
}

DensitySpec parse_explicit(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "gaussian") {
    json g = j;
    g.erase("family");
    return DensitySpec(parse_gaussian(g, "density"));
  }
  check_keys(j, "density", {"family", "weights", "components"});
  if (!j.contains("weights") || !j.contains("components")) bad("density", "mixture needs weights and components");
  Vector w = get_vector(j["weights"], "density.weights");
  const json& comps = j["components"];
  if (!comps.is_array() || comps.size() != static_cast<std::size_t>(w.size()))
    bad("density.components", "must match weights in length");
  std::vector<Gaussian> gs;
  for (std::size_t k = 0; k < comps.size(); ++k)
    gs.push_back(parse_gaussian(comps[k], "density.components[" + std::to_string(k) + "]"));
  try {
    return DensitySpec(std::vector<double>(w.data(), w.data() + w.size()), std::move(gs));
  } catch (const ConfigError& e) {
    bad("density", e.what());
  }
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

} // namespace

DensitySpec DensityConfig::instantiate(std::size_t d) const {
  switch (kind) {
  case Kind::SymmetricBimodal: return DensitySpec::symmetric_bimodal(d, mu, sigma2);
  case Kind::IsotropicGaussian:
    return DensitySpec(Gaussian::isotropic(Vector::Zero(static_cast<Eigen::Index>(d)), sigma2));
  case Kind::Gaussian:
  case Kind::Mixture: {
    DensitySpec s = parse_explicit(explicit_spec);
    if (s.dimension() != d)
      bad("density", "explicit density has dimension " + std::to_string(s.dimension()) + ", sweep asks for " +
                         std::to_string(d));
    return s;
  }
  }
  bad("density", "unreachable");
}

ObservationFn ObservationConfig::instantiate(std::size_t d) const {
  ObservationFn h = [&] {
    switch (kind) {
    case Kind::Coordinate: return ObservationFn::coordinate(index);
    case Kind::Bilinear: return ObservationFn::bilinear(i, j);
    case Kind::Linear: {
      Vector v = Vector::Zero(static_cast<Eigen::Index>(d));
      if (H.size() == 1) {
        v[0] = H[0];
      } else if (H.size() == d) {
        for (std::size_t k = 0; k < d; ++k) v[static_cast<Eigen::Index>(k)] = H[k];
      } else {
        bad("observation.H", "length must be 1 or d = " + std::to_string(d));
      }
      return ObservationFn::linear(std::move(v));
    }
    }
    bad("observation", "unreachable");
  }();
  h.check_dimension(d);
  return h;
}

std::vector<double> geometric_grid(double lo, double hi, std::size_t per_decade) {
  if (!(lo > 0.0) || !(hi >= lo)) throw ConfigError("geometric_grid: need 0 < lo <= hi");
  if (per_decade == 0) throw ConfigError("geometric_grid: per_decade must be positive");
  const double decades = std::log10(hi / lo);
  const auto steps = static_cast<std::size_t>(std::llround(decades * static_cast<double>(per_decade)));
  std::vector<double> out;
  if (steps == 0) return {lo};
  for (std::size_t k = 0; k <= steps; ++k)
    out.push_back(lo * std::pow(10.0, decades * static_cast<double>(k) / static_cast<double>(steps)));
  out.back() = hi;
  return out;
}

void ExperimentConfig::validate() const {
  if (epsilons.empty()) bad("epsilons", "grid is empty");
  for (double e : epsilons)
    if (!(e > 0.0) || !std::isfinite(e)) bad("epsilons", "entries must be positive and finite");
  if (dimensions.empty()) bad("dimensions", "list is empty");
  for (auto d : dimensions)
    if (d == 0) bad("dimensions", "entries must be >= 1");
  if (methods.empty()) bad("methods", "list is empty");
  if (particles < 2) bad("particles", "must be >= 2");
  if (simulations < 1) bad("simulations", "must be >= 1");
  if (threads < 1) bad("threads", "must be >= 1");
  if (fit.min_points < 3) bad("fit.min_points", "must be >= 3");
  try {
    solver.validate();
  } catch (const ConfigError& e) {
    bad("solver", e.what());
  }
  for (auto d : dimensions) {
    (void)density.instantiate(d);
    (void)observation.instantiate(d);
  }
  if (fpf.A.size() != 0) {
    const auto d = static_cast<Eigen::Index>(dimensions.front());
    if (fpf.A.rows() != d || fpf.A.cols() != d) bad("fpf.A", "must be d x d for the first entry of dimensions");
  }
  if (!(fpf.dt > 0.0) || !(fpf.horizon >= fpf.dt)) bad("fpf", "need 0 < dt <= horizon");
  if (!(fpf.epsilon > 0.0)) bad("fpf.epsilon", "must be positive");
  if (fpf.seeds < 1) bad("fpf.seeds", "must be >= 1");
  if (fpf.modes.empty()) bad("fpf.modes", "list is empty");
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "", {"density", "observation", "methods", "epsilons", "epsilon_grid", "dimensions", "particles",
                     "simulations", "seed", "solver", "fit", "fpf", "bias_replicates", "threads", "output_dir"});
  ExperimentConfig cfg;

  try {
    if (j.contains("density")) {
      const json& dj = j["density"];
      if (!dj.is_object() || !dj.contains("family")) bad("density", "needs a family");
      const std::string family = lower(dj["family"].get<std::string>());
      if (family == "symmetric_bimodal" || family == "isotropic_gaussian") {
        check_keys(dj, "density", {"family", "mu", "sigma2"});
        cfg.density.kind = family == "symmetric_bimodal" ? DensityConfig::Kind::SymmetricBimodal
                                                         : DensityConfig::Kind::IsotropicGaussian;
        if (family == "isotropic_gaussian") cfg.density.sigma2 = 1.0;
        if (dj.contains("mu")) cfg.density.mu = get_double(dj["mu"], "density.mu");
        if (dj.contains("sigma2")) cfg.density.sigma2 = get_positive(dj["sigma2"], "density.sigma2");
      } else if (family == "gaussian" || family == "mixture") {
        cfg.density.kind = family == "gaussian" ? DensityConfig::Kind::Gaussian : DensityConfig::Kind::Mixture;
        cfg.density.explicit_spec = dj;
        cfg.density.explicit_spec["family"] = family;
        (void)parse_explicit(cfg.density.explicit_spec);
      } else {
        bad("density.family", "unknown family '" + family + "'");
      }
    }

    if (j.contains("observation")) {
      const json& oj = j["observation"];
      if (!oj.is_object() || !oj.contains("type")) bad("observation", "needs a type");
      const std::string type = lower(oj["type"].get<std::string>());
      if (type == "coordinate") {
        check_keys(oj, "observation", {"type", "index"});
        cfg.observation.kind = ObservationConfig::Kind::Coordinate;
        if (oj.contains("index")) cfg.observation.index = get_count(oj["index"], "observation.index", 0);
      } else if (type == "linear") {
        check_keys(oj, "observation", {"type", "H"});
        cfg.observation.kind = ObservationConfig::Kind::Linear;
        if (!oj.contains("H")) bad("observation.H", "required for linear observations");
        if (oj["H"].is_number()) {
          cfg.observation.H = {get_double(oj["H"], "observation.H")};
        } else {
          Vector H = get_vector(oj["H"], "observation.H");
          cfg.observation.H.assign(H.data(), H.data() + H.size());
        }
      } else if (type == "bilinear") {
        check_keys(oj, "observation", {"type", "i", "j"});
        cfg.observation.kind = ObservationConfig::Kind::Bilinear;
        if (oj.contains("i")) cfg.observation.i = get_count(oj["i"], "observation.i", 0);
        if (oj.contains("j")) cfg.observation.j = get_count(oj["j"], "observation.j", 0);
      } else {
        bad("observation.type", "unknown type '" + type + "'");
      }
    }

    if (j.contains("methods")) {
      if (!j["methods"].is_array()) bad("methods", "expected an array");
      cfg.methods.clear();
      for (const auto& m : j["methods"]) cfg.methods.push_back(parse_gain_method(m.get<std::string>()));
    }

    if (j.contains("epsilons") && j.contains("epsilon_grid")) bad("epsilons", "give either epsilons or epsilon_grid");
    if (j.contains("epsilons")) {
      const json& ej = j["epsilons"];
      if (ej.is_number()) {
        cfg.epsilons = {get_positive(ej, "epsilons")};
      } else {
        Vector e = get_vector(ej, "epsilons");
        cfg.epsilons.assign(e.data(), e.data() + e.size());
      }
    } else {
      double lo = 1e-3, hi = 1.0;
      std::size_t per = 10;
      if (j.contains("epsilon_grid")) {
        const json& g = j["epsilon_grid"];
        check_keys(g, "epsilon_grid", {"min", "max", "per_decade"});
        if (g.contains("min")) lo = get_positive(g["min"], "epsilon_grid.min");
        if (g.contains("max")) hi = get_positive(g["max"], "epsilon_grid.max");
        if (g.contains("per_decade")) per = get_count(g["per_decade"], "epsilon_grid.per_decade");
      }
      cfg.epsilons = geometric_grid(lo, hi, per);
    }

    if (j.contains("dimensions")) {
      const json& dj = j["dimensions"];
      cfg.dimensions.clear();
      if (dj.is_number()) {
        cfg.dimensions.push_back(get_count(dj, "dimensions"));
      } else {
        if (!dj.is_array() || dj.empty()) bad("dimensions", "expected a non-empty array");
        for (const auto& d : dj) cfg.dimensions.push_back(get_count(d, "dimensions"));
      }
    }
    if (j.contains("particles")) cfg.particles = get_count(j["particles"], "particles", 2);
    if (j.contains("simulations")) cfg.simulations = get_count(j["simulations"], "simulations");
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) bad("seed", "expected an integer");
      if (j["seed"].is_number_integer() && j["seed"].get<long long>() < 0) bad("seed", "must be non-negative");
      cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("solver")) {
      const json& sj = j["solver"];
      check_keys(sj, "solver", {"max_iterations", "residual_tol"});
      if (sj.contains("max_iterations")) cfg.solver.max_iterations = get_count(sj["max_iterations"], "solver.max_iterations");
      if (sj.contains("residual_tol")) cfg.solver.residual_tol = get_positive(sj["residual_tol"], "solver.residual_tol");
    }
    if (j.contains("fit")) {
      const json& fj = j["fit"];
      check_keys(fj, "fit", {"max_epsilon", "min_epsilon", "min_points", "include_nonconverged"});
      if (fj.contains("include_nonconverged")) {
        if (!fj["include_nonconverged"].is_boolean()) bad("fit.include_nonconverged", "expected true or false");
        cfg.fit.include_nonconverged = fj["include_nonconverged"].get<bool>();
      }
      if (fj.contains("max_epsilon")) cfg.fit.max_epsilon = get_positive(fj["max_epsilon"], "fit.max_epsilon");
      if (fj.contains("min_epsilon")) cfg.fit.min_epsilon = get_positive(fj["min_epsilon"], "fit.min_epsilon");
      if (fj.contains("min_points")) cfg.fit.min_points = get_count(fj["min_points"], "fit.min_points", 3);
    }
    if (j.contains("fpf")) {
      const json& pj = j["fpf"];
      check_keys(pj, "fpf", {"A", "modes", "dt", "horizon", "epsilon", "seeds"});
      if (pj.contains("A")) {
        if (pj["A"].is_number()) {
          const double a = get_double(pj["A"], "fpf.A");
          const auto d = static_cast<Eigen::Index>(cfg.dimensions.front());
          cfg.fpf.A = a * Eigen::MatrixXd::Identity(d, d);
        } else {
          cfg.fpf.A = get_matrix(pj["A"], "fpf.A");
        }
      }
      if (pj.contains("modes")) {
        if (!pj["modes"].is_array()) bad("fpf.modes", "expected an array");
        cfg.fpf.modes.clear();
        for (const auto& m : pj["modes"]) cfg.fpf.modes.push_back(parse_gain_mode(m.get<std::string>()));
      }
      if (pj.contains("dt")) cfg.fpf.dt = get_positive(pj["dt"], "fpf.dt");
      if (pj.contains("horizon")) cfg.fpf.horizon = get_positive(pj["horizon"], "fpf.horizon");
      if (pj.contains("epsilon")) cfg.fpf.epsilon = get_positive(pj["epsilon"], "fpf.epsilon");
      if (pj.contains("seeds")) cfg.fpf.seeds = get_count(pj["seeds"], "fpf.seeds");
    }
    if (j.contains("bias_replicates")) cfg.bias_replicates = get_count(j["bias_replicates"], "bias_replicates", 2);
    if (j.contains("threads")) cfg.threads = get_count(j["threads"], "threads");
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  switch (cfg.density.kind) {
  case DensityConfig::Kind::SymmetricBimodal:
    j["density"] = {{"family", "symmetric_bimodal"}, {"mu", cfg.density.mu}, {"sigma2", cfg.density.sigma2}};
    break;
  case DensityConfig::Kind::IsotropicGaussian:
    j["density"] = {{"family", "isotropic_gaussian"}, {"sigma2", cfg.density.sigma2}};
    break;
  default: j["density"] = cfg.density.explicit_spec;
  }
  switch (cfg.observation.kind) {
  case ObservationConfig::Kind::Coordinate: j["observation"] = {{"type", "coordinate"}, {"index", cfg.observation.index}}; break;
  case ObservationConfig::Kind::Linear: j["observation"] = {{"type", "linear"}, {"H", cfg.observation.H}}; break;
  case ObservationConfig::Kind::Bilinear:
    j["observation"] = {{"type", "bilinear"}, {"i", cfg.observation.i}, {"j", cfg.observation.j}};
    break;
  }
  j["methods"] = json::array();
  for (auto m : cfg.methods) j["methods"].push_back(std::string(to_string(m)));
  j["epsilons"] = cfg.epsilons;
  j["dimensions"] = cfg.dimensions;
  j["particles"] = cfg.particles;
  j["simulations"] = cfg.simulations;
  j["seed"] = cfg.seed;
  j["solver"] = {{"max_iterations", cfg.solver.max_iterations}, {"residual_tol", cfg.solver.residual_tol}};
  json fit = {{"min_points", cfg.fit.min_points}, {"include_nonconverged", cfg.fit.include_nonconverged}};
  if (cfg.fit.max_epsilon) fit["max_epsilon"] = *cfg.fit.max_epsilon;
  if (cfg.fit.min_epsilon) fit["min_epsilon"] = *cfg.fit.min_epsilon;
  j["fit"] = fit;
  json fpf = {{"dt", cfg.fpf.dt}, {"horizon", cfg.fpf.horizon}, {"epsilon", cfg.fpf.epsilon}, {"seeds", cfg.fpf.seeds}};
  fpf["modes"] = json::array();
  for (auto m : cfg.fpf.modes) fpf["modes"].push_back(std::string(to_string(m)));
  if (cfg.fpf.A.size() != 0) {
    json A = json::array();
    for (Eigen::Index r = 0; r < cfg.fpf.A.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < cfg.fpf.A.cols(); ++c) row.push_back(cfg.fpf.A(r, c));
      A.push_back(row);
    }
    fpf["A"] = A;
  }
  j["fpf"] = fpf;
  j["bias_replicates"] = cfg.bias_replicates;
  return j;
}

} // namespace fpfgain::bench
