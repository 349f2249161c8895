#include <cstdio>
#include <fstream>
#include <sstream>

#include "fpfgain/bench/experiments.hpp"

namespace fpfgain::bench {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

} // namespace

void write_records_csv(const std::filesystem::path& path, const std::vector<ErrorRecord>& records) {
  auto out = open_out(path);
  out << "d,epsilon,N,seed,method,error,converged,iterations\n";
  for (const auto& r : records)
    out << r.d << ',' << format_double(r.epsilon) << ',' << r.N << ',' << r.seed << ',' << to_string(r.method) << ','
        << format_double(r.error) << ',' << (r.converged ? 1 : 0) << ',' << r.iterations << '\n';
}

std::vector<ErrorRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open records file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("d,epsilon,N,seed,method,error", 0) != 0)
    throw ConfigError(path.string() + ": not a records CSV");
  std::vector<ErrorRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() < 6) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
    try {
      ErrorRecord r;
      r.d = std::stoul(f[0]);
      r.epsilon = std::stod(f[1]);
      r.N = std::stoul(f[2]);
      r.seed = std::stoull(f[3]);
      r.method = parse_gain_method(f[4]);
      r.error = std::stod(f[5]);
      if (f.size() > 6) r.converged = f[6] == "1";
      if (f.size() > 7) r.iterations = std::stoul(f[7]);
      out.push_back(r);
    } catch (const std::logic_error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_cells_csv(const std::filesystem::path& path, const std::vector<CellSummary>& cells) {
  auto out = open_out(path);
  out << "d,epsilon,N,M,method,mean_error,std_error,nonconverged\n";
  for (const auto& c : cells)
    out << c.d << ',' << format_double(c.epsilon) << ',' << c.N << ',' << c.M << ',' << to_string(c.method) << ','
        << format_double(c.mean_error) << ',' << format_double(c.std_error) << ',' << c.nonconverged << '\n';
}

void write_fits_csv(const std::filesystem::path& path, const std::vector<ExponentFit>& fits) {
  auto out = open_out(path);
  out << "d,method,alpha,intercept,eps_min,eps_max,points,residual\n";
  for (const auto& f : fits)
    out << f.d << ',' << to_string(f.method) << ',' << format_double(f.alpha) << ',' << format_double(f.intercept)
        << ',' << format_double(f.eps_min) << ',' << format_double(f.eps_max) << ',' << f.points << ','
        << format_double(f.residual) << '\n';
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

nlohmann::json to_json(const ExponentFit& f) {
  return {{"d", f.d},           {"method", std::string(to_string(f.method))},
          {"alpha", f.alpha},   {"intercept", f.intercept},
          {"eps_min", f.eps_min}, {"eps_max", f.eps_max},
          {"points", f.points}, {"residual", f.residual}};
}

nlohmann::json to_json(const CellSummary& c) {
  return {{"d", c.d},
          {"epsilon", c.epsilon},
          {"N", c.N},
          {"M", c.M},
          {"method", std::string(to_string(c.method))},
          {"mean_error", c.mean_error},
          {"std_error", c.std_error},
          {"nonconverged", c.nonconverged}};
}

} // namespace fpfgain::bench
