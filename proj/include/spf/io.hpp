#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "spf/core.hpp"
#include "spf/filters.hpp"

namespace spf {

using json = nlohmann::json;

/// Shortest round-trip decimal form, independent of locale.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories: header "t,x0,...,x{d-1}", one row per time step.

inline void write_trajectory_csv(std::ostream& os, const std::vector<StateVector>& states, long first_t = 1) {
  if (states.empty()) throw std::invalid_argument("write_trajectory_csv: empty trajectory");
  const Index d = states.front().size();
  os << "t";
  for (Index i = 0; i < d; ++i) os << ",x" << i;
  os << "\n";
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (states[k].size() != d) throw std::invalid_argument("write_trajectory_csv: dimension changes");
    os << first_t + static_cast<long>(k);
    for (Index i = 0; i < d; ++i) os << "," << format_double(states[k][i]);
    os << "\n";
  }
}

inline std::vector<StateVector> read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("trajectory CSV: missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "t") throw std::invalid_argument("trajectory CSV: bad header");
  const auto d = static_cast<Index>(header.size() - 1);
  std::vector<StateVector> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<Index>(cells.size()) != d + 1) throw std::invalid_argument("trajectory CSV: wrong column count");
    StateVector x(d);
    for (Index i = 0; i < d; ++i) x[i] = parse_double(cells[static_cast<std::size_t>(i + 1)]);
    out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scans: header "t,b0_x,b0_y,...", sensor-frame beam endpoints per step.

inline void write_scan_csv(std::ostream& os, const std::vector<BeamScan>& scans, long first_t = 1) {
  if (scans.empty()) throw std::invalid_argument("write_scan_csv: no scans");
  const Index k = scans.front().size();
  os << "t";
  for (Index b = 0; b < k; ++b) os << ",b" << b << "_x,b" << b << "_y";
  os << "\n";
  for (std::size_t s = 0; s < scans.size(); ++s) {
    if (scans[s].size() != k) throw std::invalid_argument("write_scan_csv: beam count changes");
    os << first_t + static_cast<long>(s);
    for (const auto& e : scans[s].endpoints) os << "," << format_double(e.x()) << "," << format_double(e.y());
    os << "\n";
  }
}

inline std::vector<BeamScan> read_scan_csv(std::istream& is, double sigma) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("scan CSV: missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "t" || (header.size() - 1) % 2 != 0)
    throw std::invalid_argument("scan CSV: bad header");
  const auto k = static_cast<Index>((header.size() - 1) / 2);
  std::vector<BeamScan> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<Index>(cells.size()) != 2 * k + 1) throw std::invalid_argument("scan CSV: wrong column count");
    Observation z(2 * k);
    for (Index i = 0; i < 2 * k; ++i) z[i] = parse_double(cells[static_cast<std::size_t>(i + 1)]);
    out.push_back(BeamScan::unflatten(z, sigma));
  }
  return out;
}

// ---------------------------------------------------------------------------
// FilterConfig <-> JSON

inline std::string to_string(KernelKind k) { return k == KernelKind::HessianScaled ? "hessian-scaled" : "isotropic-median"; }
inline std::string to_string(OptimizerKind o) {
  switch (o) {
    case OptimizerKind::Lbfgs: return "lbfgs";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Sgd: return "sgd";
  }
  return "sgd";
}
inline std::string to_string(PriorKind p) { return p == PriorKind::Kde ? "kde" : "gaussian"; }
inline std::string to_string(PairSource p) { return p == PairSource::Score ? "score" : "phi"; }

inline KernelKind kernel_from_string(const std::string& s) {
  if (s == "hessian-scaled") return KernelKind::HessianScaled;
  if (s == "isotropic-median") return KernelKind::IsotropicMedian;
  throw std::invalid_argument("unknown kernel '" + s + "'");
}
inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "lbfgs") return OptimizerKind::Lbfgs;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}
inline PriorKind prior_from_string(const std::string& s) {
  if (s == "gaussian") return PriorKind::Gaussian;
  if (s == "kde") return PriorKind::Kde;
  throw std::invalid_argument("unknown prior approximation '" + s + "'");
}
inline PairSource pairs_from_string(const std::string& s) {
  if (s == "phi") return PairSource::Phi;
  if (s == "score") return PairSource::Score;
  throw std::invalid_argument("unknown pair source '" + s + "'");
}

inline json to_json(const FilterConfig& c) {
  json j = {{"particles", c.particles},
            {"step_size", c.step_size},
            {"iterations", c.iterations},
            {"kernel", to_string(c.kernel)},
            {"optimizer", to_string(c.optimizer)},
            {"lbfgs_memory", c.lbfgs_memory},
            {"adam_lr", c.adam_lr},
            {"prior", to_string(c.prior)},
            {"pairs", to_string(c.pairs)},
            {"curvature_seed", c.curvature_seed},
            {"max_step", c.max_step},
            {"trust_radius", c.trust_radius},
            {"seed", c.seed}};
  json r = {{"enabled", c.reprojection.enabled}, {"start_step", c.reprojection.start_step}};
  r["threshold"] = std::isnan(c.reprojection.threshold) ? json(nullptr) : json(c.reprojection.threshold);
  j["reprojection"] = r;
  return j;
}

namespace detail {
inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
}
}  // namespace detail

/// Reads a FilterConfig, starting from `base` for any missing field.
inline FilterConfig filter_config_from_json(const json& j, FilterConfig c = {}) {
  if (!j.is_object()) throw std::invalid_argument("filter config must be an object");
  detail::reject_unknown_keys(j,
                              {"particles", "step_size", "iterations", "kernel", "optimizer", "lbfgs_memory", "adam_lr",
                               "prior", "pairs", "curvature_seed", "max_step", "trust_radius", "seed", "reprojection", "name", "type",
                               "resample"},
                              "filter config");
  if (j.contains("particles")) c.particles = j.at("particles").get<Index>();
  if (j.contains("step_size")) c.step_size = j.at("step_size").get<double>();
  if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
  if (j.contains("kernel")) c.kernel = kernel_from_string(j.at("kernel").get<std::string>());
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("lbfgs_memory")) c.lbfgs_memory = j.at("lbfgs_memory").get<std::size_t>();
  if (j.contains("adam_lr")) c.adam_lr = j.at("adam_lr").get<double>();
  if (j.contains("prior")) c.prior = prior_from_string(j.at("prior").get<std::string>());
  if (j.contains("pairs")) c.pairs = pairs_from_string(j.at("pairs").get<std::string>());
  if (j.contains("curvature_seed")) c.curvature_seed = j.at("curvature_seed").get<bool>();
  if (j.contains("max_step")) c.max_step = j.at("max_step").get<double>();
  if (j.contains("trust_radius")) c.trust_radius = j.at("trust_radius").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("reprojection")) {
    const json& r = j.at("reprojection");
    detail::reject_unknown_keys(r, {"enabled", "start_step", "threshold"}, "reprojection");
    if (r.contains("enabled")) c.reprojection.enabled = r.at("enabled").get<bool>();
    if (r.contains("start_step")) c.reprojection.start_step = r.at("start_step").get<long>();
    if (r.contains("threshold"))
      c.reprojection.threshold =
          r.at("threshold").is_null() ? std::numeric_limits<double>::quiet_NaN() : r.at("threshold").get<double>();
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// FilterState checkpoint: particle states (and weights), step index, seed,
// filter config. Optimizer histories are not stored; they reset every step.

inline json checkpoint_to_json(const FilterState& st, const FilterConfig& cfg, std::uint64_t seed) {
  json states = json::array();
  for (Index j = 0; j < st.particles.size(); ++j) {
    json row = json::array();
    for (Index i = 0; i < st.particles.dim(); ++i) row.push_back(st.particles.states(j, i));
    states.push_back(std::move(row));
  }
  json out = {{"format", "spf-checkpoint-1"}, {"step", st.step}, {"seed", seed}, {"config", to_json(cfg)},
              {"states", std::move(states)}};
  if (st.particles.weights) {
    json w = json::array();
    for (Index j = 0; j < st.particles.size(); ++j) w.push_back((*st.particles.weights)[j]);
    out["weights"] = std::move(w);
  }
  return out;
}

struct Checkpoint {
  FilterState state;
  FilterConfig config;
  std::uint64_t seed = 0;
};

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", std::string()) != "spf-checkpoint-1") throw std::invalid_argument("not an SPF checkpoint");
  Checkpoint c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.config = filter_config_from_json(j.at("config"));
  const json& rows = j.at("states");
  if (!rows.is_array() || rows.empty()) throw std::invalid_argument("checkpoint: no particles");
  const auto n = static_cast<Index>(rows.size());
  const auto d = static_cast<Index>(rows.at(0).size());
  Matrix s(n, d);
  for (Index r = 0; r < n; ++r) {
    const json& row = rows.at(static_cast<std::size_t>(r));
    if (static_cast<Index>(row.size()) != d) throw std::invalid_argument("checkpoint: ragged state rows");
    for (Index i = 0; i < d; ++i) s(r, i) = row.at(static_cast<std::size_t>(i)).get<double>();
  }
  c.state.particles = ParticleSet(s);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    if (static_cast<Index>(w.size()) != n) throw std::invalid_argument("checkpoint: weight count mismatch");
    Eigen::VectorXd wv(n);
    for (Index r = 0; r < n; ++r) wv[r] = w.at(static_cast<std::size_t>(r)).get<double>();
    c.state.particles.weights = wv;
  }
  c.state.particles.validate();
  c.state.step = j.at("step").get<long>();
  return c;
}

}  // namespace spf
