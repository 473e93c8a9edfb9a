#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spf/core.hpp"
#include "spf/models.hpp"

namespace spf {

/// Occupancy grid with a precomputed Euclidean distance field.
///
/// Cell (cx, cy) covers [cx*res, (cx+1)*res) x [cy*res, (cy+1)*res); its
/// center is the lattice node the distance field is sampled on. D is the
/// distance from a cell center to the nearest occupied cell center, and is
/// bilinearly interpolated between centers. Points beyond the lattice take
/// the clamped field value plus their exterior offset.
class GridMap2D {
 public:
  struct FieldSample {
    double distance = 0.0;
    Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
    bool outside = false;
  };

  GridMap2D(int width, int height, double resolution, std::vector<std::uint8_t> occupancy)
      : w_(width), h_(height), res_(resolution), occ_(std::move(occupancy)) {
    if (w_ < 2 || h_ < 2) throw std::invalid_argument("grid map must be at least 2x2 cells");
    if (!(res_ > 0.0)) throw std::invalid_argument("grid resolution must be positive");
    if (occ_.size() != static_cast<std::size_t>(w_) * static_cast<std::size_t>(h_))
      throw std::invalid_argument("occupancy size does not match width*height");
    if (std::none_of(occ_.begin(), occ_.end(), [](std::uint8_t v) { return v != 0; }))
      throw std::invalid_argument("grid map has no occupied cells");
    compute_distance_transform();
  }

  /// Parse the text format: "width height resolution", then `height` rows of
  /// `width` characters, '#' occupied and '.' free. The first row is the top
  /// of the map (largest y).
  static GridMap2D parse(std::istream& in) {
    int w = 0, h = 0;
    double res = 0.0;
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("map file: missing header line");
    std::istringstream hs(header);
    if (!(hs >> w >> h >> res)) throw std::runtime_error("map file: header must be 'width height resolution'");
    std::vector<std::uint8_t> occ(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
    for (int row = 0; row < h; ++row) {
      std::string line;
      if (!std::getline(in, line)) throw std::runtime_error("map file: expected " + std::to_string(h) + " rows");
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (static_cast<int>(line.size()) != w)
        throw std::runtime_error("map file: row " + std::to_string(row) + " has wrong width");
      const int cy = h - 1 - row;
      for (int cx = 0; cx < w; ++cx) {
        const char c = line[static_cast<std::size_t>(cx)];
        if (c != '#' && c != '.') throw std::runtime_error("map file: unexpected character");
        occ[static_cast<std::size_t>(cy) * w + cx] = (c == '#') ? 1 : 0;
      }
    }
    return GridMap2D(w, h, res, std::move(occ));
  }

  static GridMap2D load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open map file: " + path);
    return parse(in);
  }

  std::string to_text() const {
    std::ostringstream os;
    os << w_ << ' ' << h_ << ' ' << res_ << '\n';
    for (int cy = h_ - 1; cy >= 0; --cy) {
      for (int cx = 0; cx < w_; ++cx) os << (occupied(cx, cy) ? '#' : '.');
      os << '\n';
    }
    return os.str();
  }

  int width() const { return w_; }
  int height() const { return h_; }
  double resolution() const { return res_; }
  double extent_x() const { return w_ * res_; }
  double extent_y() const { return h_ * res_; }

  bool in_cell_bounds(int cx, int cy) const { return cx >= 0 && cy >= 0 && cx < w_ && cy < h_; }
  bool occupied(int cx, int cy) const { return occ_[idx(cx, cy)] != 0; }

  /// Distance at a cell center (meters).
  double cell_distance(int cx, int cy) const { return dist_[idx(cx, cy)]; }

  Eigen::Vector2d cell_center(int cx, int cy) const { return {(cx + 0.5) * res_, (cy + 0.5) * res_}; }

  /// Cell containing a point; indices may be out of range.
  std::pair<int, int> cell_of(const Eigen::Vector2d& p) const {
    return {static_cast<int>(std::floor(p.x() / res_)), static_cast<int>(std::floor(p.y() / res_))};
  }

  bool point_occupied(const Eigen::Vector2d& p) const {
    auto [cx, cy] = cell_of(p);
    return in_cell_bounds(cx, cy) && occupied(cx, cy);
  }

  bool point_inside(const Eigen::Vector2d& p) const {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() < extent_x() && p.y() < extent_y();
  }

  /// Bilinear distance field and its gradient at an arbitrary point.
  FieldSample sample(const Eigen::Vector2d& p) const {
    double gx = p.x() / res_ - 0.5;
    double gy = p.y() / res_ - 0.5;
    const double max_x = w_ - 1, max_y = h_ - 1;
    FieldSample out;
    Eigen::Vector2d exterior = Eigen::Vector2d::Zero();
    bool clamp_x = false, clamp_y = false;
    if (gx < 0.0) { exterior.x() = gx * res_; gx = 0.0; clamp_x = true; }
    if (gx > max_x) { exterior.x() = (gx - max_x) * res_; gx = max_x; clamp_x = true; }
    if (gy < 0.0) { exterior.y() = gy * res_; gy = 0.0; clamp_y = true; }
    if (gy > max_y) { exterior.y() = (gy - max_y) * res_; gy = max_y; clamp_y = true; }

    const int i0 = std::min(static_cast<int>(std::floor(gx)), w_ - 2);
    const int j0 = std::min(static_cast<int>(std::floor(gy)), h_ - 2);
    const double fx = gx - i0, fy = gy - j0;
    const double d00 = cell_distance(i0, j0), d10 = cell_distance(i0 + 1, j0);
    const double d01 = cell_distance(i0, j0 + 1), d11 = cell_distance(i0 + 1, j0 + 1);
    out.distance = (1 - fx) * (1 - fy) * d00 + fx * (1 - fy) * d10 + (1 - fx) * fy * d01 + fx * fy * d11;
    out.gradient.x() = ((1 - fy) * (d10 - d00) + fy * (d11 - d01)) / res_;
    out.gradient.y() = ((1 - fx) * (d01 - d00) + fx * (d11 - d10)) / res_;

    if (clamp_x || clamp_y) {
      out.outside = true;
      const double ext = exterior.norm();
      out.distance += ext;
      if (clamp_x) out.gradient.x() = 0.0;
      if (clamp_y) out.gradient.y() = 0.0;
      if (ext > 0.0) out.gradient += exterior / ext;
    }
    return out;
  }

  /// Center of the occupied cell nearest to the point (clamped into the map).
  Eigen::Vector2d nearest_occupied(const Eigen::Vector2d& p) const {
    int cx = std::clamp(static_cast<int>(std::floor(p.x() / res_)), 0, w_ - 1);
    int cy = std::clamp(static_cast<int>(std::floor(p.y() / res_)), 0, h_ - 1);
    const int site = nearest_[idx(cx, cy)];
    return cell_center(site % w_, site / w_);
  }

  /// First occupied cell along a ray, returned as its center; nullopt when
  /// the ray leaves the map or exceeds max_range first.
  std::optional<Eigen::Vector2d> cast_ray(const Eigen::Vector2d& origin, double angle, double max_range) const {
    const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
    // Amanatides-Woo grid traversal.
    int cx = static_cast<int>(std::floor(origin.x() / res_));
    int cy = static_cast<int>(std::floor(origin.y() / res_));
    if (!in_cell_bounds(cx, cy)) return std::nullopt;
    const int step_x = dir.x() > 0 ? 1 : -1;
    const int step_y = dir.y() > 0 ? 1 : -1;
    const double inf = std::numeric_limits<double>::infinity();
    const double next_x = (cx + (step_x > 0 ? 1 : 0)) * res_;
    const double next_y = (cy + (step_y > 0 ? 1 : 0)) * res_;
    double t_max_x = dir.x() != 0.0 ? (next_x - origin.x()) / dir.x() : inf;
    double t_max_y = dir.y() != 0.0 ? (next_y - origin.y()) / dir.y() : inf;
    const double t_dx = dir.x() != 0.0 ? res_ / std::abs(dir.x()) : inf;
    const double t_dy = dir.y() != 0.0 ? res_ / std::abs(dir.y()) : inf;
    double t = 0.0;
    while (t <= max_range) {
      if (occupied(cx, cy)) return cell_center(cx, cy);
      if (t_max_x < t_max_y) {
        t = t_max_x;
        t_max_x += t_dx;
        cx += step_x;
      } else {
        t = t_max_y;
        t_max_y += t_dy;
        cy += step_y;
      }
      if (!in_cell_bounds(cx, cy)) return std::nullopt;
    }
    return std::nullopt;
  }

 private:
  std::size_t idx(int cx, int cy) const { return static_cast<std::size_t>(cy) * w_ + cx; }

  // Separable exact squared EDT (lower envelope of parabolas) with the
  // index of the nearest site carried along.
  static void edt_1d(const std::vector<double>& f, const std::vector<int>& site_in, std::vector<double>& d,
                     std::vector<int>& site_out) {
    const int n = static_cast<int>(f.size());
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = -1;
    const double inf = std::numeric_limits<double>::infinity();
    for (int q = 0; q < n; ++q) {
      if (f[q] == inf) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      const auto intersect = [&](int p) {
        return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      };
      double s = intersect(v[k]);
      while (s <= z[k]) {
        --k;
        s = intersect(v[k]);
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    if (k < 0) {
      std::fill(d.begin(), d.end(), inf);
      std::fill(site_out.begin(), site_out.end(), -1);
      return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const double dq = q - v[j];
      d[q] = dq * dq + f[v[j]];
      site_out[q] = site_in[v[j]];
    }
  }

  void compute_distance_transform() {
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t n = occ_.size();
    std::vector<double> sq(n, inf);
    std::vector<int> site(n, -1);
    // Columns first (vary y), then rows (vary x).
    {
      std::vector<double> f(h_), d(h_);
      std::vector<int> si(h_), so(h_);
      for (int cx = 0; cx < w_; ++cx) {
        for (int cy = 0; cy < h_; ++cy) {
          f[cy] = occupied(cx, cy) ? 0.0 : inf;
          si[cy] = static_cast<int>(idx(cx, cy));
        }
        edt_1d(f, si, d, so);
        for (int cy = 0; cy < h_; ++cy) {
          sq[idx(cx, cy)] = d[cy];
          site[idx(cx, cy)] = so[cy];
        }
      }
    }
    {
      std::vector<double> f(w_), d(w_);
      std::vector<int> si(w_), so(w_);
      for (int cy = 0; cy < h_; ++cy) {
        for (int cx = 0; cx < w_; ++cx) {
          f[cx] = sq[idx(cx, cy)];
          si[cx] = site[idx(cx, cy)];
        }
        edt_1d(f, si, d, so);
        for (int cx = 0; cx < w_; ++cx) {
          sq[idx(cx, cy)] = d[cx];
          site[idx(cx, cy)] = so[cx];
        }
      }
    }
    dist_.resize(n);
    nearest_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      dist_[i] = std::sqrt(sq[i]) * res_;
      nearest_[i] = site[i];
    }
  }

  int w_, h_;
  double res_;
  std::vector<std::uint8_t> occ_;
  std::vector<double> dist_;
  std::vector<int> nearest_;
};

// ---------------------------------------------------------------------------

/// K beam endpoints in the sensor frame plus the per-beam noise std.
struct BeamScan {
  std::vector<Eigen::Vector2d> endpoints;
  double sigma = 0.1;

  Index size() const { return static_cast<Index>(endpoints.size()); }

  Observation flatten() const {
    Observation z(2 * size());
    for (Index i = 0; i < size(); ++i) z.segment<2>(2 * i) = endpoints[static_cast<std::size_t>(i)];
    return z;
  }

  static BeamScan unflatten(const Observation& z, double sigma) {
    if (z.size() % 2 != 0) throw std::invalid_argument("beam observation must have an even length");
    BeamScan s;
    s.sigma = sigma;
    for (Index i = 0; i < z.size() / 2; ++i) s.endpoints.emplace_back(z[2 * i], z[2 * i + 1]);
    return s;
  }
};

/// Rigid planar transform of a sensor-frame point by the pose (px, py, theta).
inline Eigen::Vector2d transform_point(const StateVector& pose, const Eigen::Vector2d& b) {
  const double c = std::cos(pose[2]), s = std::sin(pose[2]);
  return {pose[0] + c * b.x() - s * b.y(), pose[1] + s * b.x() + c * b.y()};
}

/// d(T_x b)/d theta.
inline Eigen::Vector2d transform_point_dtheta(const StateVector& pose, const Eigen::Vector2d& b) {
  const double c = std::cos(pose[2]), s = std::sin(pose[2]);
  return {-s * b.x() - c * b.y(), c * b.x() - s * b.y()};
}

/// World-frame target points for each beam (one correspondence per beam).
struct BeamMatches {
  std::vector<Eigen::Vector2d> targets;
};

struct BeamEvaluation {
  double log_likelihood = 0.0;
  Eigen::Vector3d score = Eigen::Vector3d::Zero();
  int outside_beams = 0;
};

/// log p(z | x) = -1/(2 sigma^2) sum_i D(T_x b_i)^2 with its pose gradient.
inline BeamEvaluation beam_loglik_score(const GridMap2D& map, const BeamScan& scan, const StateVector& pose) {
  if (pose.size() != 3) throw std::invalid_argument("beam model expects a planar pose (px, py, theta)");
  const double inv_var = 1.0 / (scan.sigma * scan.sigma);
  BeamEvaluation out;
  for (const auto& b : scan.endpoints) {
    const Eigen::Vector2d w = transform_point(pose, b);
    const auto f = map.sample(w);
    if (f.outside) ++out.outside_beams;
    out.log_likelihood -= 0.5 * f.distance * f.distance * inv_var;
    const double scale = -f.distance * inv_var;
    out.score.head<2>() += scale * f.gradient;
    out.score[2] += scale * f.gradient.dot(transform_point_dtheta(pose, b));
  }
  return out;
}

/// Same likelihood form, with each beam's nearest neighbor replaced by a
/// fixed target point.
inline BeamEvaluation beam_loglik_score_matched(const BeamScan& scan, const StateVector& pose,
                                                const BeamMatches& matches) {
  if (matches.targets.size() != scan.endpoints.size())
    throw std::invalid_argument("one match per beam required");
  const double inv_var = 1.0 / (scan.sigma * scan.sigma);
  BeamEvaluation out;
  for (std::size_t i = 0; i < scan.endpoints.size(); ++i) {
    const Eigen::Vector2d r = transform_point(pose, scan.endpoints[i]) - matches.targets[i];
    out.log_likelihood -= 0.5 * r.squaredNorm() * inv_var;
    out.score.head<2>() -= r * inv_var;
    out.score[2] -= r.dot(transform_point_dtheta(pose, scan.endpoints[i])) * inv_var;
  }
  return out;
}

/// Beam-endpoint observation model on a grid map. The observation vector is
/// the flattened scan (b1x, b1y, b2x, b2y, ...).
class BeamModel : public ObservationModel {
 public:
  BeamModel(const GridMap2D& map, double sigma) : map_(&map), sigma_(sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("beam sigma must be positive");
  }

  const GridMap2D& map() const { return *map_; }
  double sigma() const { return sigma_; }
  Index state_dim() const override { return 3; }

  BeamScan scan(const Observation& z) const { return BeamScan::unflatten(z, sigma_); }

  BeamEvaluation evaluate_full(const StateVector& x, const Observation& z) const {
    return beam_loglik_score(*map_, scan(z), x);
  }

  LogLikScore evaluate(const StateVector& x, const Observation& z) const override {
    const auto e = evaluate_full(x, z);
    return {e.log_likelihood, e.score};
  }

  /// Correspondences the pose produces: nearest occupied cell for each beam.
  /// Beams falling outside the map have no match.
  std::pair<BeamMatches, int> matches(const StateVector& x, const Observation& z) const {
    const BeamScan s = scan(z);
    BeamMatches m;
    int matched = 0;
    for (const auto& b : s.endpoints) {
      const Eigen::Vector2d w = transform_point(x, b);
      if (map_->point_inside(w)) ++matched;
      m.targets.push_back(map_->nearest_occupied(w));
    }
    return {m, matched};
  }

  LogLikScore evaluate_matched(const StateVector& x, const Observation& z, const BeamMatches& m) const {
    const auto e = beam_loglik_score_matched(scan(z), x, m);
    return {e.log_likelihood, e.score};
  }

  /// Gauss-Newton curvature sum_i J_i^T g_i g_i^T J_i / sigma^2.
  bool has_curvature() const override { return true; }
  Matrix curvature(const StateVector& x, const Observation& z) const override {
    const BeamScan s = scan(z);
    Matrix c = Matrix::Zero(3, 3);
    for (const auto& b : s.endpoints) {
      const auto f = map_->sample(transform_point(x, b));
      Eigen::Vector3d j(f.gradient.x(), f.gradient.y(), f.gradient.dot(transform_point_dtheta(x, b)));
      c += j * j.transpose();
    }
    return c / (sigma_ * sigma_);
  }

 private:
  const GridMap2D* map_;
  double sigma_;
};

}  // namespace spf
