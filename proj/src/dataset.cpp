#include "schedev/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "schedev/errors.hpp"
#include "schedev/rng.hpp"

namespace schedev {

void ToySpec::validate() const {
  if (anchors.empty()) throw std::invalid_argument("toy spec needs at least one anchor");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be non-negative");
  if (count < 0) throw std::invalid_argument("count must be non-negative");
}

std::vector<ToySample> sample_toy(const ToySpec& spec, std::mt19937_64& rng) {
  spec.validate();
  std::vector<ToySample> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    const ToyAnchor& a = spec.anchors[rng() % spec.anchors.size()];
    ToySample s;
    s.z = a.z;
    if (spec.support == ToySupport::Continuous) s.z += spec.noise_sigma * draw_normal(rng);
    s.x = a.x + spec.noise_sigma * draw_normal(rng);
    out.push_back(s);
  }
  return out;
}

MazeGrid MazeGrid::from_text(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::invalid_argument("maze text is empty");

  MazeGrid grid;
  grid.rows_ = static_cast<int>(lines.size());
  grid.cols_ = static_cast<int>(lines.front().size());
  grid.open_.assign(static_cast<std::size_t>(grid.rows_) * grid.cols_, 0);
  int goals = 0;
  for (int r = 0; r < grid.rows_; ++r) {
    if (static_cast<int>(lines[r].size()) != grid.cols_)
      throw std::invalid_argument("maze rows have unequal lengths");
    for (int c = 0; c < grid.cols_; ++c) {
      char ch = lines[r][c];
      if (ch == '#') continue;
      if (ch == 'G') {
        ++goals;
        grid.goal_ = {r, c};
      } else if (ch != '.') {
        throw std::invalid_argument(std::string("unexpected maze character '") + ch + "'");
      }
      grid.open_[r * grid.cols_ + c] = 1;
    }
  }
  if (goals != 1) throw std::invalid_argument("maze must contain exactly one goal cell");

  // Every open cell must reach the goal.
  std::vector<char> seen(grid.open_.size(), 0);
  std::deque<MazeCell> frontier{grid.goal_};
  seen[grid.goal_.row * grid.cols_ + grid.goal_.col] = 1;
  while (!frontier.empty()) {
    MazeCell cur = frontier.front();
    frontier.pop_front();
    const MazeCell steps[4] = {{cur.row - 1, cur.col},
                               {cur.row + 1, cur.col},
                               {cur.row, cur.col - 1},
                               {cur.row, cur.col + 1}};
    for (MazeCell next : steps) {
      if (!grid.open(next)) continue;
      char& mark = seen[next.row * grid.cols_ + next.col];
      if (mark) continue;
      mark = 1;
      frontier.push_back(next);
    }
  }
  for (int r = 0; r < grid.rows_; ++r)
    for (int c = 0; c < grid.cols_; ++c)
      if (grid.open_[r * grid.cols_ + c] && !seen[r * grid.cols_ + c])
        throw ConnectivityError("open cell (" + std::to_string(r) + ", " + std::to_string(c) +
                                ") cannot reach the goal");
  return grid;
}

MazeGrid MazeGrid::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open maze file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::vector<MazeCell> MazeGrid::open_cells() const {
  std::vector<MazeCell> cells;
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c)
      if (open_[r * cols_ + c]) cells.push_back({r, c});
  return cells;
}

std::array<double, 2> MazeGrid::center(MazeCell c) const {
  return {c.col + 0.5, c.row + 0.5};
}

namespace {

void extend_paths(const MazeGrid& grid, MazeCell cur, std::vector<char>& visited,
                  std::vector<MazeCell>& trail, std::vector<MazePath>& out,
                  std::size_t max_paths) {
  if (cur == grid.goal()) {
    if (out.size() >= max_paths)
      throw std::runtime_error("maze path enumeration exceeded " + std::to_string(max_paths) +
                               " paths");
    out.push_back({trail});
    return;
  }
  const MazeCell steps[4] = {{cur.row - 1, cur.col},
                             {cur.row + 1, cur.col},
                             {cur.row, cur.col - 1},
                             {cur.row, cur.col + 1}};
  for (MazeCell next : steps) {
    if (!grid.open(next)) continue;
    char& mark = visited[next.row * grid.cols() + next.col];
    if (mark) continue;
    mark = 1;
    trail.push_back(next);
    extend_paths(grid, next, visited, trail, out, max_paths);
    trail.pop_back();
    mark = 0;
  }
}

}  // namespace

std::vector<MazePath> enumerate_maze_paths(const MazeGrid& grid, MazeCell start,
                                           std::size_t max_paths) {
  if (!grid.open(start))
    throw std::invalid_argument("start cell (" + std::to_string(start.row) + ", " +
                                std::to_string(start.col) + ") is not open");
  std::vector<char> visited(static_cast<std::size_t>(grid.rows()) * grid.cols(), 0);
  visited[start.row * grid.cols() + start.col] = 1;
  std::vector<MazeCell> trail{start};
  std::vector<MazePath> out;
  extend_paths(grid, start, visited, trail, out, max_paths);
  if (out.empty())
    throw ConnectivityError("no path from (" + std::to_string(start.row) + ", " +
                            std::to_string(start.col) + ") to the goal");
  std::stable_sort(out.begin(), out.end(),
                   [](const MazePath& a, const MazePath& b) { return a.length() < b.length(); });
  return out;
}

std::vector<double> maze_column_weights(int cols) {
  std::vector<double> w(cols);
  for (int c = 0; c < cols; ++c)
    w[c] = std::exp(-0.5 * c) + std::exp(-0.5 * (cols - 1 - c));
  return w;
}

void MazeSpec::validate() const {
  if (path_points < 1) throw std::invalid_argument("path_points must be at least 1");
  if (bezier_noise < 0.0) throw std::invalid_argument("bezier_noise must be non-negative");
}

MazeSampler::MazeSampler(MazeSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const MazeGrid& grid = spec_.grid;
  if (grid.rows() == 0) throw std::invalid_argument("maze sampler needs a loaded grid");

  open_rows_.resize(grid.cols());
  for (int c = 0; c < grid.cols(); ++c)
    for (int r = 0; r < grid.rows(); ++r)
      if (grid.open({r, c})) open_rows_[c].push_back(r);

  // Columns without open cells get zero mass; the stated law is otherwise
  // preserved exactly on the column marginal.
  auto weights = maze_column_weights(grid.cols());
  double total = 0.0;
  column_cdf_.resize(grid.cols());
  for (int c = 0; c < grid.cols(); ++c) {
    if (open_rows_[c].empty()) weights[c] = 0.0;
    total += weights[c];
    column_cdf_[c] = total;
  }
  if (total <= 0.0) throw std::invalid_argument("maze has no open cells to start from");
  for (double& v : column_cdf_) v /= total;

  path_cache_.resize(static_cast<std::size_t>(grid.rows()) * grid.cols());
  cached_.assign(path_cache_.size(), 0);
}

void MazeSampler::warm_up() {
  for (MazeCell cell : spec_.grid.open_cells()) paths_from(cell);
}

const std::vector<MazePath>& MazeSampler::paths_from(MazeCell start) {
  std::size_t idx = static_cast<std::size_t>(start.row) * spec_.grid.cols() + start.col;
  if (!cached_[idx]) {
    path_cache_[idx] = enumerate_maze_paths(spec_.grid, start);
    cached_[idx] = 1;
  }
  return path_cache_[idx];
}

MazeTrajectory MazeSampler::sample(std::mt19937_64& rng) {
  double u = draw_uniform(rng);
  int col = static_cast<int>(std::lower_bound(column_cdf_.begin(), column_cdf_.end(), u) -
                             column_cdf_.begin());
  col = std::min(col, static_cast<int>(column_cdf_.size()) - 1);
  // Zero-weight (empty) columns share a cdf value with their predecessor, so
  // a tie can land on one; slide to the owning non-empty column.
  while (open_rows_[col].empty()) ++col;
  const auto& rows = open_rows_[col];
  MazeCell start{rows[rng() % rows.size()], col};

  const auto& paths = paths_from(start);
  int shortest = paths.front().length();
  double total = 0.0;
  std::vector<double> cdf(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    total += std::exp(-static_cast<double>(paths[i].length() - shortest));
    cdf[i] = total;
  }
  double up = draw_uniform(rng) * total;
  std::size_t pick = std::lower_bound(cdf.begin(), cdf.end(), up) - cdf.begin();
  pick = std::min(pick, paths.size() - 1);

  double noise = std::sqrt(spec_.bezier_noise);
  std::vector<std::array<double, 2>> controls;
  controls.reserve(paths[pick].cells.size());
  for (MazeCell cell : paths[pick].cells) {
    auto p = spec_.grid.center(cell);
    p[0] += noise * draw_normal(rng);
    p[1] += noise * draw_normal(rng);
    controls.push_back(p);
  }

  MazeTrajectory traj;
  traj.z = spec_.grid.center(start);
  auto curve = composite_bezier_curve(controls, spec_.path_points);
  traj.points.reserve(2 * curve.size());
  for (const auto& p : curve) {
    traj.points.push_back(p[0]);
    traj.points.push_back(p[1]);
  }
  return traj;
}

MazeTrajectory sample_maze_trajectory(const MazeSpec& spec, std::mt19937_64& rng) {
  MazeSampler sampler(spec);
  return sampler.sample(rng);
}

namespace {

// (1 - t) a + t b so that t = 0 and t = 1 reproduce the endpoints exactly.
std::array<double, 2> lerp(const std::array<double, 2>& a, const std::array<double, 2>& b,
                           double t) {
  return {(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]};
}

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace

std::array<double, 2> cubic_bezier_point(const std::array<double, 2>& p0,
                                         const std::array<double, 2>& p1,
                                         const std::array<double, 2>& p2,
                                         const std::array<double, 2>& p3, double t) {
  auto a = lerp(p0, p1, t), b = lerp(p1, p2, t), c = lerp(p2, p3, t);
  auto d = lerp(a, b, t), e = lerp(b, c, t);
  return lerp(d, e, t);
}

std::vector<std::array<double, 2>> composite_bezier_curve(
    const std::vector<std::array<double, 2>>& controls, int out_points) {
  if (controls.empty()) throw std::invalid_argument("curve needs at least one control point");
  if (out_points < 1) throw std::invalid_argument("out_points must be at least 1");
  std::size_t m = controls.size();
  if (m == 1 || out_points == 1)
    return std::vector<std::array<double, 2>>(out_points, controls.front());

  // Catmull-Rom tangents with one-sided ends; each span becomes a cubic
  // Bezier whose inner handles are a third of the tangent.
  std::vector<std::array<double, 2>> tangents(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& prev = controls[i == 0 ? 0 : i - 1];
    const auto& next = controls[i + 1 == m ? m - 1 : i + 1];
    double scale = (i == 0 || i + 1 == m) ? 1.0 : 0.5;
    tangents[i] = {scale * (next[0] - prev[0]), scale * (next[1] - prev[1])};
  }
  auto segment_point = [&](std::size_t seg, double t) {
    const auto& a = controls[seg];
    const auto& b = controls[seg + 1];
    std::array<double, 2> h1{a[0] + tangents[seg][0] / 3.0, a[1] + tangents[seg][1] / 3.0};
    std::array<double, 2> h2{b[0] - tangents[seg + 1][0] / 3.0, b[1] - tangents[seg + 1][1] / 3.0};
    return cubic_bezier_point(a, h1, h2, b, t);
  };

  // Dense parameter table for arc-length inversion.
  const int sub = 32;
  std::vector<double> cum{0.0};
  std::vector<std::pair<std::size_t, double>> params{{0, 0.0}};
  auto last = segment_point(0, 0.0);
  for (std::size_t seg = 0; seg + 1 < m; ++seg) {
    for (int k = 1; k <= sub; ++k) {
      double t = static_cast<double>(k) / sub;
      auto p = segment_point(seg, t);
      cum.push_back(cum.back() + dist(last, p));
      params.emplace_back(seg, t);
      last = p;
    }
  }
  double total = cum.back();
  if (total == 0.0)
    return std::vector<std::array<double, 2>>(out_points, controls.front());

  std::vector<std::array<double, 2>> out;
  out.reserve(out_points);
  for (int k = 0; k < out_points; ++k) {
    if (k == 0) {
      out.push_back(segment_point(0, 0.0));
      continue;
    }
    if (k == out_points - 1) {
      out.push_back(segment_point(m - 2, 1.0));
      continue;
    }
    double target = total * k / (out_points - 1);
    std::size_t hi = std::lower_bound(cum.begin(), cum.end(), target) - cum.begin();
    hi = std::min(std::max<std::size_t>(hi, 1), cum.size() - 1);
    double lo_len = cum[hi - 1], hi_len = cum[hi];
    double frac = hi_len > lo_len ? (target - lo_len) / (hi_len - lo_len) : 0.0;
    auto [seg_lo, t_lo] = params[hi - 1];
    auto [seg_hi, t_hi] = params[hi];
    // Dense knots only cross a segment boundary at t = 0/1, where the curve
    // is continuous, so interpolating t within the later segment is safe.
    double t = seg_lo == seg_hi ? t_lo + frac * (t_hi - t_lo) : frac * t_hi;
    out.push_back(segment_point(seg_hi, t));
  }
  return out;
}

}  // namespace schedev
