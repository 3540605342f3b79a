#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace schedev {

enum class ToySupport { Discrete, Continuous };

struct ToyAnchor {
  double z = 0.0;
  double x = 0.0;
};

// Scalar conditional mixture: anchors are (z, x) component centers, one mode
// at z = 0 and two at z = 1 under the defaults.
struct ToySpec {
  ToySupport support = ToySupport::Discrete;
  std::vector<ToyAnchor> anchors = {{0.0, -1.0}, {1.0, 0.0}, {1.0, 1.0}};
  double noise_sigma = 0.1;
  int count = 0;

  void validate() const;
};

struct ToySample {
  double z = 0.0;
  double x = 0.0;
};

// Per draw: uniform anchor; Discrete jitters only x, Continuous jitters both
// coordinates independently.
std::vector<ToySample> sample_toy(const ToySpec& spec, std::mt19937_64& rng);

struct MazeCell {
  int row = 0;
  int col = 0;
  bool operator==(const MazeCell&) const = default;
};

// Rectangular wall grid with a single goal cell. Construction validates that
// every open cell can reach the goal.
class MazeGrid {
 public:
  // A default grid is empty; parse or load one before use.
  MazeGrid() = default;
  // '#' wall, '.' open, 'G' goal; one row per line.
  static MazeGrid from_text(const std::string& text);
  static MazeGrid load(const std::string& path);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool in_bounds(MazeCell c) const {
    return c.row >= 0 && c.row < rows_ && c.col >= 0 && c.col < cols_;
  }
  bool open(MazeCell c) const { return in_bounds(c) && open_[c.row * cols_ + c.col]; }
  MazeCell goal() const { return goal_; }
  std::vector<MazeCell> open_cells() const;
  // Center of a cell in trajectory coordinates: (col + 1/2, row + 1/2).
  std::array<double, 2> center(MazeCell c) const;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<char> open_;
  MazeCell goal_;
};

struct MazePath {
  std::vector<MazeCell> cells;  // start first, goal last
  int length() const { return static_cast<int>(cells.size()) - 1; }
};

// All simple paths from start to the goal, shortest first (ties keep
// discovery order). The cap guards against pathological grids.
std::vector<MazePath> enumerate_maze_paths(const MazeGrid& grid, MazeCell start,
                                           std::size_t max_paths = 200000);

// Start-column weights e^{-c/2} + e^{-(cols-1-c)/2}, unnormalized.
std::vector<double> maze_column_weights(int cols);

struct MazeSpec {
  MazeGrid grid;
  int path_points = 64;
  double bezier_noise = 0.04;  // variance of the control-point perturbation

  void validate() const;
};

struct MazeTrajectory {
  std::array<double, 2> z{};     // start cell center
  std::vector<double> points;    // path_points rows of (x, y)
};

// Caches path enumerations per start cell; after warm_up the cache is
// read-only and sampling is safe to share across threads with per-thread rngs.
class MazeSampler {
 public:
  explicit MazeSampler(MazeSpec spec);

  const MazeSpec& spec() const { return spec_; }
  void warm_up();
  const std::vector<MazePath>& paths_from(MazeCell start);
  MazeTrajectory sample(std::mt19937_64& rng);

 private:
  MazeSpec spec_;
  std::vector<double> column_cdf_;
  std::vector<std::vector<int>> open_rows_;  // per column
  std::vector<std::vector<MazePath>> path_cache_;
  std::vector<char> cached_;
};

// One-shot convenience wrapper around MazeSampler.
MazeTrajectory sample_maze_trajectory(const MazeSpec& spec, std::mt19937_64& rng);

// Single cubic segment by de Casteljau; t = 0 and t = 1 return the exact
// endpoint control points.
std::array<double, 2> cubic_bezier_point(const std::array<double, 2>& p0,
                                         const std::array<double, 2>& p1,
                                         const std::array<double, 2>& p2,
                                         const std::array<double, 2>& p3, double t);

// C1 piecewise-cubic curve through the control points (Catmull-Rom tangents),
// resampled to out_points at uniform arc length.
std::vector<std::array<double, 2>> composite_bezier_curve(
    const std::vector<std::array<double, 2>>& controls, int out_points);

}  // namespace schedev
