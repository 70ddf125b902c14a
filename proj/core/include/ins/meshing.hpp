#pragma once

#include <array>
#include <functional>
#include <vector>

#include "ins/geometry.hpp"
#include "ins/occupancy.hpp"

namespace ins::meshing {

/// Scalar samples on the vertices of a regular grid; x varies fastest.
struct GridField {
  std::array<std::size_t, 3> cells{};  // cells per axis; vertices = cells + 1
  Aabb box;
  std::vector<Real> values;

  std::size_t vertex_count(int axis) const { return cells[static_cast<std::size_t>(axis)] + 1; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + vertex_count(0) * (j + vertex_count(1) * k);
  }
  Real at(std::size_t i, std::size_t j, std::size_t k) const { return values[index(i, j, k)]; }
  Vec3 spacing() const;
  Point3 vertex(std::size_t i, std::size_t j, std::size_t k) const;
  /// Trilinear interpolation; points outside the box are clamped.
  Real interpolate(const Point3& p) const;
};

/// Evaluates a batch (3 x N) of points into N values.
using BatchField = std::function<RowVector(const Matrix&)>;

/// Samples `field` on a res^3-cell grid over `box` (res >= 2).
GridField sample_grid(const BatchField& field, const Aabb& box, std::size_t res);
GridField sample_grid(const OccupancyNet& occupancy, const Aabb& box, std::size_t res);

/// Marching cubes with linear edge interpolation. Values > iso are inside;
/// triangles are oriented with normals pointing toward lower values. Shared
/// edge vertices are merged, so closed level sets give watertight meshes.
TriMesh marching_cubes(const GridField& grid, Real iso);

/// Number of non-empty cube configurations in the generated case table
/// (254 for a complete table).
std::size_t case_table_nonempty_count();

}  // namespace ins::meshing
