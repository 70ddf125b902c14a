#include "ins/meshing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "ins/error.hpp"
#include "ins/parallel.hpp"

namespace ins::meshing {

Vec3 GridField::spacing() const {
  const Vec3 ext = box.extent();
  return {ext.x() / static_cast<Real>(cells[0]), ext.y() / static_cast<Real>(cells[1]),
          ext.z() / static_cast<Real>(cells[2])};
}

Point3 GridField::vertex(std::size_t i, std::size_t j, std::size_t k) const {
  const Vec3 h = spacing();
  return box.min + Vec3(static_cast<Real>(i) * h.x(), static_cast<Real>(j) * h.y(),
                        static_cast<Real>(k) * h.z());
}

Real GridField::interpolate(const Point3& p) const {
  const Vec3 h = spacing();
  std::array<std::size_t, 3> base{};
  std::array<Real, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const Real u = std::clamp((p(a) - box.min(a)) / h(a), Real(0),
                              static_cast<Real>(cells[static_cast<std::size_t>(a)]));
    auto b = static_cast<std::size_t>(std::floor(u));
    b = std::min(b, cells[static_cast<std::size_t>(a)] - 1);
    base[static_cast<std::size_t>(a)] = b;
    frac[static_cast<std::size_t>(a)] = u - static_cast<Real>(b);
  }
  Real out = 0;
  for (int c = 0; c < 8; ++c) {
    const std::size_t dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const Real wgt = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) *
                     (dz ? frac[2] : 1 - frac[2]);
    if (wgt != 0) out += wgt * at(base[0] + dx, base[1] + dy, base[2] + dz);
  }
  return out;
}

GridField sample_grid(const BatchField& field, const Aabb& box, std::size_t res) {
  if (res < 2) throw UsageError("grid resolution must be at least 2");
  GridField g;
  g.cells = {res, res, res};
  g.box = box;
  const std::size_t nv = res + 1;
  g.values.resize(nv * nv * nv);
  // One z-slab per task.
  parallel_for(nv, 1, [&](std::size_t k0, std::size_t k1) {
    Matrix pts(3, static_cast<Eigen::Index>(nv * nv));
    for (std::size_t k = k0; k < k1; ++k) {
      for (std::size_t j = 0; j < nv; ++j)
        for (std::size_t i = 0; i < nv; ++i)
          pts.col(static_cast<Eigen::Index>(i + nv * j)) = g.vertex(i, j, k);
      const RowVector v = field(pts);
      std::copy(v.data(), v.data() + v.size(), g.values.begin() + static_cast<std::ptrdiff_t>(nv * nv * k));
    }
  });
  return g;
}

GridField sample_grid(const OccupancyNet& occupancy, const Aabb& box, std::size_t res) {
  return sample_grid([&occupancy](const Matrix& pts) { return occupancy.occupancies(pts); }, box,
                     res);
}

namespace {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
Vec3 corner_offset(int c) {
  return {static_cast<Real>(c & 1), static_cast<Real>((c >> 1) & 1),
          static_cast<Real>((c >> 2) & 1)};
}

struct EdgeDef {
  int a;
  int b;  // b = a + (1 << axis)
  int axis;
};

struct CaseTable {
  std::array<EdgeDef, 12> edges{};
  std::array<std::vector<std::array<std::uint8_t, 3>>, 256> triangles;

  int edge_index(int c0, int c1) const {
    for (int e = 0; e < 12; ++e) {
      const auto& d = edges[static_cast<std::size_t>(e)];
      if ((d.a == c0 && d.b == c1) || (d.a == c1 && d.b == c0)) return e;
    }
    return -1;
  }
};

// Builds the 256-case triangulation from face rules: on each cube face the
// sign changes are paired so inside corners are kept apart (a face decision
// depends only on that face's corners, so neighbouring cells agree), the
// resulting segments are chained into closed loops and fanned.
CaseTable build_case_table() {
  CaseTable t;
  int e = 0;
  for (int c = 0; c < 8; ++c)
    for (int axis = 0; axis < 3; ++axis)
      if (!(c & (1 << axis))) t.edges[static_cast<std::size_t>(e++)] = {c, c | (1 << axis), axis};

  // Faces as corner loops, counter-clockwise seen from outside the cell.
  std::vector<std::array<int, 4>> faces;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      const int base = side << axis;
      std::array<int, 4> loop{base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)};
      const Vec3 n = Vec3::Unit(axis) * (side ? 1 : -1);
      const Vec3 p0 = corner_offset(loop[0]), p1 = corner_offset(loop[1]), p2 = corner_offset(loop[2]);
      if ((p1 - p0).cross(p2 - p1).dot(n) < 0) std::swap(loop[1], loop[3]);
      faces.push_back(loop);
    }
  }

  for (int config = 0; config < 256; ++config) {
    auto inside = [config](int c) { return (config >> c) & 1; };
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& f : faces) {
      // Crossings in loop order, tagged entry (outside -> inside) or exit.
      std::vector<std::pair<int, bool>> crossings;
      for (int k = 0; k < 4; ++k) {
        const int i = f[static_cast<std::size_t>(k)];
        const int j = f[static_cast<std::size_t>((k + 1) % 4)];
        if (inside(i) != inside(j)) crossings.emplace_back(t.edge_index(i, j), !inside(i));
      }
      // Each entry pairs with the next exit around the loop; the segment runs
      // entry -> exit.
      for (std::size_t k = 0; k < crossings.size(); ++k) {
        if (!crossings[k].second) continue;
        for (std::size_t s = 1; s < crossings.size(); ++s) {
          const auto& c = crossings[(k + s) % crossings.size()];
          if (!c.second) {
            next[static_cast<std::size_t>(crossings[k].first)] = c.first;
            break;
          }
        }
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[static_cast<std::size_t>(start)] < 0 || used[static_cast<std::size_t>(start)]) continue;
      std::vector<int> loop;
      for (int cur = start; !used[static_cast<std::size_t>(cur)]; cur = next[static_cast<std::size_t>(cur)]) {
        used[static_cast<std::size_t>(cur)] = true;
        loop.push_back(cur);
      }
      for (std::size_t k = 1; k + 1 < loop.size(); ++k) {
        t.triangles[static_cast<std::size_t>(config)].push_back(
            {static_cast<std::uint8_t>(loop[0]), static_cast<std::uint8_t>(loop[k]),
             static_cast<std::uint8_t>(loop[k + 1])});
      }
    }
  }

  // Orient so normals point away from inside corners: check the single
  // inside-corner case and flip everything if needed.
  const auto& tri = t.triangles[1].front();
  auto mid = [&](int edge) {
    const auto& d = t.edges[static_cast<std::size_t>(edge)];
    return Vec3((corner_offset(d.a) + corner_offset(d.b)) / 2);
  };
  const Vec3 n = (mid(tri[1]) - mid(tri[0])).cross(mid(tri[2]) - mid(tri[0]));
  if (n.dot(mid(tri[0]) - corner_offset(0)) < 0) {
    for (auto& list : t.triangles)
      for (auto& tr : list) std::swap(tr[1], tr[2]);
  }
  return t;
}

const CaseTable& case_table() {
  static const CaseTable table = build_case_table();
  return table;
}

}  // namespace

std::size_t case_table_nonempty_count() {
  const auto& t = case_table();
  return static_cast<std::size_t>(std::count_if(t.triangles.begin(), t.triangles.end(),
                                                [](const auto& v) { return !v.empty(); }));
}

TriMesh marching_cubes(const GridField& grid, Real iso) {
  const auto& table = case_table();
  const std::size_t nx = grid.vertex_count(0), ny = grid.vertex_count(1), nz = grid.vertex_count(2);
  if (grid.values.size() != nx * ny * nz) throw UsageError("grid value count mismatch");

  TriMesh mesh;
  // Per-axis edge -> vertex index, keyed by the edge's lower grid vertex.
  std::array<std::vector<std::int32_t>, 3> edge_vertex;
  for (auto& v : edge_vertex) v.assign(nx * ny * nz, -1);

  auto edge_point = [&](std::size_t i, std::size_t j, std::size_t k, int axis) -> std::uint32_t {
    const std::size_t idx = grid.index(i, j, k);
    auto& slot = edge_vertex[static_cast<std::size_t>(axis)][idx];
    if (slot >= 0) return static_cast<std::uint32_t>(slot);
    const std::size_t i1 = i + (axis == 0), j1 = j + (axis == 1), k1 = k + (axis == 2);
    const Real v0 = grid.at(i, j, k);
    const Real v1 = grid.at(i1, j1, k1);
    const Real t = (iso - v0) / (v1 - v0);
    const Point3 p0 = grid.vertex(i, j, k);
    const Point3 p1 = grid.vertex(i1, j1, k1);
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    slot = static_cast<std::int32_t>(mesh.vertices.size() - 1);
    return static_cast<std::uint32_t>(slot);
  };

  for (std::size_t k = 0; k + 1 < nz; ++k) {
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      for (std::size_t i = 0; i + 1 < nx; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          if (grid.at(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) > iso) config |= 1 << c;
        }
        const auto& tris = table.triangles[static_cast<std::size_t>(config)];
        if (tris.empty()) continue;
        std::array<std::int64_t, 12> local;
        local.fill(-1);
        for (const auto& tr : tris) {
          Triangle out{};
          for (int s = 0; s < 3; ++s) {
            const auto e = tr[static_cast<std::size_t>(s)];
            if (local[e] < 0) {
              const auto& d = table.edges[e];
              local[e] = edge_point(i + (d.a & 1), j + ((d.a >> 1) & 1), k + ((d.a >> 2) & 1), d.axis);
            }
            out[static_cast<std::size_t>(s)] = static_cast<std::uint32_t>(local[e]);
          }
          mesh.triangles.push_back(out);
        }
      }
    }
  }
  return mesh;
}

}  // namespace ins::meshing
