#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ins/data.hpp"
#include "ins/error.hpp"

namespace ins::data {

namespace {

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("'" + path + "' is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

[[noreturn]] void parse_error(const std::string& path, std::size_t line, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

// Accepts "i", "i/t", "i//n", "i/t/n"; negative indices are relative.
std::uint32_t parse_face_index(const std::string& token, std::size_t vertex_count,
                               const std::string& path, std::size_t line) {
  const auto slash = token.find('/');
  const std::string head = token.substr(0, slash);
  long long idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoll(head, &used);
    if (used != head.size()) parse_error(path, line, "bad face index '" + token + "'");
  } catch (const std::logic_error&) {
    parse_error(path, line, "bad face index '" + token + "'");
  }
  if (idx == 0) parse_error(path, line, "face index 0 (OBJ indices are 1-based)");
  const long long resolved = idx > 0 ? idx - 1 : static_cast<long long>(vertex_count) + idx;
  if (resolved < 0 || resolved >= static_cast<long long>(vertex_count)) {
    parse_error(path, line, "face index " + head + " out of range");
  }
  return static_cast<std::uint32_t>(resolved);
}

}  // namespace

void save_obj(const std::string& path, const TriMesh& mesh) {
  mesh.validate();
  auto out = open_out(path, false);
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", static_cast<double>(v.x()),
                  static_cast<double>(v.y()), static_cast<double>(v.z()));
    out << buf;
  }
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

TriMesh load_obj(const std::string& path) {
  auto in = open_in(path, false);
  TriMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) parse_error(path, line_no, "vertex needs three coordinates");
      mesh.vertices.emplace_back(static_cast<Real>(x), static_cast<Real>(y), static_cast<Real>(z));
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(parse_face_index(tok, mesh.vertices.size(), path, line_no));
      if (idx.size() < 3) parse_error(path, line_no, "face needs at least three vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
      }
    }
    // Other records (vn, vt, o, g, s, usemtl, ...) are ignored.
  }
  mesh.validate();
  return mesh;
}

void save_samples(const std::string& path, const FrameSampleSet& samples) {
  auto out = open_out(path, true);
  out.write("INSSAMP1", 8);
  put_u64(out, samples.surface.size());
  put_u64(out, samples.uniform.size());
  for (const auto* list : {&samples.surface, &samples.uniform}) {
    for (const auto& s : *list) {
      for (int a = 0; a < 3; ++a) put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(s.point(a))));
      out.put(static_cast<char>(s.occupancy));
    }
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

FrameSampleSet load_samples(const std::string& path) {
  auto in = open_in(path, true);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "INSSAMP1", 8) != 0) {
    throw DataError("'" + path + "' is not an INSSAMP1 sample file");
  }
  FrameSampleSet out;
  const auto ns = get_u64(in, path);
  const auto nu = get_u64(in, path);
  for (auto* list : {&out.surface, &out.uniform}) {
    const auto n = list == &out.surface ? ns : nu;
    list->reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      OccupancySample s;
      for (int a = 0; a < 3; ++a) s.point(a) = static_cast<Real>(std::bit_cast<double>(get_u64(in, path)));
      char label;
      if (!in.get(label)) throw DataError("'" + path + "' is truncated");
      if (label != 0 && label != 1) throw DataError("'" + path + "' has a label other than 0/1");
      s.occupancy = static_cast<std::uint8_t>(label);
      list->push_back(s);
    }
  }
  return out;
}

std::string pose_to_json(const Pose& pose) {
  nlohmann::json j;
  j["n_b"] = pose.bone_count();
  auto& bones = j["bones"] = nlohmann::json::array();
  for (const auto& b : pose.bones()) {
    nlohmann::json row = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) row.push_back(static_cast<double>(b.rotation()(r, c)));
    for (int a = 0; a < 3; ++a) row.push_back(static_cast<double>(b.translation()(a)));
    bones.push_back(std::move(row));
  }
  return j.dump(2);
}

Pose pose_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("pose JSON: ") + e.what());
  }
  try {
    const auto n = j.at("n_b").get<std::size_t>();
    const auto& bones = j.at("bones");
    if (bones.size() != n) throw DataError("pose JSON: n_b does not match the bone list");
    std::vector<BoneTransform> out;
    for (const auto& row : bones) {
      if (row.size() != 12) throw DataError("pose JSON: each bone needs 12 numbers");
      Mat3 r;
      Vec3 t;
      for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = static_cast<Real>(row[static_cast<std::size_t>(i)].get<double>());
      for (int a = 0; a < 3; ++a) t(a) = static_cast<Real>(row[static_cast<std::size_t>(9 + a)].get<double>());
      out.emplace_back(r, t);
    }
    return Pose(std::move(out));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("pose JSON: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("pose JSON: ") + e.what());
  }
}

void save_pose(const std::string& path, const Pose& pose) {
  auto out = open_out(path, false);
  out << pose_to_json(pose) << '\n';
}

Pose load_pose(const std::string& path) {
  auto in = open_in(path, false);
  std::stringstream ss;
  ss << in.rdbuf();
  return pose_from_json(ss.str());
}

}  // namespace ins::data
