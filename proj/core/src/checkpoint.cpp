#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "ins/diffnet.hpp"
#include "ins/error.hpp"

namespace ins::nn {

namespace {

constexpr char kMagic[8] = {'I', 'N', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxName = 4096;

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw DataError("checkpoint '" + path + "' is truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

void save_checkpoint(const std::string& path, std::span<const ParamBlock* const> blocks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  put_u64(out, blocks.size());
  for (const auto* b : blocks) {
    put_u64(out, b->name.size());
    out.write(b->name.data(), static_cast<std::streamsize>(b->name.size()));
    put_u64(out, b->shape.size());
    for (auto d : b->shape) put_u64(out, d);
    for (Real v : b->values) put_f64(out, static_cast<double>(v));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

std::vector<ParamBlock> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("'" + path + "' is not an INSCKPT1 checkpoint");
  }
  const auto count = get_u64(in, path);
  std::vector<ParamBlock> blocks;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get_u64(in, path);
    if (name_len > kMaxName) throw DataError("checkpoint block name too long");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw DataError("checkpoint '" + path + "' is truncated");
    }
    const auto rank = get_u64(in, path);
    if (rank > kMaxRank) throw DataError("checkpoint block '" + name + "' has invalid rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get_u64(in, path);
    ParamBlock b(std::move(name), std::move(shape));
    for (auto& v : b.values) v = static_cast<Real>(std::bit_cast<double>(get_u64(in, path)));
    blocks.push_back(std::move(b));
  }
  return blocks;
}

void restore_blocks(const std::vector<ParamBlock>& stored, std::span<ParamBlock* const> model) {
  std::unordered_map<std::string, const ParamBlock*> by_name;
  for (const auto& b : stored) by_name[b.name] = &b;
  for (auto* m : model) {
    auto it = by_name.find(m->name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter block '" + m->name + "'");
    if (it->second->shape != m->shape) {
      throw DataError("shape mismatch for '" + m->name + "': checkpoint " +
                      shape_string(it->second->shape) + " vs model " + shape_string(m->shape));
    }
  }
  std::unordered_map<std::string, ParamBlock*> model_names;
  for (auto* m : model) model_names[m->name] = m;
  for (const auto& b : stored) {
    if (!model_names.contains(b.name) && b.name.rfind("meta.", 0) != 0) {
      throw DataError("checkpoint block '" + b.name + "' does not exist in the model");
    }
  }
  for (auto* m : model) m->values = by_name.at(m->name)->values;
}

}  // namespace ins::nn
