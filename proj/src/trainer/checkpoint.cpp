#include "vlcp/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "common/binio.hpp"

namespace vlcp {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'P', 'K'};
constexpr std::uint8_t kF32 = 0, kF64 = 1;
constexpr const char* kPriorName = "align.prior";
constexpr std::uint32_t kMaxName = 4096, kMaxRank = 8, kMaxMeta = 1 << 20;

void put_string(std::ostream& out, const std::string& s) {
  binio::put_u32(out, static_cast<std::uint32_t>(s.size()));
  binio::put_bytes(out, s);
}

std::string get_string(std::istream& in, std::uint32_t limit, const char* what) {
  const auto n = binio::get_u32(in, what);
  if (n > limit) throw CheckpointError(std::string(what) + " length out of range");
  std::string s(n, '\0');
  binio::read_exact(in, s.data(), n, what);
  return s;
}

void put_header(std::ostream& out, const std::string& name, std::uint8_t dtype,
                const Shape& shape) {
  put_string(out, name);
  out.put(static_cast<char>(dtype));
  binio::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) binio::put_u64(out, e);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ad::ParameterStore<float>& store,
                      const CheckpointMeta& meta, const std::vector<double>& prior) {
  out.write(kMagic, 4);
  binio::put_u32(out, kCheckpointVersion);
  put_string(out, meta.stage);
  binio::put_u64(out, meta.step);
  put_string(out, meta.rng_state);

  const auto names = store.names_sorted();
  std::vector<std::string> all = names;
  if (!prior.empty()) all.push_back(kPriorName);
  std::sort(all.begin(), all.end());
  binio::put_u32(out, static_cast<std::uint32_t>(all.size()));
  for (const auto& name : all) {
    if (name == kPriorName && !prior.empty() && !store.contains(name)) {
      put_header(out, name, kF64, Shape{prior.size()});
      for (double v : prior) binio::put_f64(out, v);
      continue;
    }
    const auto& t = store.get(name).var.value();
    put_header(out, name, kF32, t.shape());
    for (float v : t.values()) binio::put_f32(out, v);
  }
  if (!out) throw CheckpointError("write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  binio::read_exact(in, magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = binio::get_u32(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.meta.stage = get_string(in, kMaxMeta, "stage");
  c.meta.step = binio::get_u64(in, "step");
  c.meta.rng_state = get_string(in, kMaxMeta, "rng state");
  const auto count = binio::get_u32(in, "record count");
  std::string prev;
  for (std::uint32_t r = 0; r < count; ++r) {
    auto name = get_string(in, kMaxName, "record name");
    if (r && name <= prev) throw CheckpointError("records out of order at '" + name + "'");
    prev = name;
    char dtype = 0;
    binio::read_exact(in, &dtype, 1, "dtype");
    const auto rank = binio::get_u32(in, "rank");
    if (rank == 0 || rank > kMaxRank) throw CheckpointError("bad rank for '" + name + "'");
    Shape shape;
    std::uint64_t elems = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = binio::get_u64(in, "extent");
      if (e == 0 || e > (std::uint64_t{1} << 32) || elems * e > (std::uint64_t{1} << 32))
        throw CheckpointError("bad extent for '" + name + "'");
      elems *= e;
      shape.push_back(static_cast<std::size_t>(e));
    }
    if (static_cast<std::uint8_t>(dtype) == kF64) {
      if (name != kPriorName || rank != 1)
        throw CheckpointError("unexpected f64 record '" + name + "'");
      c.prior.resize(elems);
      for (auto& v : c.prior) v = binio::get_f64(in, "payload");
    } else if (static_cast<std::uint8_t>(dtype) == kF32) {
      Tensor<float> t(shape);
      for (auto& v : t.values()) v = binio::get_f32(in, "payload");
      c.tensors.emplace(std::move(name), std::move(t));
    } else {
      throw CheckpointError("unknown dtype " + std::to_string(static_cast<int>(dtype)));
    }
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw CheckpointError("trailing bytes after last record");
  return c;
}

void save_checkpoint(const std::string& path, const ad::ParameterStore<float>& store,
                     const CheckpointMeta& meta, const std::vector<double>& prior) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  write_checkpoint(out, store, meta, prior);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

void apply_checkpoint(const Checkpoint& ckpt, ad::ParameterStore<float>& store) {
  if (ckpt.tensors.size() != store.all().size())
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model has " + std::to_string(store.all().size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (!store.contains(name)) throw CheckpointError("unknown tensor '" + name + "'");
    auto& p = store.get(name);
    if (p.var.shape() != t.shape()) throw CheckpointError("shape mismatch for '" + name + "'");
  }
  for (const auto& [name, t] : ckpt.tensors) store.get(name).var.mutable_value() = t;
}

}  // namespace vlcp
