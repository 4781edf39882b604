#pragma once

// Binary checkpoints: "CMPK", u32 version, metadata (stage, step, rng state),
// then one record per tensor sorted by name. All fields little-endian.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vlcp/autodiff.hpp"

namespace vlcp {

struct CheckpointMeta {
  std::string stage;  // last completed stage, "" for a fresh model
  std::uint64_t step = 0;
  std::string rng_state;
  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::map<std::string, Tensor<float>> tensors;
  std::vector<double> prior;  // "align.prior", empty if absent
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ad::ParameterStore<float>& store,
                      const CheckpointMeta& meta, const std::vector<double>& prior);
// CheckpointError on a bad magic, version, dtype or truncated stream.
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const ad::ParameterStore<float>& store,
                     const CheckpointMeta& meta, const std::vector<double>& prior);
Checkpoint load_checkpoint(const std::string& path);

// Copies tensors into the store. Names and shapes must match one to one.
void apply_checkpoint(const Checkpoint& ckpt, ad::ParameterStore<float>& store);

}  // namespace vlcp
