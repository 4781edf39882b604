#pragma once

// Pre-norm vision transformer over patch grids of any size.

#include <vector>

#include "vlcp/crope.hpp"
#include "vlcp/layers.hpp"
#include "vlcp/patcher.hpp"

namespace vlcp {

struct EncoderConfig {
  int layers = 4;
  int width = 64;
  int heads = 4;
  int patch = 14;
  int channels = 3;
  int mlp_ratio = 4;
  int pos_grid = 8;  // learned table is pos_grid x pos_grid
  double rope_base = 10000.0;

  int head_dim() const { return width / heads; }
  crope::RotaryConfig rotary(crope::RotaryMode mode) const {
    return {head_dim(), rope_base, mode};
  }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct VisualFeatures {
  ad::Var<T> z;  // [N x width]
  int rows = 0;
  int cols = 0;
  std::vector<GridCoord> coords;
};

template <typename T>
class Encoder {
 public:
  struct Block {
    nn::LayerNorm<T> norm1;
    nn::Linear<T> q, k, v, o;
    nn::LayerNorm<T> norm2;
    nn::Linear<T> fc1, fc2;
  };

  // Registers "encoder.*" parameters in `store`.
  Encoder(const EncoderConfig& cfg, ad::ParameterStore<T>& store, Rng& rng);

  const EncoderConfig& config() const noexcept { return cfg_; }

  // Patch projection (no bias) plus the resampled position table; the table
  // is left out in rope2d_only mode.
  ad::Var<T> embed(const PatchGrid& grid, crope::RotaryMode mode) const;
  ad::Var<T> attention_block(std::size_t i, const ad::Var<T>& z,
                             const std::vector<GridCoord>& coords, crope::RotaryMode mode) const;
  ad::Var<T> ffn_block(std::size_t i, const ad::Var<T>& y) const;
  VisualFeatures<T> forward(const PatchGrid& grid, crope::RotaryMode mode) const;

  // resolve -> resize -> normalize -> patchify -> forward. `align` is the
  // side granularity (2P when a 2x2 adapter follows).
  VisualFeatures<T> encode(const ImageSpec& image, const ResolutionPolicy& policy,
                           crope::RotaryMode mode, int align) const;

  std::vector<Block>& blocks() noexcept { return blocks_; }
  const ad::Var<T>& patch_proj() const noexcept { return patch_proj_; }
  const ad::Var<T>& pos_table() const noexcept { return pos_table_; }

 private:
  EncoderConfig cfg_;
  ad::Var<T> patch_proj_;  // [P*P*C x width]
  ad::Var<T> pos_table_;   // [G*G x width]
  std::vector<Block> blocks_;
  nn::LayerNorm<T> norm_;
};

// Image -> model-ready patch grid for a policy (shared by training and eval).
PatchGrid prepare_grid(const ImageSpec& image, const ResolutionPolicy& policy, int patch,
                       int align);

}  // namespace vlcp
