#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "vlcp/tensor.hpp"

namespace vlcp {

// Channel-major pixels in [0, 1]: pixels has shape [C x H x W].
struct ImageSpec {
  int height = 0;
  int width = 0;
  int channels = 3;
  Tensor<float> pixels;

  static ImageSpec blank(int height, int width, int channels = 3, float value = 0.0f);
  float& px(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float px(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

struct GridCoord {
  int row = 0;
  int col = 0;
  bool operator==(const GridCoord&) const = default;
};

// Non-overlapping P x P patches in row-major order. Each row of `patches`
// is one patch flattened channel-major (c, py, px).
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int patch = 0;
  int channels = 3;
  Tensor<float> patches;  // [N x P*P*C]
  std::vector<GridCoord> coords;

  std::size_t count() const { return static_cast<std::size_t>(rows) * cols; }
};

struct ResolutionPolicy {
  enum class Mode { fixed, native };
  Mode mode = Mode::native;
  int side = 0;                            // fixed mode only
  std::optional<int> max_visual_tokens;    // cap on patch count

  static ResolutionPolicy fixed(int side) { return {Mode::fixed, side, std::nullopt}; }
  static ResolutionPolicy native(std::optional<int> cap = std::nullopt) {
    return {Mode::native, 0, cap};
  }
  bool operator==(const ResolutionPolicy&) const = default;
};

struct Resolution {
  int height = 0;
  int width = 0;
  bool operator==(const Resolution&) const = default;
};

// Target pixel size for an image of native size (height, width). Sides come
// out as multiples of `align` (patch * merge factor, e.g. 2P for a 2x2
// adapter). Native mode snaps each side to the nearest multiple (ties up,
// minimum one unit); a token cap then scales both sides by
// sqrt(cap * P^2 / (H W)) and floors, so the cap is never exceeded.
Resolution resolve_resolution(int height, int width, const ResolutionPolicy& policy,
                              int patch, int align);
inline Resolution resolve_resolution(int height, int width, const ResolutionPolicy& policy,
                                     int patch) {
  return resolve_resolution(height, width, policy, patch, patch);
}

PatchGrid patchify(const ImageSpec& image, int patch);
ImageSpec unpatchify(const PatchGrid& grid);

// Separable bilinear resampling with corner pixel centers aligned. Returns
// an exact copy when the size is unchanged.
ImageSpec resize_bilinear(const ImageSpec& image, int height, int width);

// (x - 0.5) / 0.5 per channel.
ImageSpec normalize_pixels(const ImageSpec& image);

// Debug dump: "CPGR", u32 version, u32 rows, cols, P, C, then the patch
// matrix as little-endian f32.
void write_patch_grid(std::ostream& out, const PatchGrid& grid);
PatchGrid read_patch_grid(std::istream& in);

}  // namespace vlcp
