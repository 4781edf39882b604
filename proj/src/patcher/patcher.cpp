#include "vlcp/patcher.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "common/binio.hpp"

namespace vlcp {

ImageSpec ImageSpec::blank(int height, int width, int channels, float value) {
  if (height < 1 || width < 1 || channels < 1)
    throw ParameterError("image dimensions must be positive");
  ImageSpec img{height, width, channels, {}};
  img.pixels = Tensor<float>::full(
      {static_cast<std::size_t>(channels), static_cast<std::size_t>(height),
       static_cast<std::size_t>(width)},
      value);
  return img;
}

namespace {

int round_to_unit(int v, int unit) {
  // Nearest multiple, ties up, at least one unit.
  const int q = (2 * v + unit) / (2 * unit);
  return std::max(1, q) * unit;
}

}  // namespace

Resolution resolve_resolution(int height, int width, const ResolutionPolicy& policy,
                              int patch, int align) {
  if (height < 1 || width < 1)
    throw ParameterError("image dimensions must be positive, got " + std::to_string(height) +
                         "x" + std::to_string(width));
  if (patch < 1 || align < patch || align % patch != 0)
    throw ParameterError("alignment must be a positive multiple of the patch size");

  Resolution r;
  if (policy.mode == ResolutionPolicy::Mode::fixed) {
    if (policy.side < align || policy.side % align != 0)
      throw ParameterError("fixed side " + std::to_string(policy.side) +
                           " is not a positive multiple of " + std::to_string(align));
    r = {policy.side, policy.side};
  } else {
    r = {round_to_unit(height, align), round_to_unit(width, align)};
  }

  if (policy.max_visual_tokens) {
    const long long cap = *policy.max_visual_tokens;
    const long long min_tokens = static_cast<long long>(align / patch) * (align / patch);
    if (cap < min_tokens)
      throw ParameterError("max_visual_tokens " + std::to_string(cap) +
                           " is below the smallest grid of " + std::to_string(min_tokens));
    auto tokens = [&](const Resolution& x) {
      return static_cast<long long>(x.height / patch) * (x.width / patch);
    };
    if (tokens(r) > cap) {
      const double s = std::sqrt(static_cast<double>(cap) * patch * patch /
                                 (static_cast<double>(r.height) * r.width));
      auto shrink = [&](int v) {
        const int q = static_cast<int>(std::floor(v * s / align));
        return std::max(1, q) * align;
      };
      r = {shrink(r.height), shrink(r.width)};
      // Only reachable through the one-unit minimum on a very elongated
      // image; trim the long side until the cap holds.
      while (tokens(r) > cap) {
        if (r.height >= r.width)
          r.height -= align;
        else
          r.width -= align;
      }
    }
  }
  return r;
}

PatchGrid patchify(const ImageSpec& image, int patch) {
  if (patch < 1) throw ParameterError("patch size must be positive");
  if (image.height % patch != 0 || image.width % patch != 0)
    throw ContractError("image " + std::to_string(image.height) + "x" +
                        std::to_string(image.width) + " is not a multiple of patch size " +
                        std::to_string(patch) + "; resolve the resolution first");
  PatchGrid g;
  g.rows = image.height / patch;
  g.cols = image.width / patch;
  g.patch = patch;
  g.channels = image.channels;
  const std::size_t dim = static_cast<std::size_t>(patch) * patch * image.channels;
  g.patches = Tensor<float>({g.count(), dim});
  g.coords.reserve(g.count());
  std::size_t n = 0;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c, ++n) {
      g.coords.push_back({r, c});
      float* dst = g.patches.data() + n * dim;
      for (int ch = 0; ch < image.channels; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            *dst++ = image.px(ch, r * patch + py, c * patch + px);
    }
  return g;
}

ImageSpec unpatchify(const PatchGrid& grid) {
  ImageSpec img = ImageSpec::blank(grid.rows * grid.patch, grid.cols * grid.patch, grid.channels);
  const int p = grid.patch;
  const std::size_t dim = static_cast<std::size_t>(p) * p * grid.channels;
  for (std::size_t n = 0; n < grid.count(); ++n) {
    const auto [r, c] = grid.coords[n];
    const float* src = grid.patches.data() + n * dim;
    for (int ch = 0; ch < grid.channels; ++ch)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px) img.px(ch, r * p + py, c * p + px) = *src++;
  }
  return img;
}

namespace {

struct Tap {
  int lo, hi;
  float t;
};

std::vector<Tap> taps(int src, int dst) {
  std::vector<Tap> out(dst);
  for (int i = 0; i < dst; ++i) {
    const double pos = dst == 1 ? 0.0 : static_cast<double>(i) * (src - 1) / (dst - 1);
    const int lo = std::min(static_cast<int>(std::floor(pos)), src - 1);
    const int hi = std::min(lo + 1, src - 1);
    out[i] = {lo, hi, static_cast<float>(pos - lo)};
  }
  return out;
}

}  // namespace

ImageSpec resize_bilinear(const ImageSpec& image, int height, int width) {
  if (height < 1 || width < 1) throw ParameterError("resize target must be positive");
  if (height == image.height && width == image.width) return image;
  const auto ty = taps(image.height, height);
  const auto tx = taps(image.width, width);
  // Horizontal pass into [C x H_src x W_dst], then vertical.
  ImageSpec tmp = ImageSpec::blank(image.height, width, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < width; ++x) {
        const auto& k = tx[x];
        tmp.px(c, y, x) = (1.0f - k.t) * image.px(c, y, k.lo) + k.t * image.px(c, y, k.hi);
      }
  ImageSpec out = ImageSpec::blank(height, width, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < height; ++y) {
      const auto& k = ty[y];
      for (int x = 0; x < width; ++x)
        out.px(c, y, x) = (1.0f - k.t) * tmp.px(c, k.lo, x) + k.t * tmp.px(c, k.hi, x);
    }
  return out;
}

ImageSpec normalize_pixels(const ImageSpec& image) {
  ImageSpec out = image;
  for (auto& v : out.pixels.storage()) v = (v - 0.5f) / 0.5f;
  return out;
}

namespace {
constexpr char kGridMagic[4] = {'C', 'P', 'G', 'R'};
constexpr std::uint32_t kGridVersion = 1;
}  // namespace

void write_patch_grid(std::ostream& out, const PatchGrid& grid) {
  out.write(kGridMagic, 4);
  binio::put_u32(out, kGridVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(grid.rows));
  binio::put_u32(out, static_cast<std::uint32_t>(grid.cols));
  binio::put_u32(out, static_cast<std::uint32_t>(grid.patch));
  binio::put_u32(out, static_cast<std::uint32_t>(grid.channels));
  for (float v : grid.patches.values()) binio::put_f32(out, v);
}

PatchGrid read_patch_grid(std::istream& in) {
  char magic[4];
  binio::read_exact<ContractError>(in, magic, 4, "patch grid magic");
  if (!std::equal(magic, magic + 4, kGridMagic)) throw ContractError("not a CPGR file");
  if (binio::get_u32<ContractError>(in, "version") != kGridVersion)
    throw ContractError("unsupported CPGR version");
  PatchGrid g;
  g.rows = static_cast<int>(binio::get_u32<ContractError>(in, "rows"));
  g.cols = static_cast<int>(binio::get_u32<ContractError>(in, "cols"));
  g.patch = static_cast<int>(binio::get_u32<ContractError>(in, "patch"));
  g.channels = static_cast<int>(binio::get_u32<ContractError>(in, "channels"));
  const std::size_t dim = static_cast<std::size_t>(g.patch) * g.patch * g.channels;
  g.patches = Tensor<float>({g.count(), dim});
  for (auto& v : g.patches.storage()) v = binio::get_f32<ContractError>(in, "payload");
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) g.coords.push_back({r, c});
  return g;
}

}  // namespace vlcp
