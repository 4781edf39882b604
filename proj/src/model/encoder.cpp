#include "vlcp/encoder.hpp"

#include <cmath>
#include <string>

#include "vlcp/ops.hpp"

namespace vlcp {

void EncoderConfig::validate() const {
  if (layers < 1 || width < 1 || heads < 1 || patch < 1 || channels < 1 || mlp_ratio < 1 ||
      pos_grid < 1)
    throw ParameterError("encoder sizes must be positive");
  if (width % heads != 0)
    throw ParameterError("encoder width " + std::to_string(width) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  rotary(crope::RotaryMode::crope).validate();
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, ad::ParameterStore<T>& store, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.width;
  const std::size_t in = static_cast<std::size_t>(cfg_.patch) * cfg_.patch * cfg_.channels;
  const std::size_t hidden = d * cfg_.mlp_ratio;
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg_.layers);
  patch_proj_ = store.add("encoder.patch_proj",
                          nn::normal_init<T>(rng, {in, d}, 1.0 / std::sqrt(double(in))));
  pos_table_ = store.add(
      "encoder.pos_embed",
      nn::normal_init<T>(rng, {static_cast<std::size_t>(cfg_.pos_grid * cfg_.pos_grid), d}, 0.2));
  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    const double s = 1.0 / std::sqrt(double(d));
    Block b;
    b.norm1 = nn::LayerNorm<T>::create(store, p + ".norm1", d);
    b.q = nn::Linear<T>::create(store, p + ".attn.q", d, d, rng, s);
    b.k = nn::Linear<T>::create(store, p + ".attn.k", d, d, rng, s);
    b.v = nn::Linear<T>::create(store, p + ".attn.v", d, d, rng, s);
    b.o = nn::Linear<T>::create(store, p + ".attn.o", d, d, rng, s * out_scale);
    b.norm2 = nn::LayerNorm<T>::create(store, p + ".norm2", d);
    b.fc1 = nn::Linear<T>::create(store, p + ".mlp.fc1", d, hidden, rng, s);
    b.fc2 = nn::Linear<T>::create(store, p + ".mlp.fc2", hidden, d, rng,
                                  out_scale / std::sqrt(double(hidden)));
    blocks_.push_back(std::move(b));
  }
  norm_ = nn::LayerNorm<T>::create(store, "encoder.norm", d);
}

template <typename T>
ad::Var<T> Encoder<T>::embed(const PatchGrid& grid, crope::RotaryMode mode) const {
  const std::size_t in = patch_proj_.rows();
  if (grid.patch != cfg_.patch || grid.channels != cfg_.channels || grid.patches.cols() != in ||
      grid.patches.rows() != grid.count() || grid.coords.size() != grid.count())
    throw ContractError("patch grid (" + std::to_string(grid.rows) + "x" +
                        std::to_string(grid.cols) + ", P=" + std::to_string(grid.patch) +
                        ") does not match the encoder patch size " + std::to_string(cfg_.patch));
  auto x = ad::constant(grid.patches.template cast<T>());
  auto z = ad::matmul(x, patch_proj_);
  if (mode == crope::RotaryMode::rope2d_only) return z;
  return ad::add(z, crope::interpolate_pos(pos_table_, cfg_.pos_grid, grid.rows, grid.cols));
}

template <typename T>
ad::Var<T> Encoder<T>::attention_block(std::size_t i, const ad::Var<T>& z,
                                       const std::vector<GridCoord>& coords,
                                       crope::RotaryMode mode) const {
  const Block& b = blocks_.at(i);
  auto h = b.norm1(z);
  auto q = b.q(h);
  auto k = b.k(h);
  auto v = b.v(h);
  if (mode != crope::RotaryMode::learned_only) {
    q = crope::rope2d_rotate(q, coords, cfg_.head_dim(), cfg_.rope_base, cfg_.heads);
    k = crope::rope2d_rotate(k, coords, cfg_.head_dim(), cfg_.rope_base, cfg_.heads);
  }
  return ad::add(z, b.o(nn::multi_head_attention(q, k, v, cfg_.heads, false)));
}

template <typename T>
ad::Var<T> Encoder<T>::ffn_block(std::size_t i, const ad::Var<T>& y) const {
  const Block& b = blocks_.at(i);
  return ad::add(y, b.fc2(ad::gelu(b.fc1(b.norm2(y)))));
}

template <typename T>
VisualFeatures<T> Encoder<T>::forward(const PatchGrid& grid, crope::RotaryMode mode) const {
  auto z = embed(grid, mode);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    z = ffn_block(i, attention_block(i, z, grid.coords, mode));
  return {norm_(z), grid.rows, grid.cols, grid.coords};
}

PatchGrid prepare_grid(const ImageSpec& image, const ResolutionPolicy& policy, int patch,
                       int align) {
  const auto r = resolve_resolution(image.height, image.width, policy, patch, align);
  return patchify(normalize_pixels(resize_bilinear(image, r.height, r.width)), patch);
}

template <typename T>
VisualFeatures<T> Encoder<T>::encode(const ImageSpec& image, const ResolutionPolicy& policy,
                                     crope::RotaryMode mode, int align) const {
  return forward(prepare_grid(image, policy, cfg_.patch, align), mode);
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace vlcp
