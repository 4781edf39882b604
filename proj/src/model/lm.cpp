#include "vlcp/lm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vlcp/ops.hpp"

namespace vlcp {

template <typename T>
Adapter<T>::Adapter(const AdapterConfig& cfg, ad::ParameterStore<T>& store, Rng& rng)
    : cfg_(cfg) {
  if (cfg.visual_width < 1 || cfg.text_width < 1)
    throw ParameterError("adapter widths must be positive");
  const std::size_t in = 4 * static_cast<std::size_t>(cfg.visual_width);
  const std::size_t d = cfg.text_width;
  fc1_ = nn::Linear<T>::create(store, "adapter.fc1", in, d, rng, 1.0 / std::sqrt(double(in)));
  fc2_ = nn::Linear<T>::create(store, "adapter.fc2", d, d, rng, 1.0 / std::sqrt(double(d)));
}

template <typename T>
VisualTokens<T> Adapter<T>::project(const VisualFeatures<T>& z, bool detach_weights) const {
  if (z.rows % 2 != 0 || z.cols % 2 != 0 || z.rows < 2 || z.cols < 2)
    throw ContractError("2x2 adapter needs an even patch grid, got " + std::to_string(z.rows) +
                        "x" + std::to_string(z.cols));
  if (z.z.cols() != static_cast<std::size_t>(cfg_.visual_width))
    throw ContractError("adapter expects width " + std::to_string(cfg_.visual_width) +
                        ", got " + std::to_string(z.z.cols()));
  const int r2 = z.rows / 2, c2 = z.cols / 2;
  std::vector<std::size_t> idx[4];
  for (auto& v : idx) v.reserve(static_cast<std::size_t>(r2) * c2);
  for (int r = 0; r < r2; ++r)
    for (int c = 0; c < c2; ++c) {
      const std::size_t tl = static_cast<std::size_t>(2 * r) * z.cols + 2 * c;
      idx[0].push_back(tl);
      idx[1].push_back(tl + 1);
      idx[2].push_back(tl + z.cols);
      idx[3].push_back(tl + z.cols + 1);
    }
  std::vector<ad::Var<T>> parts;
  for (auto& v : idx) parts.push_back(ad::gather_rows(z.z, v));
  auto merged = ad::concat_cols(parts);
  if (detach_weights) return {fc2_.detached(ad::gelu(fc1_.detached(merged))), r2, c2};
  return {fc2_(ad::gelu(fc1_(merged))), r2, c2};
}

void DecoderConfig::validate() const {
  if (layers < 1 || width < 1 || heads < 1 || vocab < 2 || max_positions < 2 || mlp_ratio < 1)
    throw ParameterError("decoder sizes must be positive (vocab and max_positions at least 2)");
  if (width % heads != 0 || head_dim() % 2 != 0)
    throw ParameterError("decoder width " + std::to_string(width) +
                         " must split into heads of even size");
}

template <typename T>
Decoder<T>::Decoder(const DecoderConfig& cfg, ad::ParameterStore<T>& store, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.width;
  const std::size_t hidden = d * cfg_.mlp_ratio;
  const double s = 1.0 / std::sqrt(double(d));
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg_.layers);
  embed_ = store.add("decoder.embed",
                     nn::normal_init<T>(rng, {static_cast<std::size_t>(cfg_.vocab), d}, s));
  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string p = "decoder.block" + std::to_string(i);
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
  norm_ = nn::LayerNorm<T>::create(store, "decoder.norm", d);
}

template <typename T>
ad::Var<T> Decoder<T>::hidden(const ad::Var<T>& prefix,
                              const std::vector<std::int32_t>& ids) const {
  if (ids.empty()) throw ContractError("decoder input has no text tokens");
  for (auto id : ids)
    if (id < 0 || id >= cfg_.vocab)
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(cfg_.vocab));
  auto x = ad::embedding(embed_, ids);
  if (prefix.defined()) {
    if (prefix.cols() != static_cast<std::size_t>(cfg_.width))
      throw ContractError("visual prefix width " + std::to_string(prefix.cols()) +
                          " != decoder width " + std::to_string(cfg_.width));
    x = ad::concat_rows<T>({prefix, x});
  }
  const std::size_t n = x.rows();
  if (n > static_cast<std::size_t>(cfg_.max_positions))
    throw ContractError("sequence of " + std::to_string(n) + " exceeds max_positions " +
                        std::to_string(cfg_.max_positions));
  auto [cs, sn] = nn::rope1d_tables<T>(n, cfg_.head_dim(), cfg_.heads, cfg_.rope_base);
  for (const Block& b : blocks_) {
    auto h = b.norm1(x);
    auto q = ad::rotate_pairs(b.q(h), cs, sn);
    auto k = ad::rotate_pairs(b.k(h), cs, sn);
    x = ad::add(x, b.o(nn::multi_head_attention(q, k, b.v(h), cfg_.heads, true)));
    x = ad::add(x, b.fc2(ad::gelu(b.fc1(b.norm2(x)))));
  }
  return norm_(x);
}

template <typename T>
ad::Var<T> Decoder<T>::logits(const ad::Var<T>& hidden) const {
  return ad::matmul_nt(hidden, embed_);
}

template <typename T>
ad::Var<T> Decoder<T>::forward_text_only(const TokenSequence& seq) const {
  return hidden(ad::Var<T>(), seq.ids);
}

template <typename T>
DecodeTerms<T> decode_terms(const Decoder<T>& dec, const VisualTokens<T>& hv,
                            const TokenSequence& seq) {
  const std::size_t t = seq.ids.size();
  if (t == 0) throw ContractError("decode_loss needs at least one text token");
  const std::size_t v = hv.h.defined() ? hv.h.rows() : 0;
  // Text token j is predicted from sequence position v + j - 1.
  const std::size_t first = std::max<std::size_t>(seq.supervise_from, v == 0 ? 1 : 0);
  if (first >= t) throw ContractError("decode_loss: no supervised text positions");
  auto h = dec.hidden(hv.h, seq.ids);
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  for (std::size_t j = first; j < t; ++j) {
    rows.push_back(v + j - 1);
    targets.push_back(seq.ids[j]);
  }
  auto lg = dec.logits(ad::gather_rows(h, rows));
  const T n = static_cast<T>(targets.size());
  return {ad::scale(ad::cross_entropy(lg, targets), n), targets.size()};
}

template <typename T>
ad::Var<T> decode_loss(const Decoder<T>& dec, const VisualTokens<T>& hv,
                       const TokenSequence& seq) {
  auto terms = decode_terms(dec, hv, seq);
  return ad::scale(terms.nll_sum, T(1) / static_cast<T>(terms.count));
}

template <typename T>
std::vector<std::int32_t> greedy_decode(const Decoder<T>& dec, const VisualTokens<T>& hv,
                                        std::vector<std::int32_t> prompt, std::int32_t eos,
                                        std::size_t max_new) {
  if (prompt.empty()) throw ContractError("greedy_decode needs a non-empty prompt");
  const std::size_t v = hv.h.defined() ? hv.h.rows() : 0;
  const ad::Var<T> prefix = hv.h.defined() ? ad::detach(hv.h) : ad::Var<T>();
  std::vector<std::int32_t> out;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (v + prompt.size() >= static_cast<std::size_t>(dec.config().max_positions)) break;
    auto h = dec.hidden(prefix, prompt);
    auto last = ad::gather_rows(h, {h.rows() - 1});
    const auto lg = dec.logits(last).value();
    const auto best = static_cast<std::int32_t>(
        std::max_element(lg.storage().begin(), lg.storage().end()) - lg.storage().begin());
    out.push_back(best);
    prompt.push_back(best);
    if (best == eos) break;
  }
  return out;
}

template class Adapter<float>;
template class Adapter<double>;
template class Decoder<float>;
template class Decoder<double>;
template DecodeTerms<float> decode_terms(const Decoder<float>&, const VisualTokens<float>&,
                                         const TokenSequence&);
template DecodeTerms<double> decode_terms(const Decoder<double>&, const VisualTokens<double>&,
                                          const TokenSequence&);
template ad::Var<float> decode_loss(const Decoder<float>&, const VisualTokens<float>&,
                                    const TokenSequence&);
template ad::Var<double> decode_loss(const Decoder<double>&, const VisualTokens<double>&,
                                     const TokenSequence&);
template std::vector<std::int32_t> greedy_decode(const Decoder<float>&, const VisualTokens<float>&,
                                                 std::vector<std::int32_t>, std::int32_t,
                                                 std::size_t);
template std::vector<std::int32_t> greedy_decode(const Decoder<double>&,
                                                 const VisualTokens<double>&,
                                                 std::vector<std::int32_t>, std::int32_t,
                                                 std::size_t);

}  // namespace vlcp
