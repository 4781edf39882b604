#pragma once

// Adapter from visual features to decoder tokens, and the small causal
// decoder whose word embedding doubles as the output head.

#include <cstdint>
#include <vector>

#include "vlcp/encoder.hpp"

namespace vlcp {

struct AdapterConfig {
  int visual_width = 64;
  int text_width = 64;
  bool operator==(const AdapterConfig&) const = default;
};

// Adapter output: one row per 2x2 block of patches.
template <typename T>
struct VisualTokens {
  ad::Var<T> h;  // [(rows/2)*(cols/2) x text_width]
  int rows = 0;
  int cols = 0;
};

template <typename T>
class Adapter {
 public:
  Adapter(const AdapterConfig& cfg, ad::ParameterStore<T>& store, Rng& rng);
  // Concatenates each 2x2 block of patch features (top-left, top-right,
  // bottom-left, bottom-right), then MLP 4*Dv -> Dt -> Dt with GELU.
  // `detach_weights` keeps the gradient off the adapter's own parameters.
  VisualTokens<T> project(const VisualFeatures<T>& z, bool detach_weights = false) const;
  const AdapterConfig& config() const noexcept { return cfg_; }

 private:
  AdapterConfig cfg_;
  nn::Linear<T> fc1_, fc2_;
};

struct TokenSequence {
  std::vector<std::int32_t> ids;
  // Text positions before this index get no loss term (instruction prompts).
  std::size_t supervise_from = 0;
};

struct DecoderConfig {
  int layers = 2;
  int width = 64;
  int heads = 4;
  int vocab = 512;
  int max_positions = 512;
  int mlp_ratio = 4;
  double rope_base = 10000.0;

  int head_dim() const { return width / heads; }
  void validate() const;
  bool operator==(const DecoderConfig&) const = default;
};

template <typename T>
class Decoder {
 public:
  struct Block {
    nn::LayerNorm<T> norm1;
    nn::Linear<T> q, k, v, o;
    nn::LayerNorm<T> norm2;
    nn::Linear<T> fc1, fc2;
  };

  // Registers "decoder.*" parameters; the embedding is "decoder.embed" [K x Dt].
  Decoder(const DecoderConfig& cfg, ad::ParameterStore<T>& store, Rng& rng);

  const DecoderConfig& config() const noexcept { return cfg_; }
  const ad::Var<T>& embed() const noexcept { return embed_; }

  // Final-layer hidden states for [prefix; embed(ids)] under a causal mask.
  // `prefix` may be undefined (no visual tokens).
  ad::Var<T> hidden(const ad::Var<T>& prefix, const std::vector<std::int32_t>& ids) const;
  // Logits through the tied head: hidden . embed^T.
  ad::Var<T> logits(const ad::Var<T>& hidden) const;
  ad::Var<T> forward_text_only(const TokenSequence& seq) const;

 private:
  DecoderConfig cfg_;
  ad::Var<T> embed_;
  std::vector<Block> blocks_;
  nn::LayerNorm<T> norm_;
};

// Summed next-token negative log-likelihood over the supervised text
// positions, and how many positions that covers. With a visual prefix the
// first text token is predicted from the last visual slot; without one the
// first token has no predictor and is skipped.
template <typename T>
struct DecodeTerms {
  ad::Var<T> nll_sum;
  std::size_t count = 0;
};

template <typename T>
DecodeTerms<T> decode_terms(const Decoder<T>& dec, const VisualTokens<T>& hv,
                            const TokenSequence& seq);

// Mean of decode_terms over its positions.
template <typename T>
ad::Var<T> decode_loss(const Decoder<T>& dec, const VisualTokens<T>& hv,
                       const TokenSequence& seq);

// Greedy continuation of `prompt` until `eos` or max_new tokens.
template <typename T>
std::vector<std::int32_t> greedy_decode(const Decoder<T>& dec, const VisualTokens<T>& hv,
                                        std::vector<std::int32_t> prompt, std::int32_t eos,
                                        std::size_t max_new);

}  // namespace vlcp
