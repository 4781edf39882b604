#pragma once

#include <optional>
#include <vector>

#include "vlcp/align.hpp"
#include "vlcp/lm.hpp"

namespace vlcp {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  // Sides are snapped to multiples of this so the 2x2 merge is total.
  int align_unit() const { return 2 * encoder.patch; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : Model(cfg, Rng(mix_seed(seed, 0))) {}
  Model(const ModelConfig& cfg, Rng&& rng);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }

  ad::ParameterStore<T> store;
  Encoder<T> encoder;
  Adapter<T> adapter;
  Decoder<T> decoder;

 private:
  ModelConfig cfg_;
};

// One training example: a prepared patch grid and its token ids.
struct Sample {
  PatchGrid grid;
  TokenSequence seq;
};

template <typename T>
struct LossSettings {
  crope::RotaryMode mode = crope::RotaryMode::crope;
  double alpha = 0.0;  // alignment branch runs only when alpha > 0
  align::SinkhornConfig sinkhorn;
  const std::vector<double>* prior = nullptr;
  // Also keep alignment gradients out of the adapter.
  bool strict_vision_only = false;
  // Fixed text-side quantities; used to turn the loss into a plain function
  // of the parameters for finite-difference checks.
  std::optional<Tensor<double>> frozen_targets;
  std::optional<Tensor<T>> frozen_prototypes;
};

template <typename T>
struct LossResult {
  ad::Var<T> total;    // L_dec + alpha * L_align
  ad::Var<T> l_dec;
  ad::Var<T> l_align;  // undefined when alpha == 0
  std::size_t tokens = 0;
  Tensor<double> targets;  // Sinkhorn targets when computed
  std::vector<double> row_tv;
};

// L_dec + alpha * L_align, with the alignment term left out entirely when
// alpha is zero.
template <typename T>
ad::Var<T> combined_loss(const ad::Var<T>& l_dec, const ad::Var<T>& l_align, double alpha);

template <typename T>
LossResult<T> compute_loss(const Model<T>& model, const std::vector<Sample>& batch,
                           const LossSettings<T>& settings);

// Text-side prototype scores [K x B] for the batch (no gradient).
template <typename T>
Tensor<double> text_scores(const Model<T>& model, const std::vector<Sample>& batch);

}  // namespace vlcp
