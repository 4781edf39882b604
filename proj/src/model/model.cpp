#include "vlcp/model.hpp"

#include <string>

#include "vlcp/ops.hpp"

namespace vlcp {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, Rng&& rng)
    : encoder((cfg.validate(), cfg.encoder), store, rng),
      adapter(AdapterConfig{cfg.encoder.width, cfg.decoder.width}, store, rng),
      decoder(cfg.decoder, store, rng),
      cfg_(cfg) {}

template <typename T>
ad::Var<T> combined_loss(const ad::Var<T>& l_dec, const ad::Var<T>& l_align, double alpha) {
  if (alpha == 0.0 || !l_align.defined()) return l_dec;
  return ad::add(l_dec, ad::scale(l_align, static_cast<T>(alpha)));
}

template <typename T>
Tensor<double> text_scores(const Model<T>& model, const std::vector<Sample>& batch) {
  const std::size_t k = model.decoder.embed().rows();
  const std::size_t d = model.decoder.embed().cols();
  Tensor<double> c({k, batch.size()});
  const Tensor<T>& w = model.decoder.embed().value();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto f = align::pool(model.decoder.forward_text_only(batch[b].seq)).value();
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        s += static_cast<double>(w.at(i, j)) * static_cast<double>(f[j]);
      c.at(i, b) = s;
    }
  }
  return c;
}

template <typename T>
LossResult<T> compute_loss(const Model<T>& model, const std::vector<Sample>& batch,
                           const LossSettings<T>& settings) {
  if (batch.empty()) throw ContractError("compute_loss: empty batch");
  const bool with_align = settings.alpha > 0.0;
  LossResult<T> out;
  std::vector<ad::Var<T>> nll, pooled;
  for (const Sample& s : batch) {
    const auto z = model.encoder.forward(s.grid, settings.mode);
    const auto hv = model.adapter.project(z);
    auto terms = decode_terms(model.decoder, hv, s.seq);
    nll.push_back(terms.nll_sum);
    out.tokens += terms.count;
    if (with_align) {
      const auto h = settings.strict_vision_only ? model.adapter.project(z, true).h : hv.h;
      pooled.push_back(align::pool(h));
    }
  }
  auto total_nll = nll.size() == 1 ? nll[0] : ad::sum(ad::concat_rows(nll), 0);
  out.l_dec = ad::scale(ad::reshape(total_nll, {1}), T(1) / static_cast<T>(out.tokens));

  if (with_align) {
    if (settings.frozen_targets) {
      out.targets = *settings.frozen_targets;
    } else {
      if (!settings.prior) throw ContractError("compute_loss: alignment needs a word prior");
      auto res = align::sinkhorn_targets(text_scores(model, batch), *settings.prior,
                                         settings.sinkhorn);
      out.targets = std::move(res.p);
      out.row_tv = std::move(res.row_tv);
    }
    auto fv = pooled.size() == 1 ? pooled[0] : ad::concat_rows(pooled);
    const auto scores = settings.frozen_prototypes
                            ? ad::matmul_nt(ad::constant(*settings.frozen_prototypes), fv)
                            : align::project_prototypes(fv, model.decoder.embed());
    out.l_align = align::alignment_loss(scores, out.targets, settings.sinkhorn);
  }
  out.total = combined_loss(out.l_dec, out.l_align, settings.alpha);
  return out;
}

template class Model<float>;
template class Model<double>;
template ad::Var<float> combined_loss(const ad::Var<float>&, const ad::Var<float>&, double);
template ad::Var<double> combined_loss(const ad::Var<double>&, const ad::Var<double>&, double);
template Tensor<double> text_scores(const Model<float>&, const std::vector<Sample>&);
template Tensor<double> text_scores(const Model<double>&, const std::vector<Sample>&);
template LossResult<float> compute_loss(const Model<float>&, const std::vector<Sample>&,
                                        const LossSettings<float>&);
template LossResult<double> compute_loss(const Model<double>&, const std::vector<Sample>&,
                                         const LossSettings<double>&);

}  // namespace vlcp
