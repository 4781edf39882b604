#include "vlcp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "json.hpp"

#include "vlcp/ops.hpp"

namespace vlcp::train {

std::string to_string(StageId s) {
  switch (s) {
    case StageId::I:
      return "I";
    case StageId::II_fixed:
      return "II-fixed";
    case StageId::II_native:
      return "II-native";
    case StageId::III:
      return "III";
  }
  return "?";
}

StageId stage_from_string(const std::string& s) {
  if (s == "I") return StageId::I;
  if (s == "II-fixed") return StageId::II_fixed;
  if (s == "II-native") return StageId::II_native;
  if (s == "III") return StageId::III;
  throw ConfigError("unknown stage '" + s + "'");
}

int stage_rank(StageId s) { return static_cast<int>(s); }

namespace {

const std::vector<std::string> kAllGroups{"adapter", "encoder", "decoder"};

}  // namespace

StageConfig StageConfig::defaults(StageId s) {
  StageConfig c;
  c.stage = s;
  c.batch_size = 8;
  c.warmup_ratio = 0.03;
  c.epochs = 1;
  switch (s) {
    case StageId::I:
      c.trainable = {"adapter"};
      c.resolution = ResolutionPolicy::fixed(112);
      c.rotary_mode = crope::RotaryMode::learned_only;
      c.alpha = 0.05;
      c.lr_adapter = 5e-3;
      c.lr_vfm = 0.0;
      c.lr_llm = 0.0;
      c.num_pairs = 2000;
      break;
    case StageId::II_fixed:
    case StageId::II_native:
      c.trainable = kAllGroups;
      c.resolution = s == StageId::II_fixed ? ResolutionPolicy::fixed(224)
                                            : ResolutionPolicy::native(256);
      c.alpha = 0.05;
      c.lr_adapter = 5e-3;
      c.lr_vfm = 1e-4;
      c.lr_llm = 1e-3;
      c.num_pairs = 4000;
      break;
    case StageId::III:
      c.trainable = kAllGroups;
      c.resolution = ResolutionPolicy::native(256);
      c.alpha = 0.0;
      c.lr_adapter = 1e-3;
      c.lr_vfm = 2e-5;
      c.lr_llm = 2e-4;
      c.num_pairs = 2000;
      c.data = DataKind::qa;
      break;
  }
  return c;
}

void StageConfig::validate() const {
  const std::string tag = "stage " + to_string(stage) + ": ";
  auto sorted = trainable;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& p : sorted)
    if (std::find(kAllGroups.begin(), kAllGroups.end(), p) == kAllGroups.end())
      throw ConfigError(tag + "unknown trainable prefix '" + p + "'");
  if (stage == StageId::I) {
    if (sorted != std::vector<std::string>{"adapter"})
      throw ConfigError(tag + "only the adapter may be trainable");
    if (rotary_mode != crope::RotaryMode::learned_only)
      throw ConfigError(tag + "rotary_mode must be learned_only");
  } else {
    auto all = kAllGroups;
    std::sort(all.begin(), all.end());
    if (sorted != all) throw ConfigError(tag + "all groups must be trainable");
  }
  if (alpha < 0.0 || !std::isfinite(alpha)) throw ConfigError(tag + "alpha must be >= 0");
  if (stage == StageId::III && alpha != 0.0) throw ConfigError(tag + "alpha must be 0");
  auto lr_ok = [&](double lr, const char* group, const char* key) {
    const bool on = std::find(trainable.begin(), trainable.end(), group) != trainable.end();
    if (on && !(lr > 0.0 && std::isfinite(lr)))
      throw ConfigError(tag + key + " must be positive");
    if (lr < 0.0) throw ConfigError(tag + key + " must not be negative");
  };
  lr_ok(lr_adapter, "adapter", "lr_adapter");
  lr_ok(lr_vfm, "encoder", "lr_vfm");
  lr_ok(lr_llm, "decoder", "lr_llm");
  if (epochs < 1) throw ConfigError(tag + "epochs must be >= 1");
  if (batch_size < 1) throw ConfigError(tag + "batch_size must be >= 1");
  if (num_pairs < 1) throw ConfigError(tag + "num_pairs must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
    throw ConfigError(tag + "warmup_ratio must be in [0, 1)");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0))
    throw ConfigError(tag + "min_lr_ratio must be in [0, 1]");
  if (resolution.mode == ResolutionPolicy::Mode::fixed && resolution.side < 1)
    throw ConfigError(tag + "fixed resolution needs a positive side");
  if (resolution.max_visual_tokens && *resolution.max_visual_tokens < 4)
    throw ConfigError(tag + "max_visual_tokens must be >= 4");
  if (stage == StageId::III && data != DataKind::qa)
    throw ConfigError(tag + "stage III trains on question/answer pairs");
  if (stage != StageId::III && data != DataKind::captions)
    throw ConfigError(tag + "only stage III trains on question/answer pairs");
}

std::vector<ParamGroup> build_param_groups(const ad::ParameterStore<float>& store,
                                           const StageConfig& cfg) {
  std::vector<ParamGroup> groups{{"adapter", "adapter.", cfg.lr_adapter, false, {}},
                                 {"encoder", "encoder.", cfg.lr_vfm, false, {}},
                                 {"decoder", "decoder.", cfg.lr_llm, false, {}}};
  for (auto& g : groups)
    g.trainable = std::find(cfg.trainable.begin(), cfg.trainable.end(), g.name) !=
                  cfg.trainable.end();
  for (const auto& p : store.all()) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const ParamGroup& g) {
      return p.name.rfind(g.prefix, 0) == 0;
    });
    if (it == groups.end())
      throw ContractError("parameter '" + p.name + "' belongs to no group");
    it->params.push_back(p.name);
  }
  return groups;
}

void apply_trainability(ad::ParameterStore<float>& store, const std::vector<ParamGroup>& groups) {
  for (const auto& g : groups)
    for (const auto& name : g.params) {
      auto& p = store.get(name);
      p.trainable = g.trainable;
      p.var.set_requires_grad(g.trainable);
    }
}

double lr_factor(std::size_t step, std::size_t total, double warmup_ratio, double min_ratio) {
  if (total == 0) return 0.0;
  const auto warm = static_cast<std::size_t>(std::llround(warmup_ratio * static_cast<double>(total)));
  if (step < warm) return static_cast<double>(step) / static_cast<double>(warm);
  const std::size_t span = total - warm;
  if (span <= 1) return 1.0;
  const double t = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span - 1));
  return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

bool decay_exempt(const std::string& name) {
  return name.find("norm") != std::string::npos || name.find("embed") != std::string::npos;
}

std::size_t AdamW::step(ad::ParameterStore<float>& store, const std::vector<ParamGroup>& groups,
                        double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t updated = 0;
  for (const auto& g : groups) {
    if (!g.trainable) continue;
    const double lr = g.lr * lr_scale;
    for (const auto& name : g.params) {
      auto& p = store.get(name);
      if (!p.trainable || !p.var.has_grad()) continue;
      auto& st = state_[name];
      auto& w = p.var.mutable_value();
      if (st.m.empty()) {
        st.m = Tensor<double>(w.shape());
        st.v = Tensor<double>(w.shape());
      }
      const auto& grad = p.var.grad();
      const double wd = decay_exempt(name) ? 0.0 : cfg_.weight_decay;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = grad[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
        double wi = w[i];
        wi -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + wd * wi);
        w[i] = static_cast<float>(wi);
      }
      ++updated;
    }
  }
  return updated;
}

double clip_grad_norm(ad::ParameterStore<float>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.all()) {
    if (!p.trainable || !p.var.has_grad()) continue;
    for (float g : p.var.grad().values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("clip_grad_norm", "gradient norm is not finite");
  if (norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& p : store.all()) {
      if (!p.trainable || !p.var.has_grad()) continue;
      for (auto& g : p.var.mutable_grad().values()) g *= s;
    }
  }
  return norm;
}

int worker_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COMP_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = n > 0 ? std::min(n, cap) : cap;
  }
  return std::max(1, n);
}

DataSource::DataSource(corpus::CorpusConfig cfg, corpus::Vocabulary vocab, int patch, int align,
                       int threads)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), patch_(patch), align_(align),
      threads_(std::max(1, threads)) {
  cfg_.validate();
}

std::vector<Sample> DataSource::samples(corpus::Split split, DataKind kind,
                                        const std::vector<std::uint64_t>& indices,
                                        const ResolutionPolicy& policy) const {
  std::vector<Sample> out(indices.size());
  auto make = [&](std::size_t i) {
    const auto seed = corpus::item_seed(cfg_, split, indices[i]);
    Sample s;
    if (kind == DataKind::captions) {
      auto pair = corpus::generate_pair(seed, cfg_);
      s.grid = prepare_grid(pair.image, policy, patch_, align_);
      s.seq.ids = corpus::tokenize(vocab_, pair.caption);
    } else {
      auto qa = corpus::generate_qa(seed, cfg_);
      s.grid = prepare_grid(qa.image, policy, patch_, align_);
      auto q = corpus::tokenize(vocab_, qa.question);
      q.pop_back();  // drop <eos>; the answer follows the question
      s.seq.supervise_from = q.size();
      auto a = corpus::tokenize(vocab_, qa.answer);
      q.insert(q.end(), a.begin() + 1, a.end());
      s.seq.ids = std::move(q);
    }
    out[i] = std::move(s);
  };
  const std::size_t n = indices.size();
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads_), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) make(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) make(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<std::string> DataSource::captions(corpus::Split split, std::size_t count) const {
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(corpus::describe(corpus::sample_scene(corpus::item_seed(cfg_, split, i), cfg_)));
  return out;
}

std::string to_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["l_dec"] = r.l_dec;
  j["l_align"] = r.l_align ? nlohmann::ordered_json(*r.l_align) : nlohmann::ordered_json(nullptr);
  j["lr_adapter"] = r.lr_adapter;
  j["lr_vfm"] = r.lr_vfm;
  j["lr_llm"] = r.lr_llm;
  j["grad_norm"] = r.grad_norm;
  j["tokens"] = r.tokens;
  return j.dump();
}

StageReport run_stage(const StageConfig& cfg, const DataSource& data, Model<float>& model,
                      const std::vector<double>& prior, Rng& rng, std::uint64_t& step,
                      const StageHooks& hooks, const align::SinkhornConfig& sinkhorn) {
  cfg.validate();
  const auto groups = build_param_groups(model.store, cfg);
  apply_trainability(model.store, groups);
  model.store.zero_grad();
  AdamW opt;

  const auto n = static_cast<std::size_t>(cfg.num_pairs);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const std::size_t total = per_epoch * static_cast<std::size_t>(cfg.epochs);

  LossSettings<float> ls;
  ls.mode = cfg.rotary_mode;
  ls.alpha = cfg.alpha;
  ls.sinkhorn = sinkhorn;
  ls.prior = &prior;

  StageReport rep;
  double sum = 0.0;
  std::size_t local = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::uint64_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < per_epoch; ++b, ++local, ++step) {
      const std::vector<std::uint64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                           order.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(n, (b + 1) * bs)));
      const auto batch = data.samples(corpus::Split::train, cfg.data, idx, cfg.resolution);
      const double f = lr_factor(local, total, cfg.warmup_ratio, cfg.min_lr_ratio);
      StepRecord rec;
      rec.step = step;
      rec.stage = to_string(cfg.stage);
      rec.alpha = cfg.alpha;
      rec.lr_adapter = groups[0].trainable ? cfg.lr_adapter * f : 0.0;
      rec.lr_vfm = groups[1].trainable ? cfg.lr_vfm * f : 0.0;
      rec.lr_llm = groups[2].trainable ? cfg.lr_llm * f : 0.0;
      try {
        auto res = compute_loss(model, batch, ls);
        rec.l_dec = res.l_dec.value()[0];
        if (res.l_align.defined()) rec.l_align = res.l_align.value()[0];
        rec.total = res.total.value()[0];
        rec.tokens = res.tokens;
        ad::backward(res.total);
        rec.grad_norm = clip_grad_norm(model.store, 1.0);
        opt.step(model.store, groups, f);
      } catch (const NumericalError& e) {
        throw NumericalError(e.op(), "step " + std::to_string(step) + ": " + e.what());
      }
      model.store.zero_grad();
      sum += rec.l_dec;
      rep.last_l_dec = rec.l_dec;
      if (hooks.on_step) hooks.on_step(rec);
    }
  }
  rep.steps = local;
  rep.mean_l_dec = local ? sum / static_cast<double>(local) : 0.0;
  return rep;
}

EvalResult evaluate(const Model<float>& model, const DataSource& data, corpus::Split split,
                    std::size_t count, const ResolutionPolicy& policy, crope::RotaryMode mode,
                    bool greedy, DataKind kind) {
  if (count == 0) throw ContractError("evaluate needs at least one sample");
  EvalResult r;
  double nll = 0.0;
  std::size_t tokens = 0, exact = 0;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < count; start += chunk) {
    std::vector<std::uint64_t> idx;
    for (std::size_t i = start; i < std::min(count, start + chunk); ++i) idx.push_back(i);
    const auto batch = data.samples(split, kind, idx, policy);
    for (const auto& s : batch) {
      const auto z = model.encoder.forward(s.grid, mode);
      const auto hv = model.adapter.project(z);
      const auto t = decode_terms(model.decoder, hv, s.seq);
      nll += t.nll_sum.value()[0];
      tokens += t.count;
      if (greedy) {
        const auto from = static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, s.seq.supervise_from));
        const std::vector<std::int32_t> prompt(s.seq.ids.begin(), s.seq.ids.begin() + from);
        const auto out = greedy_decode(model.decoder, hv, prompt, corpus::Vocabulary::kEos,
                                       s.seq.ids.size() + 2);
        const std::vector<std::int32_t> want(s.seq.ids.begin() + from, s.seq.ids.end());
        exact += out == want;
      }
    }
  }
  r.samples = count;
  r.l_dec = nll / static_cast<double>(tokens);
  r.perplexity = std::exp(r.l_dec);
  r.exact_match = greedy ? static_cast<double>(exact) / static_cast<double>(count) : 0.0;
  return r;
}

}  // namespace vlcp::train
