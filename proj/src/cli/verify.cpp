#include "vlcp/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "vlcp/corpus.hpp"
#include "vlcp/crope.hpp"
#include "vlcp/gradcheck.hpp"
#include "vlcp/ops.hpp"
#include "vlcp/trainer.hpp"

namespace vlcp::verify {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor<double> normal(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

std::vector<double> random_prior(Rng& rng, std::size_t k) {
  std::vector<double> u(k);
  double s = 0.0;
  for (auto& x : u) s += (x = 0.1 + rng.uniform());
  for (auto& x : u) x /= s;
  return u;
}

double column_tv(const Tensor<double>& a, const Tensor<double>& b, std::size_t j) {
  double tv = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) tv += std::abs(a.at(i, j) - b.at(i, j));
  return 0.5 * tv;
}

bool all_zero(const Tensor<double>& g) {
  for (double v : g.values())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.layers = 1;
  c.encoder.width = 16;
  c.encoder.heads = 2;
  c.encoder.patch = 4;
  c.encoder.mlp_ratio = 2;
  c.encoder.pos_grid = 3;
  c.decoder.layers = 1;
  c.decoder.width = 16;
  c.decoder.heads = 2;
  c.decoder.vocab = static_cast<int>(corpus::Vocabulary::standard().size());
  c.decoder.max_positions = 64;
  c.decoder.mlp_ratio = 2;
  return c;
}

std::vector<Sample> tiny_batch(const ModelConfig& cfg) {
  const auto vocab = corpus::Vocabulary::standard();
  corpus::CorpusConfig cc;
  cc.min_side = 16;
  cc.max_side = 40;
  const int p = cfg.encoder.patch;
  std::vector<Sample> batch;
  const ResolutionPolicy policies[2] = {ResolutionPolicy::fixed(4 * p),
                                        ResolutionPolicy::native(24)};
  for (int i = 0; i < 2; ++i) {
    auto pair = corpus::generate_pair(corpus::item_seed(cc, corpus::Split::train, 3 + i), cc);
    Sample s;
    s.grid = prepare_grid(pair.image, policies[i], p, cfg.align_unit());
    s.seq.ids = corpus::tokenize(vocab, pair.caption);
    batch.push_back(std::move(s));
  }
  return batch;
}

GradcheckReport model_gradcheck(double alpha, double h) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = tiny_model_config();
  Model<double> model(cfg, 11);
  const auto batch = tiny_batch(cfg);
  const auto vocab = corpus::Vocabulary::standard();
  std::vector<std::string> caps{"a large red circle at top left", "a small blue bar at middle center"};
  const auto prior = corpus::compute_prior(vocab, caps);

  LossSettings<double> ls;
  ls.alpha = alpha;
  ls.prior = &prior;
  if (alpha > 0.0) {
    ls.frozen_targets =
        align::sinkhorn_targets(text_scores(model, batch), prior, ls.sinkhorn).p;
    ls.frozen_prototypes = model.decoder.embed().value();
  }
  model.store.zero_grad();
  ad::backward(compute_loss(model, batch, ls).total);

  GradcheckReport rep;
  auto loss = [&]() { return compute_loss(model, batch, ls).total.value()[0]; };
  for (auto& p : model.store.all()) {
    auto& x = p.var.mutable_value();
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto fd = finite_difference_at<double>(x, idx, loss, h);
    const Tensor<double> an = p.var.has_grad() ? p.var.grad() : Tensor<double>(x.shape());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double e = relative_error(an[i], fd[i]);
      if (e > rep.max_rel_error) {
        rep.max_rel_error = e;
        rep.worst = p.name;
      }
    }
    rep.elements += fd.size();
    ++rep.tensors;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::vector<Check> gradcheck_suite() {
  std::vector<Check> out;
  const auto r = model_gradcheck();
  out.push_back({"gradcheck.end_to_end", r.max_rel_error < 1e-4,
                 "max rel err " + fmt("%.3g", r.max_rel_error) + " over " +
                     std::to_string(r.elements) + " elements in " + std::to_string(r.tensors) +
                     " tensors (worst " + r.worst + "), " + fmt("%.1fs", r.seconds)});
  const auto r0 = model_gradcheck(0.0);
  out.push_back({"gradcheck.decoding_only", r0.max_rel_error < 1e-4,
                 "max rel err " + fmt("%.3g", r0.max_rel_error)});
  return out;
}

std::vector<Check> rope_suite(int instances) {
  std::vector<Check> out;
  Rng rng(21);
  const int hd = 16, heads = 2;
  const auto width = static_cast<std::size_t>(hd * heads);
  double worst_norm = 0.0, worst_shift = 0.0;
  for (int t = 0; t < instances; ++t) {
    const auto n = static_cast<std::size_t>(2 + rng.below(8));
    const auto q = normal(rng, {n, width});
    const auto k = normal(rng, {n, width});
    std::vector<GridCoord> c, s;
    const int dy = static_cast<int>(rng.below(50)), dx = static_cast<int>(rng.below(50));
    for (std::size_t i = 0; i < n; ++i) {
      GridCoord g{static_cast<int>(rng.below(30)), static_cast<int>(rng.below(30))};
      c.push_back(g);
      s.push_back({g.row + dy, g.col + dx});
    }
    const auto rq = crope::rope2d_rotate(ad::constant(q), c, hd, 10000.0, heads).value();
    const auto rk = crope::rope2d_rotate(ad::constant(k), c, hd, 10000.0, heads).value();
    const auto sq = crope::rope2d_rotate(ad::constant(q), s, hd, 10000.0, heads).value();
    const auto sk = crope::rope2d_rotate(ad::constant(k), s, hd, 10000.0, heads).value();
    for (std::size_t i = 0; i < n; ++i)
      for (int hh = 0; hh < heads; ++hh) {
        double a = 0.0, b = 0.0;
        for (int j = 0; j < hd; ++j) {
          const auto col = static_cast<std::size_t>(hh * hd + j);
          a += q.at(i, col) * q.at(i, col);
          b += rq.at(i, col) * rq.at(i, col);
        }
        worst_norm = std::max(worst_norm, std::abs(std::sqrt(a) - std::sqrt(b)));
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (int hh = 0; hh < heads; ++hh) {
          double a = 0.0, b = 0.0;
          for (int d = 0; d < hd; ++d) {
            const auto col = static_cast<std::size_t>(hh * hd + d);
            a += rq.at(i, col) * rk.at(j, col);
            b += sq.at(i, col) * sk.at(j, col);
          }
          worst_shift = std::max(worst_shift, std::abs(a - b));
        }
  }
  out.push_back({"rope.norm_preservation", worst_norm < 1e-6,
                 fmt("max |d norm| %.3g", worst_norm) + " over " + std::to_string(instances) +
                     " instances"});
  out.push_back({"rope.translation_invariance", worst_shift < 1e-5,
                 fmt("max |d logit| %.3g", worst_shift) + " over " + std::to_string(instances) +
                     " instances"});

  bool exact = true;
  for (int g = 1; g <= 6; ++g) {
    const auto tbl = normal(rng, {static_cast<std::size_t>(g * g), 8});
    exact = exact &&
            crope::interpolate_pos(ad::constant(tbl), g, g, g).value().storage() == tbl.storage();
  }
  out.push_back({"rope.interpolation_identity", exact, "source grids 1..6, bitwise"});

  // corners 0,1,2,3 on a 2x2 table; the 3x3 resample is fully determined
  const Tensor<double> two({4, 1}, {0, 1, 2, 3});
  const std::vector<double> want{0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  const auto up = crope::interpolate_pos(ad::constant(two), 2, 3, 3).value();
  out.push_back({"rope.interpolation_hand_case", up.storage() == want, "2x2 -> 3x3"});
  return out;
}

SinkhornSweep sinkhorn_oracle_sweep(double score_scale, bool two_sided, int instances,
                                    std::uint64_t seed) {
  Rng rng(seed);
  SinkhornSweep s;
  s.score_scale = score_scale;
  s.instances = instances;
  align::SinkhornConfig c3, c1000;
  c3.two_sided = c1000.two_sided = two_sided;
  c1000.n_iters = 1000;
  for (int t = 0; t < instances; ++t) {
    const auto k = static_cast<std::size_t>(2 + rng.below(15));
    const auto b = static_cast<std::size_t>(1 + rng.below(8));
    const auto u = random_prior(rng, k);
    const auto c = normal(rng, {k, b}, score_scale);
    const auto a = align::sinkhorn_targets(c, u, c3).p;
    const auto o = align::sinkhorn_targets(c, u, c1000).p;
    double worst = 0.0;
    for (std::size_t j = 0; j < b; ++j) worst = std::max(worst, column_tv(a, o, j));
    s.worst_tv = std::max(s.worst_tv, worst);
    s.failures += worst >= 1e-3;
  }
  return s;
}

std::vector<Check> sinkhorn_suite(int instances) {
  std::vector<Check> out;
  const align::SinkhornConfig def;
  Rng rng(31);
  double worst_col = 0.0;
  bool monotone = true;
  for (int t = 0; t < instances; ++t) {
    const auto k = static_cast<std::size_t>(2 + rng.below(15));
    const auto b = static_cast<std::size_t>(1 + rng.below(8));
    const auto u = random_prior(rng, k);
    const auto c = normal(rng, {k, b}, t % 2 ? 1.0 : 0.01);
    align::SinkhornConfig cfg = def;
    cfg.n_iters = 1 + static_cast<int>(rng.below(30));
    const auto r = align::sinkhorn_targets(c, u, cfg);
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += r.p.at(i, j);
      worst_col = std::max(worst_col, std::abs(s - 1.0));
    }
    for (std::size_t i = 1; i < r.row_tv.size(); ++i)
      monotone = monotone && r.row_tv[i] <= r.row_tv[i - 1] + 1e-12;
  }
  out.push_back({"sinkhorn.column_sums", worst_col < 1e-6, fmt("max |col sum - 1| %.3g", worst_col)});
  out.push_back({"sinkhorn.row_tv_monotone", monotone, "row-sum TV to the prior per iteration"});

  // B = 1 against u * softmax(C / eps)
  double err_default = 0.0, err_one = 0.0;
  align::SinkhornConfig one = def;
  one.two_sided = false;
  for (int t = 0; t < instances; ++t) {
    const auto k = static_cast<std::size_t>(2 + rng.below(15));
    const auto u = random_prior(rng, k);
    const auto c = normal(rng, {k, 1}, 0.01);
    std::vector<double> want(k);
    double m = -1e300, z = 0.0;
    for (std::size_t i = 0; i < k; ++i) m = std::max(m, c[i]);
    for (std::size_t i = 0; i < k; ++i) z += (want[i] = u[i] * std::exp((c[i] - m) / def.epsilon));
    const auto pd = align::sinkhorn_targets(c, u, def).p;
    const auto p1 = align::sinkhorn_targets(c, u, one).p;
    for (std::size_t i = 0; i < k; ++i) {
      err_default = std::max(err_default, std::abs(pd[i] - want[i] / z));
      err_one = std::max(err_one, std::abs(p1[i] - want[i] / z));
    }
  }
  out.push_back({"sinkhorn.single_column_closed_form", err_default < 1e-9,
                 fmt("default (two-sided) max err %.3g", err_default) +
                     fmt("; one-sided %.3g", err_one)});

  const auto sweep = sinkhorn_oracle_sweep(1.0, def.two_sided, instances, 41);
  std::string detail = fmt("N(0,1) scores: worst TV %.3g, ", sweep.worst_tv) +
                       std::to_string(sweep.failures) + "/" + std::to_string(instances) +
                       " over 1e-3; by scale:";
  for (double sc : {0.001, 0.0025, 0.01, 0.1}) {
    const auto s = sinkhorn_oracle_sweep(sc, def.two_sided, instances, 41);
    detail += fmt(" %g", sc) + "->" + std::to_string(s.failures);
  }
  out.push_back({"sinkhorn.three_iterations_vs_oracle", sweep.failures == 0, detail});
  return out;
}

std::vector<Check> freeze_suite() {
  std::vector<Check> out;
  const auto cfg = tiny_model_config();
  const auto batch = tiny_batch(cfg);
  const auto vocab = corpus::Vocabulary::standard();
  const auto prior = corpus::compute_prior(vocab, {"a large red circle at top left"});

  {
    Model<double> model(cfg, 5);
    LossSettings<double> ls;
    ls.alpha = 0.05;
    ls.prior = &prior;
    auto r = compute_loss(model, batch, ls);
    ad::backward(r.l_align);
    bool dec_zero = true, enc_nonzero = false, ad_nonzero = false;
    for (const auto& p : model.store.all()) {
      const bool zero = !p.var.has_grad() || all_zero(p.var.grad());
      if (p.name.rfind("decoder.", 0) == 0) dec_zero = dec_zero && zero;
      if (p.name.rfind("encoder.", 0) == 0) enc_nonzero = enc_nonzero || !zero;
      if (p.name.rfind("adapter.", 0) == 0) ad_nonzero = ad_nonzero || !zero;
    }
    out.push_back({"freeze.alignment_gradient_stop", dec_zero && enc_nonzero,
                   std::string("decoder and W grads ") + (dec_zero ? "zero" : "NONZERO") +
                       ", encoder grads " + (enc_nonzero ? "nonzero" : "ZERO") +
                       ", adapter grads " + (ad_nonzero ? "nonzero" : "zero")});
  }
  {
    Model<double> model(cfg, 5);
    LossSettings<double> ls;
    ls.alpha = 0.05;
    ls.prior = &prior;
    ls.strict_vision_only = true;
    ad::backward(compute_loss(model, batch, ls).l_align);
    bool others_zero = true, enc_nonzero = false;
    for (const auto& p : model.store.all()) {
      const bool zero = !p.var.has_grad() || all_zero(p.var.grad());
      if (p.name.rfind("encoder.", 0) == 0)
        enc_nonzero = enc_nonzero || !zero;
      else
        others_zero = others_zero && zero;
    }
    out.push_back({"freeze.strict_vision_only", others_zero && enc_nonzero,
                   "alignment reaches the encoder only"});
  }
  {
    // With and without the alignment term: W's gradient is unchanged and
    // the encoder's moves.
    auto grads = [&](double alpha) {
      Model<double> model(cfg, 5);
      LossSettings<double> ls;
      ls.alpha = alpha;
      ls.prior = &prior;
      ad::backward(compute_loss(model, batch, ls).total);
      return std::make_pair(model.store.get("decoder.embed").var.grad(),
                            model.store.get("encoder.patch_proj").var.grad());
    };
    const auto [w1, e1] = grads(0.05);
    const auto [w0, e0] = grads(0.0);
    const double dw = max_relative_error(w1, w0), de = max_relative_error(e1, e0);
    out.push_back({"freeze.prototype_gradient_unchanged", dw < 1e-12 && de > 1e-9,
                   fmt("W rel diff %.3g", dw) + fmt(", encoder rel diff %.3g", de)});
  }
  {
    // A few stage-I steps on the f32 path leave encoder and decoder bytes
    // untouched and move the adapter.
    Model<float> model(cfg, 9);
    std::map<std::string, std::vector<float>> before;
    for (const auto& p : model.store.all()) before[p.name] = p.var.value().storage();
    corpus::CorpusConfig cc;
    cc.min_side = 16;
    cc.max_side = 48;
    train::DataSource data(cc, vocab, cfg.encoder.patch, cfg.align_unit());
    auto sc = train::StageConfig::defaults(train::StageId::I);
    sc.num_pairs = 8;
    sc.batch_size = 4;
    sc.resolution = ResolutionPolicy::fixed(16);
    Rng rng(1);
    std::uint64_t step = 0;
    bool only_adapter_grads = true;
    {
      // gradient provenance for one stage-I batch
      auto groups = train::build_param_groups(model.store, sc);
      train::apply_trainability(model.store, groups);
      LossSettings<float> ls;
      ls.mode = sc.rotary_mode;
      ls.alpha = sc.alpha;
      ls.prior = &prior;
      const auto b = data.samples(corpus::Split::train, train::DataKind::captions, {0, 1},
                                  sc.resolution);
      ad::backward(compute_loss(model, b, ls).total);
      for (const auto& p : model.store.all())
        if (p.var.has_grad() && p.name.rfind("adapter.", 0) != 0) only_adapter_grads = false;
      model.store.zero_grad();
    }
    train::run_stage(sc, data, model, prior, rng, step);
    bool frozen_same = true, adapter_moved = false;
    for (const auto& p : model.store.all()) {
      const bool same = before[p.name] == p.var.value().storage();
      if (p.name.rfind("adapter.", 0) == 0)
        adapter_moved = adapter_moved || !same;
      else
        frozen_same = frozen_same && same;
    }
    out.push_back({"freeze.stage_I_parameter_bytes", frozen_same && adapter_moved,
                   std::string("encoder+decoder ") + (frozen_same ? "identical" : "CHANGED") +
                       ", adapter " + (adapter_moved ? "updated" : "NOT UPDATED") + " after " +
                       std::to_string(step) + " steps"});
    out.push_back({"freeze.stage_I_gradient_provenance", only_adapter_grads,
                   "only adapter parameters receive gradient"});
  }
  return out;
}

std::vector<Check> run_suite(const std::string& name) {
  if (name == "gradcheck") return gradcheck_suite();
  if (name == "sinkhorn") return sinkhorn_suite();
  if (name == "rope") return rope_suite();
  if (name == "freeze") return freeze_suite();
  if (name == "all") {
    std::vector<Check> all;
    for (const char* s : {"gradcheck", "sinkhorn", "rope", "freeze"}) {
      auto part = run_suite(s);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw ConfigError("unknown suite '" + name + "'");
}

}  // namespace vlcp::verify
