#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "vlcp/lm.hpp"
#include "vlcp/ops.hpp"

using namespace vlcp;

namespace {

DecoderConfig small_decoder(int vocab = 11) {
  DecoderConfig c;
  c.layers = 2;
  c.width = 16;
  c.heads = 2;
  c.vocab = vocab;
  c.max_positions = 64;
  c.mlp_ratio = 2;
  return c;
}

VisualFeatures<double> features(Rng& rng, int rows, int cols, int width) {
  VisualFeatures<double> f;
  f.rows = rows;
  f.cols = cols;
  f.z = ad::leaf(test::random_tensor(rng, {static_cast<std::size_t>(rows * cols),
                                           static_cast<std::size_t>(width)}));
  return f;
}

std::vector<std::int32_t> random_ids(Rng& rng, std::size_t n, int vocab) {
  std::vector<std::int32_t> ids(n);
  for (auto& i : ids) i = static_cast<std::int32_t>(rng.below(vocab));
  return ids;
}

}  // namespace

TEST_CASE("adapter merge law") {
  Rng init(1), rng(2);
  ad::ParameterStore<double> store;
  Adapter<double> ad_(AdapterConfig{8, 16}, store, init);
  CHECK(store.contains("adapter.fc1.weight"));
  CHECK(store.get("adapter.fc1.weight").var.shape() == Shape{32, 16});

  auto one = ad_.project(features(rng, 2, 2, 8));
  CHECK(one.h.shape() == Shape{1, 16});
  auto many = ad_.project(features(rng, 24, 24, 8));
  CHECK(many.h.rows() == 144u);
  CHECK(many.rows == 12);
  CHECK(many.cols == 12);

  VisualFeatures<double> flat;
  flat.rows = 4;
  flat.cols = 6;
  flat.z = ad::constant(Tensor<double>::full({24, 8}, 0.3));
  const auto h = ad_.project(flat).h.value();
  for (std::size_t r = 1; r < h.rows(); ++r)
    for (std::size_t j = 0; j < h.cols(); ++j) CHECK(h.at(r, j) == h.at(0, j));

  CHECK_THROWS_AS(ad_.project(features(rng, 3, 2, 8)), ContractError);
  CHECK_THROWS_AS(ad_.project(features(rng, 2, 2, 4)), ContractError);
}

TEST_CASE("adapter merge order") {
  Rng init(1);
  ad::ParameterStore<double> store;
  Adapter<double> ad_(AdapterConfig{1, 4}, store, init);
  // Width-1 features numbered by patch index on a 2x4 grid.
  VisualFeatures<double> f;
  f.rows = 2;
  f.cols = 4;
  f.z = ad::leaf(Tensor<double>({8, 1}, {0, 1, 2, 3, 4, 5, 6, 7}));
  auto hv = ad_.project(f);
  ad::backward(ad::sum_all(hv.h));
  // Swapping the two merged blocks swaps the output rows.
  VisualFeatures<double> g = f;
  g.z = ad::constant(Tensor<double>({8, 1}, {2, 3, 0, 1, 6, 7, 4, 5}));
  const auto a = hv.h.value();
  const auto b = ad_.project(g).h.value();
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(a.at(0, j) == b.at(1, j));
    CHECK(a.at(1, j) == b.at(0, j));
  }
}

TEST_CASE("adapter gradient") {
  Rng init(3), rng(4);
  ad::ParameterStore<double> store;
  Adapter<double> ad_(AdapterConfig{8, 16}, store, init);
  const double err = test::gradcheck(
      [&](const std::vector<ad::Var<double>>& x) {
        VisualFeatures<double> f{x[0], 2, 4, {}};
        auto h = ad_.project(f).h;
        return ad::sum_all(ad::mul(h, h));
      },
      {test::random_tensor(rng, {8, 8})});
  CHECK(err < 1e-4);
}

TEST_CASE("uniform logits give ln K") {
  Rng init(5), rng(6);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  store.get("decoder.embed").var.mutable_value() = Tensor<double>({11, 16});
  VisualTokens<double> hv{ad::constant(test::random_tensor(rng, {3, 16})), 1, 3};
  TokenSequence seq{random_ids(rng, 5, 11)};
  CHECK(decode_loss(dec, hv, seq).value()[0] == doctest::Approx(std::log(11.0)).epsilon(1e-12));
}

TEST_CASE("hand softmax example") {
  Tensor<double> logits({1, 4}, {0, 0, 0, std::log(3.0)});
  const auto l = ad::cross_entropy(ad::constant(logits), {3});
  CHECK(l.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("supervised positions") {
  Rng init(7), rng(8);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  VisualTokens<double> hv{ad::constant(test::random_tensor(rng, {2, 16})), 1, 2};
  TokenSequence seq{random_ids(rng, 6, 11)};
  CHECK(decode_terms(dec, hv, seq).count == 6);
  CHECK(decode_terms(dec, VisualTokens<double>{}, seq).count == 5);
  seq.supervise_from = 4;
  CHECK(decode_terms(dec, hv, seq).count == 2);
  TokenSequence one{{3}};
  CHECK(decode_terms(dec, hv, one).count == 1);
  CHECK_THROWS_AS(decode_terms(dec, VisualTokens<double>{}, one), ContractError);
  CHECK_THROWS_AS(decode_terms(dec, hv, TokenSequence{}), ContractError);
  CHECK_THROWS_AS(decode_terms(dec, hv, TokenSequence{{3, 11}}), ContractError);
  CHECK(decode_loss(dec, hv, seq).value()[0] > 0.0);
}

TEST_CASE("causal mask") {
  Rng init(9), rng(10);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  const auto prefix = ad::constant(test::random_tensor(rng, {3, 16}));
  for (int trial = 0; trial < 10; ++trial) {
    auto ids = random_ids(rng, 8, 11);
    const std::size_t t = rng.below(8);
    for (bool with_prefix : {false, true}) {
      const ad::Var<double> p = with_prefix ? prefix : ad::Var<double>();
      const std::size_t v = with_prefix ? 3 : 0;
      const auto a = dec.logits(dec.hidden(p, ids)).value();
      auto changed = ids;
      changed[t] = (changed[t] + 1) % 11;
      const auto b = dec.logits(dec.hidden(p, changed)).value();
      for (std::size_t r = 0; r < v + t; ++r)
        for (std::size_t j = 0; j < a.cols(); ++j) CHECK(a.at(r, j) == b.at(r, j));
      bool differs = false;
      for (std::size_t j = 0; j < a.cols(); ++j) differs |= a.at(v + t, j) != b.at(v + t, j);
      CHECK(differs);
    }
  }
}

TEST_CASE("text-only forward") {
  Rng init(11), rng(12);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  CHECK(dec.forward_text_only(TokenSequence{{4}}).shape() == Shape{1, 16});
  TokenSequence seq{random_ids(rng, 5, 11)};
  const auto plain = dec.forward_text_only(seq).value();
  const auto with = dec.hidden(ad::constant(test::random_tensor(rng, {2, 16})), seq.ids).value();
  bool differs = false;
  for (std::size_t j = 0; j < 16; ++j) differs |= plain.at(0, j) != with.at(2, j);
  CHECK(differs);
}

TEST_CASE("weight tying") {
  Rng init(13), rng(14);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  std::size_t embeds = 0;
  for (const auto& p : store.all()) embeds += p.name.find("embed") != std::string::npos;
  CHECK(embeds == 1);
  TokenSequence seq{{1, 2, 3}};
  const auto before_h = dec.forward_text_only(seq).value();
  const auto before_l = dec.logits(dec.forward_text_only(seq)).value();
  // Changing the row of an unused word moves only its logit column.
  store.get("decoder.embed").var.mutable_value().at(7, 0) += 1.0;
  const auto after_h = dec.forward_text_only(seq).value();
  const auto after_l = dec.logits(dec.forward_text_only(seq)).value();
  CHECK(after_h.storage() == before_h.storage());
  CHECK(after_l.at(0, 7) != before_l.at(0, 7));
  CHECK(after_l.at(0, 6) == before_l.at(0, 6));
  // Changing a used word moves the hidden states.
  store.get("decoder.embed").var.mutable_value().at(1, 0) += 1.0;
  CHECK(dec.forward_text_only(seq).value().storage() != before_h.storage());
}

TEST_CASE("decoder gradient") {
  Rng init(15), rng(16);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  TokenSequence seq{random_ids(rng, 4, 11)};
  const double err = test::gradcheck(
      [&](const std::vector<ad::Var<double>>& x) {
        return decode_loss(dec, VisualTokens<double>{x[0], 1, 2}, seq);
      },
      {test::random_tensor(rng, {2, 16})});
  CHECK(err < 1e-4);
}

TEST_CASE("greedy decode stops at eos or the limit") {
  Rng init(17), rng(18);
  ad::ParameterStore<double> store;
  Decoder<double> dec(small_decoder(), store, init);
  VisualTokens<double> hv{ad::constant(test::random_tensor(rng, {2, 16})), 1, 2};
  const auto out = greedy_decode(dec, hv, {1}, 2, 6);
  CHECK(!out.empty());
  CHECK(out.size() <= 6);
  for (std::size_t i = 0; i + 1 < out.size(); ++i) CHECK(out[i] != 2);
  // Deterministic.
  CHECK(greedy_decode(dec, hv, {1}, 2, 6) == out);
}
