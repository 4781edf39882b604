#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "vlcp/encoder.hpp"
#include "vlcp/ops.hpp"

using namespace vlcp;
using crope::RotaryMode;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.layers = 2;
  c.width = 16;
  c.heads = 2;
  c.patch = 2;
  c.mlp_ratio = 2;
  c.pos_grid = 3;
  return c;
}

PatchGrid random_grid(Rng& rng, int rows, int cols, int patch) {
  ImageSpec img = ImageSpec::blank(rows * patch, cols * patch);
  for (auto& v : img.pixels.storage()) v = static_cast<float>(rng.uniform());
  return patchify(img, patch);
}

void zero(ad::Var<double> v) { v.mutable_value() = Tensor<double>(v.shape()); }

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.width = 12;  // head_dim 6 is not a multiple of 4
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("embedding contracts") {
  Rng init(1), rng(2);
  ad::ParameterStore<double> store;
  auto cfg = small_config();
  Encoder<double> enc(cfg, store, init);
  CHECK(store.contains("encoder.patch_proj"));
  CHECK(store.contains("encoder.pos_embed"));
  CHECK(store.contains("encoder.block1.attn.q.weight"));

  zero(store.get("encoder.pos_embed").var);
  auto blank = patchify(ImageSpec::blank(4, 6), 2);
  const auto z0 = enc.embed(blank, RotaryMode::crope).value();
  for (double v : z0.values()) CHECK(v == 0.0);

  auto g = random_grid(rng, 2, 3, 2);
  CHECK(enc.embed(g, RotaryMode::crope).rows() == 6);
  CHECK_THROWS_AS(enc.embed(random_grid(rng, 1, 1, 4), RotaryMode::crope), ContractError);
}

TEST_CASE("single patch at the source grid size") {
  Rng init(1), rng(3);
  ad::ParameterStore<double> store;
  auto cfg = small_config();
  cfg.pos_grid = 1;
  Encoder<double> enc(cfg, store, init);
  auto g = random_grid(rng, 1, 1, 2);
  const auto z = enc.embed(g, RotaryMode::crope).value();
  const auto& e = enc.patch_proj().value();
  const auto& pos = enc.pos_table().value();
  for (std::size_t j = 0; j < 16; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < e.rows(); ++i) s += double(g.patches.at(0, i)) * e.at(i, j);
    CHECK(z.at(0, j) == doctest::Approx(s + pos.at(0, j)).epsilon(1e-13));
  }
  // rope2d_only drops the table
  const auto r = enc.embed(g, RotaryMode::rope2d_only).value();
  CHECK(r.at(0, 0) == doctest::Approx(z.at(0, 0) - pos.at(0, 0)).epsilon(1e-12));
}

TEST_CASE("attention block contracts") {
  Rng init(4), rng(5);
  ad::ParameterStore<double> store;
  Encoder<double> enc(small_config(), store, init);
  auto& b = enc.blocks()[0];

  SUBCASE("single token") {
    auto z = ad::constant(test::random_tensor(rng, {1, 16}));
    const auto y = enc.attention_block(0, z, {{3, 4}}, RotaryMode::crope).value();
    const auto want = ad::add(z, b.o(b.v(b.norm1(z)))).value();
    for (std::size_t j = 0; j < 16; ++j) CHECK(y[j] == doctest::Approx(want[j]).epsilon(1e-12));
  }
  SUBCASE("zero projections") {
    for (auto* l : {&b.q, &b.k, &b.v, &b.o}) {
      zero(l->weight);
      zero(l->bias);
    }
    auto z = ad::constant(test::random_tensor(rng, {5, 16}));
    std::vector<GridCoord> c{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}};
    CHECK(enc.attention_block(0, z, c, RotaryMode::crope).value().storage() ==
          z.value().storage());
  }
  SUBCASE("zero ffn") {
    zero(b.fc2.weight);
    zero(b.fc2.bias);
    auto y = ad::constant(test::random_tensor(rng, {3, 16}));
    CHECK(enc.ffn_block(0, y).value().storage() == y.value().storage());
  }
}

TEST_CASE("block gradients match finite differences") {
  Rng init(6), rng(7);
  ad::ParameterStore<double> store;
  Encoder<double> enc(small_config(), store, init);
  std::vector<GridCoord> c{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (auto mode : {RotaryMode::crope, RotaryMode::learned_only}) {
    const double ea = test::gradcheck(
        [&](const std::vector<ad::Var<double>>& x) {
          return ad::sum_all(enc.attention_block(0, x[0], c, mode));
        },
        {test::random_tensor(rng, {4, 16})});
    CHECK(ea < 1e-4);
  }
  for (std::size_t n : {1, 4, 7}) {
    const double ef = test::gradcheck(
        [&](const std::vector<ad::Var<double>>& x) {
          return ad::sum_all(enc.ffn_block(1, x[0]));
        },
        {test::random_tensor(rng, {n, 16})});
    CHECK(ef < 1e-4);
    CHECK(enc.ffn_block(1, ad::constant(test::random_tensor(rng, {n, 16}))).rows() == n);
  }
}

TEST_CASE("encode shape law and policy equivalence") {
  Rng init(8), rng(9);
  ad::ParameterStore<float> store;
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.width = 32;
  cfg.heads = 4;
  cfg.patch = 14;
  Encoder<float> enc(cfg, store, init);
  ImageSpec img = ImageSpec::blank(28, 28);
  for (auto& v : img.pixels.storage()) v = static_cast<float>(rng.uniform());
  const auto f = enc.encode(img, ResolutionPolicy::native(), RotaryMode::crope, 14);
  CHECK(f.z.shape() == Shape{4, 32});

  ImageSpec big = ImageSpec::blank(112, 112);
  for (auto& v : big.pixels.storage()) v = static_cast<float>(rng.uniform());
  const auto a = enc.encode(big, ResolutionPolicy::native(), RotaryMode::crope, 28);
  const auto b = enc.encode(big, ResolutionPolicy::fixed(112), RotaryMode::crope, 28);
  CHECK(a.z.value().storage() == b.z.value().storage());
}

TEST_CASE("identical patches swap to identical rows") {
  Rng init(10);
  ad::ParameterStore<double> store;
  Encoder<double> enc(small_config(), store, init);
  auto g = patchify(ImageSpec::blank(4, 4, 3, 0.4f), 2);
  const auto z = enc.forward(g, RotaryMode::crope).z.value();
  auto g2 = g;
  for (std::size_t j = 0; j < g.patches.cols(); ++j)
    std::swap(g2.patches.at(0, j), g2.patches.at(3, j));
  CHECK(enc.forward(g2, RotaryMode::crope).z.value().storage() == z.storage());
}

TEST_CASE("rope2d_only encoding ignores a global coordinate shift") {
  Rng init(11), rng(12);
  ad::ParameterStore<double> store;
  Encoder<double> enc(small_config(), store, init);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = random_grid(rng, 1 + static_cast<int>(rng.below(4)),
                         1 + static_cast<int>(rng.below(4)), 2);
    const auto z = enc.forward(g, RotaryMode::rope2d_only).z.value();
    const int dy = static_cast<int>(rng.below(30)), dx = static_cast<int>(rng.below(30));
    for (auto& c : g.coords) c = {c.row + dy, c.col + dx};
    const auto s = enc.forward(g, RotaryMode::rope2d_only).z.value();
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - s[i]) < 1e-5);
  }
}

TEST_CASE("learned_only is crope with the rotation removed") {
  Rng init(13), rng(14);
  ad::ParameterStore<double> store;
  Encoder<double> enc(small_config(), store, init);
  auto g = random_grid(rng, 2, 3, 2);
  const auto base = enc.forward(g, RotaryMode::learned_only).z.value();
  const auto rotated = enc.forward(g, RotaryMode::crope).z.value();
  CHECK(base.storage() != rotated.storage());
  for (auto& c : g.coords) c = {0, 0};
  // zero coordinates give the identity rotation
  CHECK(enc.forward(g, RotaryMode::crope).z.value().storage() == base.storage());
}

TEST_CASE("every grid size up to the budget encodes") {
  Rng init(15), rng(16);
  ad::ParameterStore<float> store;
  auto cfg = small_config();
  Encoder<float> enc(cfg, store, init);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 1 + static_cast<int>(rng.below(40));
    const int w = 1 + static_cast<int>(rng.below(40));
    ImageSpec img = ImageSpec::blank(h, w);
    const auto f = enc.encode(img, ResolutionPolicy::native(64), RotaryMode::crope, 2);
    CHECK(f.z.rows() == static_cast<std::size_t>(f.rows * f.cols));
    CHECK(f.z.rows() <= 64u);
  }
}
