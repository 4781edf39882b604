#include <doctest.h>

#include <sstream>

#include "vlcp/checkpoint.hpp"
#include "vlcp/model.hpp"
#include "vlcp/verify.hpp"

using namespace vlcp;

namespace {

std::string write(const ad::ParameterStore<float>& s, const CheckpointMeta& m,
                  const std::vector<double>& prior) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, s, m, prior);
  return out.str();
}

Checkpoint read(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_checkpoint(in);
}

}  // namespace

TEST_CASE("fixed byte layout") {
  ad::ParameterStore<float> s;
  s.add("b", Tensor<float>({1}, {1.0f}));
  s.add("a", Tensor<float>({1, 2}, {-2.0f, 0.5f}));
  const auto bytes = write(s, {"I", 3, "r"}, {});
  const std::string want =
      std::string("CMPK") + std::string("\x01\x00\x00\x00", 4) +          // version
      std::string("\x01\x00\x00\x00", 4) + "I" +                          // stage
      std::string("\x03\0\0\0\0\0\0\0", 8) +                              // step
      std::string("\x01\x00\x00\x00", 4) + "r" +                          // rng state
      std::string("\x02\x00\x00\x00", 4) +                                // records
      std::string("\x01\x00\x00\x00", 4) + "a" + std::string("\x00", 1) +  // name, f32
      std::string("\x02\x00\x00\x00", 4) + std::string("\x01\0\0\0\0\0\0\0", 8) +
      std::string("\x02\0\0\0\0\0\0\0", 8) + std::string("\x00\x00\x00\xc0", 4) +
      std::string("\x00\x00\x00\x3f", 4) +                                 // -2, 0.5
      std::string("\x01\x00\x00\x00", 4) + "b" + std::string("\x00", 1) +
      std::string("\x01\x00\x00\x00", 4) + std::string("\x01\0\0\0\0\0\0\0", 8) +
      std::string("\x00\x00\x80\x3f", 4);                                  // 1.0
  CHECK(bytes == want);
}

TEST_CASE("model round trip") {
  Model<float> a(verify::tiny_model_config(), 1), b(verify::tiny_model_config(), 2);
  Rng rng(9);
  rng.next_u64();
  const std::vector<double> prior{0.25, 0.5, 0.25};
  const CheckpointMeta meta{"II-native", 1234, rng.state()};
  const auto bytes = write(a.store, meta, prior);
  const auto ck = read(bytes);
  CHECK(ck.meta == meta);
  CHECK(ck.prior == prior);
  CHECK(ck.tensors.size() == a.store.all().size());
  apply_checkpoint(ck, b.store);
  for (const auto& p : a.store.all())
    CHECK(b.store.get(p.name).var.value().storage() == p.var.value().storage());
  CHECK(write(b.store, meta, prior) == bytes);
  Rng back;
  back.set_state(ck.meta.rng_state);
  CHECK(back == rng);
}

TEST_CASE("corrupt and mismatched files") {
  Model<float> a(verify::tiny_model_config(), 1);
  const auto bytes = write(a.store, {"I", 1, ""}, {0.5, 0.5});
  CHECK_THROWS_AS(read(""), CheckpointError);
  CHECK_THROWS_AS(read("XMPK" + bytes.substr(4)), CheckpointError);
  CHECK_THROWS_AS(read(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(read(bytes + "x"), CheckpointError);
  auto v2 = bytes;
  v2[4] = 2;
  CHECK_THROWS_AS(read(v2), CheckpointError);
  for (std::size_t cut : {5ul, 17ul, 40ul, bytes.size() / 2}) CHECK_THROWS_AS(read(bytes.substr(0, cut)), CheckpointError);

  ad::ParameterStore<float> other;
  other.add("adapter.x", Tensor<float>({2}));
  CHECK_THROWS_AS(apply_checkpoint(read(bytes), other), CheckpointError);
  Model<float> wider(
      [] {
        auto c = verify::tiny_model_config();
        c.decoder.mlp_ratio = 4;
        return c;
      }(),
      1);
  CHECK_THROWS_AS(apply_checkpoint(read(bytes), wider.store), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.cmpk"), CheckpointError);
}
