#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "vlcp/error.hpp"
#include "vlcp/patcher.hpp"
#include "vlcp/random.hpp"

using namespace vlcp;

namespace {

ImageSpec random_image(Rng& rng, int h, int w) {
  ImageSpec img = ImageSpec::blank(h, w);
  for (auto& v : img.pixels.storage()) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("native rounding snaps to the nearest patch multiple") {
  const auto r = resolve_resolution(389, 389, ResolutionPolicy::native(), 14);
  CHECK(r == Resolution{392, 392});
  CHECK(r.height / 14 == 28);

  const auto s = resolve_resolution(378, 378, ResolutionPolicy::native(), 14);
  CHECK(s == Resolution{378, 378});
  CHECK((s.height / 14) * (s.width / 14) == 729);

  // ties round up, tiny images get one patch
  CHECK(resolve_resolution(7, 21, ResolutionPolicy::native(), 14) == Resolution{14, 28});
  CHECK(resolve_resolution(1, 1, ResolutionPolicy::native(), 14) == Resolution{14, 14});
}

TEST_CASE("token cap scales both sides") {
  const auto r = resolve_resolution(1400, 1400, ResolutionPolicy::native(2500), 14);
  CHECK(r == Resolution{700, 700});
  CHECK((r.height / 14) * (r.width / 14) == 2500);
}

TEST_CASE("fixed policy and argument errors") {
  CHECK(resolve_resolution(50, 900, ResolutionPolicy::fixed(224), 14) == Resolution{224, 224});
  CHECK_THROWS_AS(resolve_resolution(0, 10, ResolutionPolicy::native(), 14), ParameterError);
  CHECK_THROWS_AS(resolve_resolution(10, -3, ResolutionPolicy::native(), 14), ParameterError);
  CHECK_THROWS_AS(resolve_resolution(10, 10, ResolutionPolicy::fixed(100), 14), ParameterError);
  CHECK_THROWS_AS(resolve_resolution(10, 10, ResolutionPolicy::native(0), 14), ParameterError);
  CHECK_THROWS_AS(resolve_resolution(10, 10, ResolutionPolicy::native(), 14, 20), ParameterError);
}

TEST_CASE("budget holds and aspect stays within a patch unit") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const int h = 1 + static_cast<int>(rng.below(2000));
    const int w = 1 + static_cast<int>(rng.below(2000));
    const int cap = 1 + static_cast<int>(rng.below(400));
    const int align = rng.below(2) ? 14 : 28;
    const int unit_tokens = (align / 14) * (align / 14);
    if (cap < unit_tokens) continue;
    const auto base = resolve_resolution(h, w, ResolutionPolicy::native(), 14, align);
    const auto r = resolve_resolution(h, w, ResolutionPolicy::native(cap), 14, align);
    CHECK(r.height % align == 0);
    CHECK(r.width % align == 0);
    const int n = (r.height / 14) * (r.width / 14);
    CHECK(n <= cap);
    CHECK(n >= unit_tokens);
    if ((base.height / 14) * (base.width / 14) <= cap) {
      CHECK(r == base);
    } else if (r.height > align && r.width > align) {
      // Same aspect ratio up to one unit on the short side.
      const double aspect = static_cast<double>(base.width) / base.height;
      const double implied_w = r.height * aspect;
      CHECK(std::abs(implied_w - r.width) <= align * (1.0 + aspect) + 1e-9);
    }
  }
}

TEST_CASE("patchify examples") {
  Rng rng(1);
  auto one = patchify(random_image(rng, 14, 14), 14);
  CHECK(one.count() == 1);
  CHECK(one.coords == std::vector<GridCoord>{{0, 0}});

  auto two = patchify(random_image(rng, 28, 14), 14);
  CHECK(two.count() == 2);
  CHECK(two.coords == std::vector<GridCoord>{{0, 0}, {1, 0}});

  auto flat = patchify(ImageSpec::blank(56, 56, 3, 0.25f), 14);
  CHECK(flat.count() == 16);
  for (std::size_t n = 1; n < 16; ++n)
    for (std::size_t j = 0; j < flat.patches.cols(); ++j)
      CHECK(flat.patches.at(n, j) == flat.patches.at(0, j));

  CHECK_THROWS_AS(patchify(random_image(rng, 30, 28), 14), ContractError);
}

TEST_CASE("patch layout is channel-major within a patch") {
  ImageSpec img = ImageSpec::blank(4, 4, 2);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) img.px(c, y, x) = static_cast<float>(100 * c + 10 * y + x);
  const auto g = patchify(img, 2);
  // patch (0,1): channel 0 rows 0..1, cols 2..3, then channel 1
  const std::vector<float> want{2, 3, 12, 13, 102, 103, 112, 113};
  for (std::size_t j = 0; j < want.size(); ++j) CHECK(g.patches.at(1, j) == want[j]);
}

TEST_CASE("patch-count law and round trip over random sizes") {
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    const int h = 1 + static_cast<int>(rng.below(300));
    const int w = 1 + static_cast<int>(rng.below(300));
    const auto r = resolve_resolution(h, w, ResolutionPolicy::native(), 14);
    const auto img = random_image(rng, r.height, r.width);
    const auto g = patchify(img, 14);
    CHECK(g.count() == static_cast<std::size_t>(r.height / 14) * (r.width / 14));
    std::set<std::pair<int, int>> seen;
    for (auto c : g.coords) seen.insert({c.row, c.col});
    CHECK(seen.size() == g.count());
    const auto back = unpatchify(g);
    CHECK(back.height == img.height);
    CHECK(back.width == img.width);
    CHECK(back.pixels.storage() == img.pixels.storage());
  }
}

TEST_CASE("bilinear resize") {
  Rng rng(5);
  const auto img = random_image(rng, 17, 9);
  const auto same = resize_bilinear(img, 17, 9);
  CHECK(same.pixels.storage() == img.pixels.storage());

  ImageSpec cb = ImageSpec::blank(2, 2, 1);
  cb.px(0, 0, 1) = 1.0f;
  cb.px(0, 1, 0) = 1.0f;
  const auto up = resize_bilinear(cb, 3, 3);
  CHECK(up.px(0, 1, 1) == 0.5f);
  CHECK(up.px(0, 0, 0) == 0.0f);
  CHECK(up.px(0, 0, 2) == 1.0f);

  const auto flat = ImageSpec::blank(5, 7, 3, 0.3f);
  for (auto [h, w] : std::vector<std::pair<int, int>>{{1, 1}, {3, 11}, {40, 2}}) {
    const auto out = resize_bilinear(flat, h, w);
    for (float v : out.pixels.values()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
  }
}

TEST_CASE("pixel normalization") {
  auto img = ImageSpec::blank(1, 3, 1);
  img.px(0, 0, 1) = 0.5f;
  img.px(0, 0, 2) = 1.0f;
  const auto n = normalize_pixels(img);
  CHECK(n.px(0, 0, 0) == -1.0f);
  CHECK(n.px(0, 0, 1) == 0.0f);
  CHECK(n.px(0, 0, 2) == 1.0f);
}

TEST_CASE("CPGR dump round trip") {
  Rng rng(9);
  const auto g = patchify(random_image(rng, 28, 42), 14);
  std::stringstream ss;
  write_patch_grid(ss, g);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "CPGR");
  CHECK(bytes.size() == 4 + 5 * 4 + g.patches.size() * 4);
  const auto back = read_patch_grid(ss);
  CHECK(back.rows == 2);
  CHECK(back.cols == 3);
  CHECK(back.patch == 14);
  CHECK(back.channels == 3);
  CHECK(back.coords == g.coords);
  CHECK(back.patches.storage() == g.patches.storage());

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_patch_grid(bad), ContractError);
  std::stringstream cut(bytes.substr(0, 30));
  CHECK_THROWS_AS(read_patch_grid(cut), ContractError);
}
