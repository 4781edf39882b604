#include "vlcp/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "vlcp/align.hpp"
#include "vlcp/random.hpp"

namespace vlcp::corpus {

namespace {

constexpr std::array<const char*, kColors> kColorNames{"red",    "green",  "blue",  "yellow",
                                                       "purple", "orange", "white", "black"};
constexpr std::array<std::array<float, 3>, kColors> kPalette{{{0.90f, 0.10f, 0.10f},
                                                              {0.10f, 0.75f, 0.20f},
                                                              {0.15f, 0.30f, 0.95f},
                                                              {0.95f, 0.85f, 0.10f},
                                                              {0.60f, 0.20f, 0.80f},
                                                              {1.00f, 0.55f, 0.00f},
                                                              {1.00f, 1.00f, 1.00f},
                                                              {0.00f, 0.00f, 0.00f}}};
constexpr std::array<const char*, 3> kRowNames{"top", "middle", "bottom"};
constexpr std::array<const char*, 3> kColNames{"left", "center", "right"};
constexpr std::array<const char*, 5> kNumbers{"zero", "one", "two", "three", "four"};
constexpr float kBackground = 0.5f;

}  // namespace

void CorpusConfig::validate() const {
  if (min_side < 1 || max_side < min_side)
    throw ParameterError("corpus sides need 1 <= min_side <= max_side");
  if (max_objects < 1 || max_objects > 4) throw ParameterError("max_objects must be in 1..4");
}

std::string shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::circle:
      return "circle";
    case ShapeKind::square:
      return "square";
    case ShapeKind::triangle:
      return "triangle";
    case ShapeKind::bar:
      return "bar";
  }
  return "?";
}

std::string color_name(int c) { return kColorNames.at(static_cast<std::size_t>(c)); }

std::string cell_phrase(int row, int col) {
  return std::string(kRowNames.at(row)) + " " + kColNames.at(col);
}

SceneSpec sample_scene(std::uint64_t seed, const CorpusConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  auto side = [&] {
    const double lo = std::log(static_cast<double>(cfg.min_side));
    const double hi = std::log(static_cast<double>(cfg.max_side));
    const int v = static_cast<int>(std::lround(std::exp(rng.uniform(lo, hi))));
    return std::clamp(v, cfg.min_side, cfg.max_side);
  };
  SceneSpec s;
  s.height = side();
  s.width = side();
  const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects)));
  std::array<int, kCells * kCells> cells{};
  for (int i = 0; i < kCells * kCells; ++i) cells[i] = i;
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(9 - i)));
    std::swap(cells[i], cells[j]);
  }
  std::sort(cells.begin(), cells.begin() + n);
  for (int i = 0; i < n; ++i) {
    ObjectSpec o;
    o.cell_row = cells[i] / kCells;
    o.cell_col = cells[i] % kCells;
    o.shape = static_cast<ShapeKind>(rng.below(4));
    o.color = static_cast<int>(rng.below(kColors));
    o.large = rng.below(2) == 1;
    s.objects.push_back(o);
  }
  return s;
}

namespace {

// Signed distance (pixels, positive outside) from (x, y) to the object.
double object_sdf(const ObjectSpec& o, double cx, double cy, double r, double x, double y) {
  const double dx = x - cx, dy = y - cy;
  switch (o.shape) {
    case ShapeKind::circle:
      return std::hypot(dx, dy) - r;
    case ShapeKind::square:
      return std::max(std::abs(dx), std::abs(dy)) - 0.85 * r;
    case ShapeKind::bar:
      return std::max(std::abs(dx) - 0.35 * r, std::abs(dy) - r);
    case ShapeKind::triangle: {
      // Apex up; max of distances to the three edge lines.
      const double ax = cx, ay = cy - r;
      const double bx = cx + 0.95 * r, by = cy + 0.8 * r;
      const double qx = cx - 0.95 * r, qy = by;
      auto edge = [&](double x0, double y0, double x1, double y1) {
        const double ex = x1 - x0, ey = y1 - y0;
        const double len = std::hypot(ex, ey);
        // outward normal for clockwise winding in image coordinates
        return ((x - x0) * ey - (y - y0) * ex) / len;
      };
      return std::max({edge(ax, ay, bx, by), edge(bx, by, qx, qy), edge(qx, qy, ax, ay)});
    }
  }
  return 1e9;
}

}  // namespace

ImageSpec render_scene(const SceneSpec& scene) {
  ImageSpec img = ImageSpec::blank(scene.height, scene.width, 3, kBackground);
  const double cw = static_cast<double>(scene.width) / kCells;
  const double ch = static_cast<double>(scene.height) / kCells;
  const double unit = std::min(cw, ch);
  for (const auto& o : scene.objects) {
    const double cx = (o.cell_col + 0.5) * cw, cy = (o.cell_row + 0.5) * ch;
    const double r = (o.large ? 0.42 : 0.22) * unit;
    const auto& col = kPalette[static_cast<std::size_t>(o.color)];
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 2)));
    const int x1 = std::min(scene.width - 1, static_cast<int>(std::ceil(cx + r + 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 2)));
    const int y1 = std::min(scene.height - 1, static_cast<int>(std::ceil(cy + r + 2)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = object_sdf(o, cx, cy, r, x + 0.5, y + 0.5);
        const float a = static_cast<float>(std::clamp(0.5 - d, 0.0, 1.0));
        if (a <= 0.0f) continue;
        for (int c = 0; c < 3; ++c) img.px(c, y, x) = (1.0f - a) * img.px(c, y, x) + a * col[c];
      }
  }
  return img;
}

std::string describe(const SceneSpec& scene) {
  std::string out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (i) out += " and ";
    out += std::string("a ") + (o.large ? "large " : "small ") + color_name(o.color) + " " +
           shape_name(o.shape) + " at " + cell_phrase(o.cell_row, o.cell_col);
  }
  return out;
}

Pair generate_pair(std::uint64_t seed, const CorpusConfig& cfg) {
  Pair p;
  p.scene = sample_scene(seed, cfg);
  p.image = render_scene(p.scene);
  p.caption = describe(p.scene);
  return p;
}

QaPair generate_qa(std::uint64_t seed, const CorpusConfig& cfg) {
  QaPair q;
  q.scene = sample_scene(seed, cfg);
  q.image = render_scene(q.scene);
  Rng rng(mix_seed(seed, 0x51));
  const auto& objs = q.scene.objects;
  std::vector<std::size_t> unique_shape;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto n = std::count_if(objs.begin(), objs.end(),
                                 [&](const ObjectSpec& o) { return o.shape == objs[i].shape; });
    if (n == 1) unique_shape.push_back(i);
  }
  int kind = static_cast<int>(rng.below(3));
  if (kind == 0 && unique_shape.empty()) kind = 1;
  if (kind == 0) {
    const auto& o = objs[unique_shape[rng.below(unique_shape.size())]];
    q.question = "what color is the " + shape_name(o.shape) + " ?";
    q.answer = color_name(o.color);
  } else if (kind == 1) {
    const auto& o = objs[rng.below(objs.size())];
    q.question = "what shape is at " + cell_phrase(o.cell_row, o.cell_col) + " ?";
    q.answer = shape_name(o.shape);
  } else {
    q.question = "how many objects are there ?";
    q.answer = kNumbers.at(objs.size());
  }
  return q;
}

std::uint64_t item_seed(const CorpusConfig& cfg, Split split, std::uint64_t index) {
  return mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(split)), index);
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> w{"<pad>", "<bos>", "<eos>", "a", "and", "at", "small", "large"};
  for (auto c : kColorNames) w.emplace_back(c);
  for (auto s : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::bar})
    w.push_back(shape_name(s));
  for (auto r : kRowNames) w.emplace_back(r);
  for (auto c : kColNames) w.emplace_back(c);
  for (auto q : {"what", "color", "is", "the", "shape", "how", "many", "objects", "are", "there",
                 "?"})
    w.emplace_back(q);
  for (std::size_t i = 1; i < kNumbers.size(); ++i) w.emplace_back(kNumbers[i]);
  return Vocabulary(std::move(w));
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 3 || words_[kPad] != "<pad>" || words_[kBos] != "<bos>" ||
      words_[kEos] != "<eos>")
    throw TokenizerError("vocabulary must start with <pad>, <bos>, <eos>");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const auto& w = words_[i];
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos)
      throw TokenizerError("vocabulary entry " + std::to_string(i) + " is not a single word");
    if (!index_.emplace(w, static_cast<std::int32_t>(i)).second)
      throw TokenizerError("duplicate vocabulary word '" + w + "'");
  }
}

const std::string& Vocabulary::word(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw TokenizerError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

std::int32_t Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) throw TokenizerError("unknown word '" + word + "'");
  return it->second;
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

std::vector<std::int32_t> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<std::int32_t> ids{Vocabulary::kBos};
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) ids.push_back(vocab.id(w));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::string detokenize(const Vocabulary& vocab, const std::vector<std::int32_t>& ids) {
  std::string out;
  for (auto id : ids) {
    if (vocab.is_special(id)) {
      vocab.word(id);
      continue;
    }
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

std::vector<double> compute_prior(const Vocabulary& vocab, const std::vector<std::string>& texts) {
  if (texts.empty()) throw ContractError("compute_prior needs at least one text");
  std::vector<double> counts(vocab.size(), 0.0);
  for (const auto& t : texts)
    for (auto id : tokenize(vocab, t))
      if (!vocab.is_special(id)) counts[static_cast<std::size_t>(id)] += 1.0;
  return align::prior_from_counts(counts);
}

}  // namespace vlcp::corpus
