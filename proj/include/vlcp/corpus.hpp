#pragma once

// Synthetic image-caption pairs: a few flat shapes on a 3x3 layout, drawn
// with anti-aliased edges, described by a fixed template.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlcp/lm.hpp"
#include "vlcp/patcher.hpp"

namespace vlcp::corpus {

enum class ShapeKind { circle, square, triangle, bar };

inline constexpr int kColors = 8;
inline constexpr int kCells = 3;

struct ObjectSpec {
  ShapeKind shape = ShapeKind::circle;
  int color = 0;     // palette index
  int cell_row = 0;  // 0..2
  int cell_col = 0;
  bool large = false;
  bool operator==(const ObjectSpec&) const = default;
};

struct SceneSpec {
  int height = 0;
  int width = 0;
  std::vector<ObjectSpec> objects;  // row-major cell order, one per cell
  bool operator==(const SceneSpec&) const = default;
};

struct CorpusConfig {
  std::uint64_t seed = 1;
  int min_side = 112;
  int max_side = 896;
  int max_objects = 4;
  void validate() const;
  bool operator==(const CorpusConfig&) const = default;
};

std::string shape_name(ShapeKind s);
std::string color_name(int c);
std::string cell_phrase(int row, int col);

// Canvas sides log-uniform in [min_side, max_side] per axis; 1..max_objects
// objects in distinct cells.
SceneSpec sample_scene(std::uint64_t seed, const CorpusConfig& cfg);
ImageSpec render_scene(const SceneSpec& scene);
// "a large red circle at top left and a small blue bar at bottom center"
std::string describe(const SceneSpec& scene);

struct Pair {
  SceneSpec scene;
  ImageSpec image;
  std::string caption;
};

Pair generate_pair(std::uint64_t seed, const CorpusConfig& cfg);

struct QaPair {
  SceneSpec scene;
  ImageSpec image;
  std::string question;
  std::string answer;
};

// "what color is the circle ?" -> "red", "what shape is at top left ?" ->
// "circle", "how many objects are there ?" -> "two".
QaPair generate_qa(std::uint64_t seed, const CorpusConfig& cfg);

enum class Split : std::uint64_t { train = 0, holdout = 1 };

// Seed of item `index` in a split; splits draw from separate streams.
std::uint64_t item_seed(const CorpusConfig& cfg, Split split, std::uint64_t index);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0, kBos = 1, kEos = 2;

  // Specials first, then every word the generators can emit.
  static Vocabulary standard();
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(std::int32_t id) const;
  std::int32_t id(const std::string& word) const;  // TokenizerError if unknown
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  bool is_special(std::int32_t id) const { return id <= kEos; }
  const std::vector<std::string>& words() const noexcept { return words_; }

  // One word per line; line index is the id.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Whitespace split, wrapped in <bos> ... <eos>.
std::vector<std::int32_t> tokenize(const Vocabulary& vocab, const std::string& text);
// Drops specials and joins with single spaces.
std::string detokenize(const Vocabulary& vocab, const std::vector<std::int32_t>& ids);

// Word counts over captions (specials excluded) turned into the Sinkhorn
// row prior, with the floor for unseen words.
std::vector<double> compute_prior(const Vocabulary& vocab, const std::vector<std::string>& texts);

}  // namespace vlcp::corpus
