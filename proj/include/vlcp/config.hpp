#pragma once

// Run configuration: a flat "key = value" text file with [section] headers.
//
//   seed = 1
//   output_dir = runs/toy
//   [encoder]
//   width = 64
//   [stage.II-native]
//   resolution = native:256
//
// Every key is typed; unknown sections or keys, malformed values and
// duplicates are errors carrying the line number. Omitted keys keep their
// defaults.

#include <array>
#include <iosfwd>
#include <string>

#include "vlcp/corpus.hpp"
#include "vlcp/model.hpp"
#include "vlcp/trainer.hpp"

namespace vlcp {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/toy";
  ModelConfig model;
  corpus::CorpusConfig corpus;
  int holdout_pairs = 200;
  align::SinkhornConfig sinkhorn;
  // Indexed by stage rank: I, II-fixed, II-native, III.
  std::array<train::StageConfig, 4> stages;

  // Desk-scale recipe; decoder vocab matches the standard vocabulary.
  static RunConfig defaults();
  const train::StageConfig& stage(train::StageId s) const {
    return stages[static_cast<std::size_t>(train::stage_rank(s))];
  }
  train::StageConfig& stage(train::StageId s) {
    return stages[static_cast<std::size_t>(train::stage_rank(s))];
  }
  // ConfigError on any invalid field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// `source` names the input in diagnostics ("toy.cfg:12: ...").
RunConfig parse_config(std::istream& in, const std::string& source = "config");
RunConfig load_config(const std::string& path);
// Every key, in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

std::string to_string(const ResolutionPolicy& p);  // fixed:224, native, native:256
ResolutionPolicy resolution_from_string(const std::string& s);

}  // namespace vlcp
