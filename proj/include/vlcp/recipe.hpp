#pragma once

// Stage orchestration: ordering, resume, checkpoints and metrics files.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vlcp/checkpoint.hpp"
#include "vlcp/config.hpp"

namespace vlcp::train {

// "I" -> {I}; "II" -> {II-fixed, II-native}; "III" -> {III}; "all" -> all
// four. Single stage names ("II-native") are accepted too.
std::vector<StageId> expand_stages(const std::string& selection);

// Checks that `stages` is a contiguous run in recipe order that starts right
// after the resumed stage (or at stage I for a fresh model). ConfigError
// otherwise.
void check_stage_order(const std::vector<StageId>& stages, const std::optional<Checkpoint>& resume);

struct RecipeHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(StageId)> on_stage_begin;
  std::function<void(StageId, const Model<float>&, const StageReport&)> on_stage_end;
};

struct RecipeResult {
  std::vector<StageId> stages;
  std::vector<StageReport> reports;
  std::vector<std::string> checkpoints;  // empty paths when files are off
  std::vector<double> prior;
  std::uint64_t step = 0;
};

// Path of the checkpoint written after `s`, e.g. "<dir>/stage_II-native.cmpk".
std::string checkpoint_path(const std::string& dir, StageId s);

// Runs `stages` on `model` (freshly built from cfg.model and cfg.seed, or
// restored from `resume`). With `write_files`, creates cfg.output_dir,
// appends step records to metrics.jsonl and writes one checkpoint per stage.
RecipeResult run_recipe(const RunConfig& cfg, Model<float>& model, const std::vector<StageId>& stages,
                        const std::optional<Checkpoint>& resume, const RecipeHooks& hooks = {},
                        bool write_files = true, int threads = 1);

// Word prior over the stage II-fixed training captions.
std::vector<double> recipe_prior(const RunConfig& cfg);

DataSource make_data_source(const RunConfig& cfg, int threads = 1);

}  // namespace vlcp::train
