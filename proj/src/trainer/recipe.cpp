#include "vlcp/recipe.hpp"

#include <filesystem>
#include <fstream>

namespace vlcp::train {

std::vector<StageId> expand_stages(const std::string& selection) {
  if (selection == "all") return {StageId::I, StageId::II_fixed, StageId::II_native, StageId::III};
  if (selection == "II") return {StageId::II_fixed, StageId::II_native};
  return {stage_from_string(selection)};
}

void check_stage_order(const std::vector<StageId>& stages,
                       const std::optional<Checkpoint>& resume) {
  if (stages.empty()) throw ConfigError("no stages selected");
  for (std::size_t i = 1; i < stages.size(); ++i)
    if (stage_rank(stages[i]) != stage_rank(stages[i - 1]) + 1)
      throw ConfigError("stages must run in recipe order");
  const int first = stage_rank(stages.front());
  int done = -1;
  if (resume && !resume->meta.stage.empty()) done = stage_rank(stage_from_string(resume->meta.stage));
  if (first != done + 1) {
    const std::string have = done < 0 ? "a fresh model" : "a stage " + resume->meta.stage + " checkpoint";
    throw ConfigError("stage " + to_string(stages.front()) + " cannot follow " + have);
  }
}

std::string checkpoint_path(const std::string& dir, StageId s) {
  return (std::filesystem::path(dir) / ("stage_" + to_string(s) + ".cmpk")).string();
}

std::vector<double> recipe_prior(const RunConfig& cfg) {
  const auto ds = make_data_source(cfg);
  const auto n = static_cast<std::size_t>(cfg.stage(StageId::II_fixed).num_pairs);
  return corpus::compute_prior(ds.vocab(), ds.captions(corpus::Split::train, n));
}

DataSource make_data_source(const RunConfig& cfg, int threads) {
  return DataSource(cfg.corpus, corpus::Vocabulary::standard(), cfg.model.encoder.patch,
                    cfg.model.align_unit(), threads);
}

RecipeResult run_recipe(const RunConfig& cfg, Model<float>& model, const std::vector<StageId>& stages,
                        const std::optional<Checkpoint>& resume, const RecipeHooks& hooks,
                        bool write_files, int threads) {
  cfg.validate();
  check_stage_order(stages, resume);
  if (!(model.config() == cfg.model)) throw ContractError("model does not match the run config");

  RecipeResult out;
  Rng rng(mix_seed(cfg.seed, 1));
  if (resume) {
    apply_checkpoint(*resume, model.store);
    if (!resume->meta.rng_state.empty()) rng.set_state(resume->meta.rng_state);
    out.step = resume->meta.step;
    out.prior = resume->prior;
  }
  if (out.prior.empty()) out.prior = recipe_prior(cfg);
  if (out.prior.size() != static_cast<std::size_t>(cfg.model.decoder.vocab))
    throw CheckpointError("stored prior does not match the vocabulary");

  std::ofstream metrics;
  if (write_files) {
    std::filesystem::create_directories(cfg.output_dir);
    const auto path = std::filesystem::path(cfg.output_dir) / "metrics.jsonl";
    metrics.open(path, resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw ConfigError("cannot write " + path.string());
  }
  const auto data = make_data_source(cfg, threads);

  for (StageId s : stages) {
    if (hooks.on_stage_begin) hooks.on_stage_begin(s);
    StageHooks sh;
    sh.on_step = [&](const StepRecord& r) {
      if (metrics.is_open()) metrics << to_json(r) << '\n';
      if (hooks.on_step) hooks.on_step(r);
    };
    const auto rep = run_stage(cfg.stage(s), data, model, out.prior, rng, out.step, sh, cfg.sinkhorn);
    if (metrics.is_open()) metrics.flush();
    std::string path;
    if (write_files) {
      path = checkpoint_path(cfg.output_dir, s);
      save_checkpoint(path, model.store, CheckpointMeta{to_string(s), out.step, rng.state()},
                      out.prior);
    }
    out.stages.push_back(s);
    out.reports.push_back(rep);
    out.checkpoints.push_back(path);
    if (hooks.on_stage_end) hooks.on_stage_end(s, model, rep);
  }
  return out;
}

}  // namespace vlcp::train
