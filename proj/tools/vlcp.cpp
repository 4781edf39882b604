// vlcp: train / verify / eval / dump-patches / config

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "vlcp/recipe.hpp"
#include "vlcp/verify.hpp"

using namespace vlcp;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kNaN = 3, kCheckpoint = 4 };

RunConfig config_or_defaults(const std::string& path) {
  return path.empty() ? RunConfig::defaults() : load_config(path);
}

int cmd_train(const std::string& config, const std::string& stage, const std::string& resume,
              bool quiet) {
  const auto cfg = load_config(config);
  std::optional<Checkpoint> ck;
  if (!resume.empty()) ck = load_checkpoint(resume);
  const auto stages = train::expand_stages(stage);
  train::check_stage_order(stages, ck);
  Model<float> model(cfg.model, cfg.seed);
  train::RecipeHooks hooks;
  hooks.on_stage_begin = [&](train::StageId s) {
    if (!quiet) std::printf("stage %s\n", train::to_string(s).c_str());
  };
  hooks.on_step = [&](const train::StepRecord& r) {
    if (!quiet && r.step % 50 == 0)
      std::printf("  step %llu  l_dec %.4f  l_align %s  grad_norm %.3f\n",
                  static_cast<unsigned long long>(r.step), r.l_dec,
                  r.l_align ? std::to_string(*r.l_align).c_str() : "-", r.grad_norm);
  };
  const auto res =
      train::run_recipe(cfg, model, stages, ck, hooks, true, train::worker_threads());
  for (std::size_t i = 0; i < res.stages.size(); ++i)
    std::printf("%s: %zu steps, mean l_dec %.4f, checkpoint %s\n",
                train::to_string(res.stages[i]).c_str(), res.reports[i].steps,
                res.reports[i].mean_l_dec, res.checkpoints[i].c_str());
  return kOk;
}

int cmd_verify(const std::string& suite) {
  const auto checks = verify::run_suite(suite);
  int failed = 0;
  for (const auto& c : checks) {
    std::printf("%-4s %-40s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    failed += !c.passed;
  }
  if (failed) {
    std::printf("%d of %zu checks failed:", failed, checks.size());
    for (const auto& c : checks)
      if (!c.passed) std::printf(" %s", c.name.c_str());
    std::printf("\n");
    return kFailed;
  }
  std::printf("all %zu checks passed\n", checks.size());
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::string& split,
             int count, const std::vector<int>& caps, const std::string& csv,
             const std::string& mode, bool greedy) {
  const auto cfg = config_or_defaults(config);
  const auto ck = load_checkpoint(checkpoint);
  Model<float> model(cfg.model, cfg.seed);
  apply_checkpoint(ck, model.store);
  corpus::Split sp;
  if (split == "holdout")
    sp = corpus::Split::holdout;
  else if (split == "train")
    sp = corpus::Split::train;
  else
    throw ConfigError("split must be holdout or train");
  crope::RotaryMode rm;
  try {
    rm = crope::rotary_mode_from_string(mode);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  const auto n = static_cast<std::size_t>(count > 0 ? count : cfg.holdout_pairs);
  const auto data = train::make_data_source(cfg, train::worker_threads());

  std::vector<std::pair<std::string, ResolutionPolicy>> runs;
  if (caps.empty()) {
    const auto p = cfg.stage(train::StageId::II_native).resolution;
    runs.push_back({p.max_visual_tokens ? std::to_string(*p.max_visual_tokens) : "none", p});
  }
  for (int m : caps) {
    if (m < 4) throw ConfigError("max-visual-tokens must be >= 4");
    runs.push_back({std::to_string(m), ResolutionPolicy::native(m)});
  }
  std::ostringstream table;
  table << "max_visual_tokens,l_dec,perplexity,exact_match,samples\n";
  for (const auto& [label, policy] : runs) {
    const auto r = train::evaluate(model, data, sp, n, policy, rm, greedy);
    char line[160];
    std::snprintf(line, sizeof line, "%s,%.12g,%.12g,%.6g,%zu\n", label.c_str(), r.l_dec,
                  r.perplexity, r.exact_match, r.samples);
    table << line;
  }
  std::cout << table.str();
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw ConfigError("cannot write " + csv);
    out << table.str();
  }
  return kOk;
}

int cmd_dump(const std::string& config, const std::string& split, std::uint64_t index,
             const std::string& resolution, const std::string& out_path) {
  const auto cfg = config_or_defaults(config);
  const auto policy = resolution_from_string(resolution);
  const auto sp = split == "train" ? corpus::Split::train : corpus::Split::holdout;
  const auto pair = corpus::generate_pair(corpus::item_seed(cfg.corpus, sp, index), cfg.corpus);
  const auto grid = prepare_grid(pair.image, policy, cfg.model.encoder.patch, cfg.model.align_unit());
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + out_path);
  write_patch_grid(out, grid);
  std::printf("%dx%d image -> %dx%d patches: %s\n", pair.image.height, pair.image.width,
              grid.rows, grid.cols, pair.caption.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vision-language training with 2D position encoding"};
  app.require_subcommand(1);

  std::string config, stage = "all", resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "run training stages");
  train->add_option("--config", config, "run config file")->required();
  train->add_option("--stage", stage, "I, II, III or all")->capture_default_str();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_flag("--quiet", quiet, "only print stage summaries");

  std::string suite = "all";
  auto* ver = app.add_subcommand("verify", "run property suites");
  ver->add_option("--suite", suite, "gradcheck, sinkhorn, rope, freeze or all")
      ->capture_default_str();

  std::string checkpoint, split = "holdout", csv, mode = "crope";
  int count = 0;
  std::vector<int> caps;
  bool no_greedy = false;
  auto* ev = app.add_subcommand("eval", "held-out loss, perplexity and exact match");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--config", config, "run config the checkpoint was trained with");
  ev->add_option("--split", split, "holdout or train")->capture_default_str();
  ev->add_option("--count", count, "number of pairs (default: holdout_pairs)");
  ev->add_option("--max-visual-tokens", caps, "token caps to sweep")->delimiter(',');
  ev->add_option("--csv", csv, "also write the table here");
  ev->add_option("--mode", mode, "crope, rope2d_only or learned_only")->capture_default_str();
  ev->add_flag("--no-greedy", no_greedy, "skip greedy decoding");

  std::uint64_t index = 0;
  std::string resolution = "native", out;
  auto* dump = app.add_subcommand("dump-patches", "write one corpus item as a patch grid");
  dump->add_option("--config", config, "run config");
  dump->add_option("--split", split, "holdout or train")->capture_default_str();
  dump->add_option("--index", index, "item index")->capture_default_str();
  dump->add_option("--resolution", resolution, "fixed:<side>, native or native:<cap>")
      ->capture_default_str();
  dump->add_option("--out", out, "output file")->required();

  auto* show = app.add_subcommand("config", "print the resolved config");
  show->add_option("--config", config, "run config (defaults when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(config, stage, resume, quiet);
    if (*ver) return cmd_verify(suite);
    if (*ev) return cmd_eval(checkpoint, config, split, count, caps, csv, mode, !no_greedy);
    if (*dump) return cmd_dump(config, split, index, resolution, out);
    if (*show) {
      std::cout << serialize_config(config_or_defaults(config));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNaN;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kCheckpoint;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kFailed;
}
