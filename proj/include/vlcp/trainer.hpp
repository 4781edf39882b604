#pragma once

// Staged training: per-stage trainability, resolution policy, loss weighting
// and optimizer settings, plus the step loop and held-out evaluation.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vlcp/corpus.hpp"
#include "vlcp/model.hpp"

namespace vlcp::train {

enum class StageId { I, II_fixed, II_native, III };

std::string to_string(StageId s);  // "I", "II-fixed", "II-native", "III"
StageId stage_from_string(const std::string& s);
int stage_rank(StageId s);

enum class DataKind { captions, qa };

struct StageConfig {
  StageId stage = StageId::I;
  std::vector<std::string> trainable;  // parameter-name prefixes
  ResolutionPolicy resolution;
  crope::RotaryMode rotary_mode = crope::RotaryMode::crope;
  double alpha = 0.0;
  double lr_adapter = 1e-3;
  double lr_vfm = 1e-3;
  double lr_llm = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  double warmup_ratio = 0.03;
  double min_lr_ratio = 0.0;  // cosine floor as a fraction of the peak
  int num_pairs = 1000;
  DataKind data = DataKind::captions;

  // Recipe defaults for a stage at desk scale.
  static StageConfig defaults(StageId s);
  // Throws ConfigError when a stage invariant is broken.
  void validate() const;
  bool operator==(const StageConfig&) const = default;
};

struct ParamGroup {
  std::string name;    // adapter / encoder / decoder
  std::string prefix;  // "adapter." ...
  double lr = 0.0;
  bool trainable = false;
  std::vector<std::string> params;
};

// Three groups by prefix. Parameters outside the known prefixes are a
// contract error.
std::vector<ParamGroup> build_param_groups(const ad::ParameterStore<float>& store,
                                           const StageConfig& cfg);
// Sets trainable/requires_grad on every parameter from its group.
void apply_trainability(ad::ParameterStore<float>& store, const std::vector<ParamGroup>& groups);

// Linear warmup from 0 over round(warmup_ratio * total) steps, then cosine
// from 1 down to min_ratio at the last step.
double lr_factor(std::size_t step, std::size_t total, double warmup_ratio, double min_ratio);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// No decay on normalization gains/biases and embedding tables.
bool decay_exempt(const std::string& name);

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  // One update of every trainable parameter that holds a gradient, with the
  // group's lr scaled by `lr_scale`. Returns the number of tensors updated.
  std::size_t step(ad::ParameterStore<float>& store, const std::vector<ParamGroup>& groups,
                   double lr_scale);
  bool has_state(const std::string& name) const { return state_.count(name) != 0; }
  std::size_t state_size() const { return state_.size(); }
  std::uint64_t steps() const { return t_; }

 private:
  struct Moments {
    Tensor<double> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> state_;
  std::uint64_t t_ = 0;
};

// Global L2 norm of all trainable gradients; scales them down to max_norm
// when above it. Returns the norm before clipping.
double clip_grad_norm(ad::ParameterStore<float>& store, double max_norm);

// Renders and tokenizes corpus items into model samples, using up to
// `threads` workers. Output order follows `indices`.
class DataSource {
 public:
  DataSource(corpus::CorpusConfig cfg, corpus::Vocabulary vocab, int patch, int align,
             int threads = 1);
  std::vector<Sample> samples(corpus::Split split, DataKind kind,
                              const std::vector<std::uint64_t>& indices,
                              const ResolutionPolicy& policy) const;
  // Caption texts for the word prior (no rendering).
  std::vector<std::string> captions(corpus::Split split, std::size_t count) const;

  const corpus::Vocabulary& vocab() const noexcept { return vocab_; }
  const corpus::CorpusConfig& config() const noexcept { return cfg_; }
  int align() const noexcept { return align_; }

 private:
  corpus::CorpusConfig cfg_;
  corpus::Vocabulary vocab_;
  int patch_, align_, threads_;
};

// Worker count from COMP_THREADS (unset -> hardware concurrency, min 1).
int worker_threads();

struct StepRecord {
  std::uint64_t step = 0;  // global across stages
  std::string stage;
  double l_dec = 0.0;
  std::optional<double> l_align;
  double alpha = 0.0;  // weight actually applied to l_align
  double total = 0.0;
  double lr_adapter = 0.0, lr_vfm = 0.0, lr_llm = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

std::string to_json(const StepRecord& r);

struct StageHooks {
  std::function<void(const StepRecord&)> on_step;
};

struct StageReport {
  std::size_t steps = 0;
  double mean_l_dec = 0.0;  // over the stage's steps
  double last_l_dec = 0.0;
};

// Runs one stage over items [0, num_pairs) of the train split, shuffled
// each epoch with `rng`. `step` is the global step counter, advanced in
// place. Throws NumericalError naming the step and operation on NaN/Inf.
StageReport run_stage(const StageConfig& cfg, const DataSource& data, Model<float>& model,
                      const std::vector<double>& prior, Rng& rng, std::uint64_t& step,
                      const StageHooks& hooks = {},
                      const align::SinkhornConfig& sinkhorn = {});

struct EvalResult {
  double l_dec = 0.0;
  double perplexity = 0.0;
  double exact_match = 0.0;  // greedy caption == reference
  std::size_t samples = 0;
};

// Held-out loss over supervised tokens (token-weighted mean) and greedy exact
// match. For QA the question is the prompt and only the answer is scored.
EvalResult evaluate(const Model<float>& model, const DataSource& data, corpus::Split split,
                    std::size_t count, const ResolutionPolicy& policy, crope::RotaryMode mode,
                    bool greedy = true, DataKind kind = DataKind::captions);

}  // namespace vlcp::train
