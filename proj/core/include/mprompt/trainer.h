// Copyright 2026 The MPrompt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MPROMPT_TRAINER_H_
#define MPROMPT_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mprompt/backbone.h"
#include "mprompt/domain_cluster.h"
#include "mprompt/generator.h"
#include "mprompt/independence.h"
#include "mprompt/metrics.h"
#include "mprompt/prompt_engine.h"
#include "mprompt/qa_data.h"

namespace mprompt {

struct TrainConfig {
  // Prompt lengths and domains.
  int t = 10;
  int rho = 10;
  int kappa = 60;
  int n = 3;
  int m = 3;
  double lambda = 1e-4;
  // Optimizer and schedule.
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int epochs = 50;
  int batch_size = 8;
  int patience = 0;  // epochs without improvement before stopping; 0 = never
  std::uint64_t seed = 42;
  double dropout = 0.0;
  // Sequence limits and decoding.
  int max_input_length = 64;
  int max_ans_length = 16;
  int beams = 2;
  double length_penalty = 1.0;
  // Model sizes.
  int vocab_size = 512;
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int d_ff = 256;
  int relative_distance = 0;  // backbone only; 0 keeps sinusoidal positions
  int d_prompt = 32;
  int gen_heads = 4;
  int gen_layers = 1;
  int gen_d_ff = 128;
  int gen_max_len = 128;  // longest context and prompt the generator takes
  int mlp_hidden = 64;
  std::string kernel = "linear";
  // Ablations.
  bool no_task = false;
  bool no_domain = false;
  bool no_context = false;
  bool no_idp = false;
  bool no_generator = false;
  bool random_domains = false;

  void validate() const;
  double effective_lambda() const { return no_idp ? 0.0 : lambda; }
  KernelKind kernel_kind() const;
  PromptConfig prompt_config() const;
  TransformerDims backbone_dims(int vocab) const;
  TransformerDims generator_dims(int vocab) const;
};

/// `key = value` lines, `#` comments. Unknown keys and malformed values are
/// ConfigErrors. Keys missing from the text keep their defaults.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
/// Every field, one per line, in declaration order.
std::string config_text(const TrainConfig& cfg);
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);
/// Applies one `key=value` override.
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);

double total_loss(double nll, double l_idp, double lambda);

/// Linear warmup over ceil(warmup_ratio * total) steps, then linear decay to
/// 0 at `total`.
double lr_at(std::int64_t step, std::int64_t total, double lr, double warmup_ratio);

/// Decoupled weight decay Adam:
///   theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * theta)
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.01, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {}

  /// One update of every trainable parameter in `params` with gradient
  /// grads[i]. Frozen parameters are skipped and get no state.
  void step(std::span<Parameter* const> params, std::span<const Matrix> grads, double lr);

  std::int64_t steps() const { return steps_; }
  bool has_state(const Parameter& p) const;
  std::size_t state_count() const { return moments_.size(); }

 private:
  struct Moments {
    Matrix m, v;
  };
  double beta1_, beta2_, wd_, eps_;
  std::int64_t steps_ = 0;
  std::vector<std::pair<const Parameter*, Moments>> moments_;
};

/// Scales `grads` to global L2 norm `max_norm` if larger. Returns the norm
/// before clipping.
double clip_global_norm(std::span<Matrix> grads, double max_norm);

/// Backbone, generator and their shared vocabulary. Frozen during prompt
/// tuning.
struct FrozenModels {
  Vocabulary vocab;
  QAModel backbone;
  GeneratorModel generator;

  std::int64_t parameter_count() const;
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> parameters();
};

/// Vocabulary from the training split, seeded random backbone and generator.
FrozenModels build_models(std::span<const QAExample> train, const TrainConfig& cfg);

std::vector<EncodedExample> encode_all(std::span<const QAExample> examples, const Vocabulary& vocab,
                                       const TrainConfig& cfg);

struct StepReport {
  double nll = 0.0;   // batch mean
  double idp = 0.0;   // L_idp over this step's pairs; 0 under no_idp
  double total = 0.0;
  double grad_norm = 0.0;
  std::size_t pairs = 0;
};

/// Gradients of total_loss for one batch, aligned with bank.parameters().
/// `step_seed` drives dropout.
std::vector<Matrix> prompt_gradients(const PromptBank& bank, const FrozenModels& models,
                                     std::span<const EncodedExample* const> batch,
                                     const PairSample& pairs, const TrainConfig& cfg,
                                     std::uint64_t step_seed, StepReport* report = nullptr);

/// Forward-only batch objective (no dropout).
double batch_objective(const PromptBank& bank, const FrozenModels& models,
                       std::span<const EncodedExample* const> batch, const PairSample& pairs,
                       const TrainConfig& cfg);

/// Gradients, clipping and one AdamW update. Throws NumericError, without
/// touching the bank, if the loss is not finite.
StepReport train_step(PromptBank& bank, const FrozenModels& models,
                      std::span<const EncodedExample* const> batch, const PairSample& pairs,
                      const TrainConfig& cfg, AdamW& opt, double lr, std::uint64_t step_seed);

/// Beam-decoded predictions, scored against each example's golds. `bank`
/// may be null for the bare backbone.
std::vector<ScoredPrediction> predict(const PromptBank* bank, const FrozenModels& models,
                                      std::span<const QAExample> examples, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double train_nll = 0.0;
  double train_idp = 0.0;
  double val_metric = 0.0;
  double val_em = 0.0;
  std::optional<double> mean_cka;
};
/// {epoch, train_nll, train_idp, val_metric, mean_cka}; mean_cka is null when
/// fewer than two domain prompts exist.
std::string metrics_json_line(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_val_metric = -1.0;
  double best_val_em = 0.0;
  std::optional<double> best_mean_cka;
  std::int64_t trainable_count = 0;
  std::int64_t frozen_count = 0;
  std::int64_t steps = 0;
  PromptBank bank;  // best-validation state
};

/// Where `train` writes its artifacts; empty paths are skipped.
struct TrainOutputs {
  std::filesystem::path checkpoint_dir;  // best checkpoint
  std::filesystem::path metrics_log;     // JSONL, one line per epoch
  const DomainModel* domains = nullptr;  // stored with the checkpoint
};

/// Prompt tuning. Every example must carry a domain id below cfg.n. Throws
/// ConfigError on an empty validation split.
TrainResult train(std::span<const QAExample> train_set, std::span<const QAExample> val_set,
                  const FrozenModels& models, const TrainConfig& cfg, const TrainOutputs& outputs = {});

struct PretrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_val_em = 0.0;
};

/// Trains every backbone parameter on the plain QA task, keeps the best
/// validation state and leaves the backbone frozen.
PretrainResult pretrain_backbone(FrozenModels& models, std::span<const QAExample> train_set,
                                 std::span<const QAExample> val_set, const TrainConfig& cfg,
                                 const std::filesystem::path& metrics_log = {});

/// Domain model for `train_set` (k-means or random per cfg) applied to both
/// splits; validation examples take their nearest centroid.
DomainModel prepare_domains(std::vector<QAExample>& train_set, std::vector<QAExample>& val_set,
                            const TrainConfig& cfg);

// ---- artifacts ----

/// model.bin, vocab.json and config.cfg for the frozen models.
void save_frozen(const std::filesystem::path& dir, const FrozenModels& models, const TrainConfig& cfg);
FrozenModels load_frozen(const std::filesystem::path& dir);

struct Checkpoint {
  TrainConfig cfg;
  FrozenModels models;
  PromptBank bank;
  DomainModel domains;
};

/// model.bin (prompts and frozen models), config.cfg, vocab.json, domains.json.
void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, const FrozenModels& models,
                     const PromptBank& bank, const DomainModel* domains);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// ---- ablations and sweeps ----

struct ResultRow {
  std::string name;
  TrainConfig cfg;
  double val_metric = 0.0;
  double val_em = 0.0;
  std::optional<double> mean_cka;
  int best_epoch = 0;
};

/// full, w/o d, w/o c, w/o idp, w/o PG (generator off: domain and context
/// prompts go through an MLP like task prompts).
std::vector<TrainConfig> ablation_configs(const TrainConfig& base, std::vector<std::string>* names);

/// Trains each configuration on the given splits. Domains are re-derived per
/// configuration so n and random_domains take effect.
std::vector<ResultRow> run_configs(std::span<const TrainConfig> configs, std::span<const std::string> names,
                                   std::span<const QAExample> train_set, std::span<const QAExample> val_set,
                                   const FrozenModels& models);

/// Grid over one field: lambda, m, n, rho or kappa.
std::vector<TrainConfig> sweep_configs(const TrainConfig& base, std::string_view field,
                                       std::span<const double> values, std::vector<std::string>* names);
std::vector<double> default_sweep_grid(std::string_view field);

std::string results_table(std::span<const ResultRow> rows);

}  // namespace mprompt

#endif  // MPROMPT_TRAINER_H_
