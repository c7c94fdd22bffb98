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


#include "mprompt/trainer.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mprompt/checkpoint.h"
#include "mprompt/errors.h"
#include "mprompt/synth_corpus.h"

namespace mprompt {
namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config() {
  TrainConfig c;
  c.t = 2;
  c.rho = 2;
  c.kappa = 3;
  c.n = 3;
  c.m = 2;
  c.lambda = 1e-2;
  c.lr = 1e-2;
  c.epochs = 3;
  c.batch_size = 8;
  c.max_input_length = 32;
  c.max_ans_length = 4;
  c.beams = 1;
  c.vocab_size = 200;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 2;
  c.d_ff = 32;
  c.d_prompt = 8;
  c.gen_heads = 2;
  c.gen_layers = 1;
  c.gen_d_ff = 16;
  c.gen_max_len = 40;
  c.mlp_hidden = 8;
  return c;
}

struct Splits {
  std::vector<QAExample> train, val;
};

Splits tiny_splits(const TrainConfig& cfg) {
  CorpusSpec spec;
  spec.examples_per_domain = 20;
  Corpus c = generate_corpus(spec, 5);
  Splits s{std::move(c.train), std::move(c.val)};
  prepare_domains(s.train, s.val, cfg);
  return s;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mprompt_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(TotalLoss, WeightedSum) {
  EXPECT_DOUBLE_EQ(total_loss(2.0, 0.5, 1e-4), 2.0 + 0.5e-4);
  EXPECT_DOUBLE_EQ(total_loss(1.5, 3.0, 0.0), 1.5);
}

TEST(LrSchedule, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(lr_at(0, 100, 1.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, 100, 1.0, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(10, 100, 1.0, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(55, 100, 1.0, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(100, 100, 1.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(0, 10, 2.0, 0.0), 2.0);
  // ceil(0.1 * 15) = 2 warmup steps.
  EXPECT_DOUBLE_EQ(lr_at(1, 15, 1.0, 0.1), 0.5);
  EXPECT_THROW(lr_at(101, 100, 1.0, 0.1), ConfigError);
  EXPECT_THROW(lr_at(0, 0, 1.0, 0.1), ConfigError);
}

TEST(AdamW, TwoStepsMatchHandComputation) {
  Parameter a("a", (Matrix(1, 2) << 1.0, -2.0).finished(), true);
  Parameter frozen("f", Matrix::Constant(1, 1, 3.0), false);
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, wd = 0.01, eps = 1e-8;
  AdamW opt(b1, b2, wd, eps);
  std::vector<Parameter*> params = {&a, &frozen};
  const Matrix g1 = (Matrix(1, 2) << 0.5, 0.1).finished();
  const Matrix g2 = (Matrix(1, 2) << -0.2, 0.3).finished();
  std::vector<Matrix> grads = {g1, Matrix::Constant(1, 1, 7.0)};
  opt.step(params, grads, lr);
  grads[0] = g2;
  opt.step(params, grads, lr);

  for (int j = 0; j < 2; ++j) {
    double theta = j == 0 ? 1.0 : -2.0;
    double m = 0.0, v = 0.0;
    const double gs[2] = {g1(0, j), g2(0, j)};
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * gs[t - 1];
      v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      theta -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
    }
    EXPECT_NEAR(a.value(0, j), theta, 1e-15);
  }
  EXPECT_EQ(frozen.value(0, 0), 3.0);
  EXPECT_FALSE(opt.has_state(frozen));
  EXPECT_EQ(opt.state_count(), 1u);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(ClipGlobalNorm, ScalesOnlyWhenLarger) {
  std::vector<Matrix> g = {Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 4.0)};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0](0, 0), 0.6, 1e-15);
  EXPECT_NEAR(g[1](0, 0), 0.8, 1e-15);
  EXPECT_NEAR(clip_global_norm(g, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(g[1](0, 0), 0.8, 1e-15);
}

TEST(Config, ParseRoundTripAndErrors) {
  TrainConfig c = parse_config("# comment\nlambda = 0.5\n\nt=4  # trailing\nno_idp = true\nkernel = rbf\n");
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.t, 4);
  EXPECT_TRUE(c.no_idp);
  EXPECT_EQ(c.kernel_kind(), KernelKind::kRbf);
  EXPECT_EQ(c.effective_lambda(), 0.0);
  EXPECT_EQ(c.rho, 10);

  const TrainConfig back = parse_config(config_text(c));
  EXPECT_EQ(config_text(back), config_text(c));

  EXPECT_THROW(parse_config("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("t = four\n"), ConfigError);
  EXPECT_THROW(parse_config("t 4\n"), ConfigError);
  EXPECT_THROW(parse_config("no_idp = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda = -1\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("warmup_ratio = 1\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("heads = 5\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("t = 0\n").validate(), ConfigError);
  EXPECT_NO_THROW(parse_config("t = 0\nno_task = true\n").validate());
  EXPECT_THROW(load_config("/nonexistent/mprompt.cfg"), ConfigError);

  TrainConfig d;
  set_config_value(d, "m", "7");
  EXPECT_EQ(d.m, 7);
  EXPECT_THROW(set_config_value(d, "nope", "1"), ConfigError);
}

TEST(Ablations, FiveRowsWithFlags) {
  std::vector<std::string> names;
  const auto cfgs = ablation_configs(TrainConfig{}, &names);
  ASSERT_EQ(cfgs.size(), 5u);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "w/o d", "w/o c", "w/o idp", "w/o PG"}));
  EXPECT_FALSE(cfgs[0].no_domain || cfgs[0].no_context || cfgs[0].no_idp || cfgs[0].no_generator);
  EXPECT_TRUE(cfgs[1].no_domain);
  EXPECT_TRUE(cfgs[2].no_context);
  EXPECT_TRUE(cfgs[3].no_idp);
  EXPECT_TRUE(cfgs[4].no_generator);
}

TEST(Sweeps, GridsAndConfigs) {
  EXPECT_EQ(default_sweep_grid("lambda"), (std::vector<double>{1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5}));
  EXPECT_EQ(default_sweep_grid("m"), (std::vector<double>{1, 3, 5, 10, 15}));
  EXPECT_EQ(default_sweep_grid("n"), (std::vector<double>{3, 6, 9}));
  std::vector<std::string> names;
  const std::vector<double> grid = {3, 6, 9};
  const auto cfgs = sweep_configs(TrainConfig{}, "n", grid, &names);
  ASSERT_EQ(cfgs.size(), 3u);
  EXPECT_EQ(cfgs[2].n, 9);
  EXPECT_EQ(names.size(), 3u);
  EXPECT_THROW(sweep_configs(TrainConfig{}, "beta1", grid, &names), ConfigError);
}

TEST(PromptGradients, PairCountAndNoIdp) {
  TrainConfig cfg = tiny_config();
  Splits s = tiny_splits(cfg);
  const FrozenModels models = build_models(s.train, cfg);
  const PromptBank bank = init_prompts(cfg.prompt_config(), models.generator, 1);
  const auto enc = encode_all(s.train, models.vocab, cfg);
  std::vector<const EncodedExample*> batch = {&enc[0], &enc[1], &enc[2]};
  Rng rng(3);
  const PairSample pairs = sample_pairs(cfg.n, cfg.m, rng);
  StepReport rep;
  auto grads = prompt_gradients(bank, models, batch, pairs, cfg, 1, &rep);
  EXPECT_EQ(rep.pairs, 2u);
  EXPECT_GT(rep.idp, 0.0);
  EXPECT_NEAR(rep.total, total_loss(rep.nll, rep.idp, cfg.lambda), 1e-12);
  EXPECT_NEAR(batch_objective(bank, models, batch, pairs, cfg), rep.total, 1e-9);
  EXPECT_EQ(grads.size(), bank.parameters().size());

  cfg.no_idp = true;
  prompt_gradients(bank, models, batch, pairs, cfg, 1, &rep);
  EXPECT_EQ(rep.idp, 0.0);
}

TEST(Train, FreezesBackboneAndLearns) {
  const TrainConfig cfg = tiny_config();
  Splits s = tiny_splits(cfg);
  const FrozenModels models = build_models(s.train, cfg);
  const std::string before = encode_archive(models.parameters());
  const TrainResult r = train(s.train, s.val, models, cfg);
  EXPECT_EQ(encode_archive(models.parameters()), before);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_LT(r.history.back().train_nll, r.history.front().train_nll);
  EXPECT_EQ(r.trainable_count, trainable_census(cfg.prompt_config()));
  EXPECT_EQ(r.trainable_count, r.bank.parameter_count());
  EXPECT_EQ(r.steps, 3 * static_cast<std::int64_t>((s.train.size() + 7) / 8));
  EXPECT_TRUE(r.best_mean_cka.has_value());
  for (const auto* p : models.parameters()) EXPECT_FALSE(p->trainable) << p->name;
}

TEST(Train, IdenticalRunsWriteIdenticalLogs) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  Splits s = tiny_splits(cfg);
  const FrozenModels models = build_models(s.train, cfg);
  const fs::path dir = temp_dir("determinism");
  train(s.train, s.val, models, cfg, TrainOutputs{dir / "ckpt_a", dir / "a.jsonl", nullptr});
  train(s.train, s.val, models, cfg, TrainOutputs{dir / "ckpt_b", dir / "b.jsonl", nullptr});
  const std::string a = slurp(dir / "a.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b.jsonl"));
  EXPECT_EQ(slurp(dir / "ckpt_a" / "model.bin"), slurp(dir / "ckpt_b" / "model.bin"));
  fs::remove_all(dir);
}

TEST(Train, RejectsMissingDomainsAndEmptyValidation) {
  const TrainConfig cfg = tiny_config();
  Splits s = tiny_splits(cfg);
  const FrozenModels models = build_models(s.train, cfg);
  EXPECT_THROW(train(s.train, {}, models, cfg), ConfigError);
  s.train[0].domain_id.reset();
  EXPECT_THROW(train(s.train, s.val, models, cfg), DataError);
}

TEST(Checkpoint, RoundTripPredictsTheSame) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  Splits s = tiny_splits(cfg);
  const FrozenModels models = build_models(s.train, cfg);
  DomainModel domains = prepare_domains(s.train, s.val, cfg);
  const fs::path dir = temp_dir("checkpoint");
  const TrainResult r = train(s.train, s.val, models, cfg, TrainOutputs{dir, {}, &domains});
  const Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(config_text(ck.cfg), config_text(cfg));
  EXPECT_EQ(ck.models.vocab, models.vocab);
  EXPECT_EQ(ck.domains.centroids.size(), domains.centroids.size());
  const auto a = predict(&r.bank, models, s.val, cfg);
  const auto b = predict(&ck.bank, ck.models, s.val, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].prediction, b[i].prediction);
  fs::remove_all(dir);
}

TEST(Results, MarkdownTable) {
  std::vector<ResultRow> rows = {{"full", TrainConfig{}, 0.5, 0.25, 0.1, 3}, {"w/o d", TrainConfig{}, 0.4, 0.2, {}, 2}};
  const std::string t = results_table(rows);
  EXPECT_NE(t.find("| full"), std::string::npos);
  EXPECT_NE(t.find("w/o d"), std::string::npos);
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 4);
}

}  // namespace
}  // namespace mprompt
