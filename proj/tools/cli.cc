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

#include "cli.h"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mprompt/errors.h"
#include "mprompt/independence.h"
#include "mprompt/synth_corpus.h"
#include "mprompt/trainer.h"

namespace mprompt::cli {

namespace {

using ojson = nlohmann::ordered_json;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file of key = value lines");
  cmd->add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "Seed for all randomness (overrides the config)");
}

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  cfg.validate();
  return cfg;
}

FrozenModels frozen_for(const std::string& backbone_dir, std::span<const QAExample> train, const TrainConfig& cfg) {
  if (!backbone_dir.empty()) return load_frozen(backbone_dir);
  spdlog::warn("no --backbone given; using a randomly initialized frozen backbone");
  return build_models(train, cfg);
}

/// Model sizes come from the pretrained artifact; everything else from cfg.
TrainConfig with_model_sizes(TrainConfig cfg, const std::string& backbone_dir) {
  if (backbone_dir.empty()) return cfg;
  const TrainConfig b = load_config(std::filesystem::path(backbone_dir) / "config.cfg");
  cfg.vocab_size = b.vocab_size;
  cfg.d_model = b.d_model;
  cfg.heads = b.heads;
  cfg.layers = b.layers;
  cfg.d_ff = b.d_ff;
  cfg.relative_distance = b.relative_distance;
  cfg.d_prompt = b.d_prompt;
  cfg.gen_heads = b.gen_heads;
  cfg.gen_layers = b.gen_layers;
  cfg.gen_d_ff = b.gen_d_ff;
  cfg.gen_max_len = b.gen_max_len;
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

ojson summary_json(const MetricSummary& s) {
  ojson j;
  j["f1"] = s.f1;
  j["rouge_l"] = s.rouge_l;
  j["exact_match"] = s.exact_match;
  j["primary"] = s.primary;
  ojson by = ojson::object();
  for (const auto& [tag, v] : s.primary_by_format) by[tag] = v;
  j["primary_by_format"] = by;
  j["n_examples"] = s.n_examples;
  return j;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-level prompt tuning for generative QA"};
  app.name(args.empty() ? "mprompt" : args[0]);
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic multi-domain QA corpus");
  std::string gen_out, gen_kinds = "lookup,arithmetic,choice,boolean";
  CorpusSpec spec;
  std::uint64_t gen_seed = 42;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--kinds", gen_kinds, "Comma-separated kinds: lookup, arithmetic, choice, boolean");
  gen->add_option("--per-domain", spec.examples_per_domain, "Examples per kind, all splits together");
  gen->add_option("--train-ratio", spec.train_ratio, "Training share");
  gen->add_option("--val-ratio", spec.val_ratio, "Validation share; test gets the rest");
  gen->add_option("--lookup-pairs", spec.lookup_pairs, "Key-value pairs per lookup context");
  gen->add_option("--seed", gen_seed, "Corpus seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Train the backbone alone, then freeze it");
  Common pre_c;
  std::string pre_data, pre_val, pre_out;
  add_common(pre, pre_c);
  pre->add_option("--data", pre_data, "Training JSONL")->required();
  pre->add_option("--val", pre_val, "Validation JSONL")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();

  // cluster
  auto* clu = app.add_subcommand("cluster", "Cluster contexts into domains");
  std::string clu_data, clu_out, clu_write;
  int clu_n = 3;
  std::uint64_t clu_seed = 42;
  bool clu_random = false;
  clu->add_option("--data", clu_data, "JSONL to cluster")->required();
  clu->add_option("--n", clu_n, "Number of domains");
  clu->add_option("--seed", clu_seed, "k-means seed");
  clu->add_option("--out", clu_out, "Domain model JSON")->required();
  clu->add_option("--write", clu_write, "Also write the data with domain_id filled in");
  clu->add_flag("--random", clu_random, "Random domain labels instead of k-means");

  // train
  auto* trn = app.add_subcommand("train", "Prompt tuning on a frozen backbone");
  Common trn_c;
  std::string trn_data, trn_val, trn_out, trn_backbone, trn_domains;
  add_common(trn, trn_c);
  trn->add_option("--data", trn_data, "Training JSONL")->required();
  trn->add_option("--val", trn_val, "Validation JSONL")->required();
  trn->add_option("--out", trn_out, "Checkpoint directory")->required();
  trn->add_option("--backbone", trn_backbone, "Directory written by pretrain");
  trn->add_option("--domains", trn_domains, "Domain model from `cluster`; default clusters the training data");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_per_example;
  int ev_beams = -1;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "JSONL to score")->required();
  ev->add_option("--per-example", ev_per_example, "Write per-example predictions as JSONL");
  ev->add_option("--beams", ev_beams, "Beam width (default from the checkpoint config)");

  // generate
  auto* gn = app.add_subcommand("generate", "Answer one question");
  std::string gn_ckpt, gn_q, gn_ctx, gn_choices, gn_format = "EX";
  gn->add_option("--ckpt", gn_ckpt, "Checkpoint directory")->required();
  gn->add_option("--question", gn_q, "Question text")->required();
  gn->add_option("--context", gn_ctx, "Context text")->required();
  gn->add_option("--choices", gn_choices, "Comma-separated options (multiple choice)");
  gn->add_option("--format", gn_format, "EX, AB, MC or YN");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Ablation table or a one-field sweep");
  Common abl_c;
  std::string abl_data, abl_val, abl_backbone, abl_sweep, abl_grid, abl_out;
  add_common(abl, abl_c);
  abl->add_option("--data", abl_data, "Training JSONL")->required();
  abl->add_option("--val", abl_val, "Validation JSONL")->required();
  abl->add_option("--backbone", abl_backbone, "Directory written by pretrain");
  abl->add_option("--sweep", abl_sweep, "Sweep one of lambda, m, n, rho, kappa instead of ablating");
  abl->add_option("--grid", abl_grid, "Comma-separated sweep values (default grid per field)");
  abl->add_option("--out", abl_out, "Also write the table here");

  // inspect-cka
  auto* cka_cmd = app.add_subcommand("inspect-cka", "Pairwise CKA of a checkpoint's domain prompts");
  std::string cka_ckpt;
  cka_cmd->add_option("--ckpt", cka_ckpt, "Checkpoint directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (gen->parsed()) {
      spec.kinds.clear();
      for (const auto& k : split_list(gen_kinds)) spec.kinds.push_back(parse_synth_kind(k));
      const Corpus corpus = generate_corpus(spec, gen_seed);
      write_corpus(corpus, gen_out);
      out << fmt::format("wrote {} train, {} val, {} test examples to {}\n", corpus.train.size(),
                         corpus.val.size(), corpus.test.size(), gen_out);
    } else if (pre->parsed()) {
      TrainConfig cfg = resolve_config(pre_c);
      auto train_set = load_jsonl(pre_data);
      auto val_set = load_jsonl(pre_val);
      FrozenModels models = build_models(train_set, cfg);
      std::filesystem::create_directories(pre_out);
      PretrainResult r = pretrain_backbone(models, train_set, val_set, cfg,
                                           std::filesystem::path(pre_out) / "pretrain_metrics.jsonl");
      save_frozen(pre_out, models, cfg);
      out << fmt::format("best validation exact match {:.4f} at epoch {}\n", r.best_val_em, r.best_epoch);
    } else if (clu->parsed()) {
      auto data = load_jsonl(clu_data);
      DomainModel dm = clu_random ? random_domains(data, clu_n, clu_seed) : cluster_contexts(data, clu_n, clu_seed);
      dm.save(clu_out);
      if (!clu_write.empty()) {
        apply_domains(data, dm);
        save_jsonl(clu_write, data);
      }
      std::vector<int> sizes(static_cast<std::size_t>(clu_n), 0);
      for (const auto& [id, d] : dm.assignments) ++sizes[static_cast<std::size_t>(d)];
      out << "domain sizes:";
      for (int s : sizes) out << ' ' << s;
      out << '\n';
    } else if (trn->parsed()) {
      TrainConfig cfg = with_model_sizes(resolve_config(trn_c), trn_backbone);
      auto train_set = load_jsonl(trn_data);
      auto val_set = load_jsonl(trn_val);
      FrozenModels models = frozen_for(trn_backbone, train_set, cfg);
      DomainModel dm;
      if (!trn_domains.empty()) {
        dm = DomainModel::load(trn_domains);
        if (dm.n != cfg.n) throw ConfigError(fmt::format("domain model has n={}, config has n={}", dm.n, cfg.n));
        apply_domains(train_set, dm);
        apply_domains(val_set, dm);
      } else {
        dm = prepare_domains(train_set, val_set, cfg);
      }
      TrainOutputs outputs;
      outputs.checkpoint_dir = trn_out;
      outputs.metrics_log = std::filesystem::path(trn_out) / "metrics.jsonl";
      outputs.domains = &dm;
      TrainResult r = train(train_set, val_set, models, cfg, outputs);
      out << fmt::format("trainable {} frozen {}\n", r.trainable_count, r.frozen_count);
      out << fmt::format("best val_metric {:.4f} (exact match {:.4f}) at epoch {}\n", r.best_val_metric,
                         r.best_val_em, r.best_epoch);
    } else if (ev->parsed()) {
      Checkpoint ck = load_checkpoint(ev_ckpt);
      if (ev_beams > 0) ck.cfg.beams = ev_beams;
      auto data = load_jsonl(ev_data);
      if (ck.domains.centroids.empty()) throw DataError("checkpoint has no domains.json");
      apply_domains(data, ck.domains);
      const auto scored = predict(&ck.bank, ck.models, data, ck.cfg);
      if (!ev_per_example.empty()) {
        std::string lines;
        for (const auto& s : scored) {
          ojson j;
          j["id"] = s.id;
          j["prediction"] = s.prediction;
          j["f1"] = s.f1;
          j["rouge_l"] = s.rouge_l;
          j["exact_match"] = s.exact_match;
          lines += j.dump() + "\n";
        }
        write_text(ev_per_example, lines);
      }
      out << summary_json(summarize(scored)).dump(2) << '\n';
    } else if (gn->parsed()) {
      Checkpoint ck = load_checkpoint(gn_ckpt);
      QAExample ex;
      ex.id = "cli";
      ex.question = gn_q;
      ex.context = gn_ctx;
      ex.format = parse_format(gn_format);
      ex.choices = split_list(gn_choices);
      ex.gold_answers = {ex.format == QAFormat::kYesNo ? "yes" : "?"};
      validate(ex);
      if (ck.domains.centroids.empty()) throw DataError("checkpoint has no domains.json");
      ex.domain_id = ck.domains.domain_of(ex);
      std::vector<QAExample> one = {ex};
      const auto scored = predict(&ck.bank, ck.models, one, ck.cfg);
      out << scored.front().prediction << '\n';
    } else if (abl->parsed()) {
      TrainConfig cfg = with_model_sizes(resolve_config(abl_c), abl_backbone);
      auto train_set = load_jsonl(abl_data);
      auto val_set = load_jsonl(abl_val);
      FrozenModels models = frozen_for(abl_backbone, train_set, cfg);
      std::vector<std::string> names;
      std::vector<TrainConfig> configs;
      if (abl_sweep.empty()) {
        configs = ablation_configs(cfg, &names);
      } else {
        std::vector<double> grid;
        if (abl_grid.empty()) {
          grid = default_sweep_grid(abl_sweep);
        } else {
          for (const auto& v : split_list(abl_grid)) {
            try {
              grid.push_back(std::stod(v));
            } catch (const std::exception&) {
              throw ConfigError("bad grid value '" + v + "'");
            }
          }
        }
        configs = sweep_configs(cfg, abl_sweep, grid, &names);
      }
      const auto rows = run_configs(configs, names, train_set, val_set, models);
      const std::string table = results_table(rows);
      out << table;
      if (!abl_out.empty()) write_text(abl_out, table);
    } else if (cka_cmd->parsed()) {
      Checkpoint ck = load_checkpoint(cka_ckpt);
      const auto prompts = domain_prompt_values(ck.bank);
      ojson j;
      if (prompts.size() < 2) {
        j["mean_cka"] = nullptr;
        j["matrix"] = ojson::array();
      } else {
        const Matrix m = cka_matrix(prompts, ck.cfg.kernel_kind());
        ojson rows = ojson::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          ojson row = ojson::array();
          for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
          rows.push_back(row);
        }
        j["mean_cka"] = mean_pairwise_cka(prompts, ck.cfg.kernel_kind());
        j["matrix"] = rows;
      }
      out << j.dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::out_of_range& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace mprompt::cli
