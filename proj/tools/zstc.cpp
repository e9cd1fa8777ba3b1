// zstc: prepare corpora, train, evaluate and report zero-shot text classifiers.

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "zstc/error.hpp"
#include "zstc/fixtures.hpp"
#include "zstc/pipeline.hpp"

namespace {

using json = nlohmann::json;

/// Flags that mirror RunConfig fields. Unset flags stay out of the override
/// object so the config file (then the default) decides.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> run_id, data, output_root, corpus, formalization, strategy, loss_scope, template_id,
      templates;
  std::optional<bool> normalize;
  std::optional<std::uint64_t> normalize_seed, seed;
  std::optional<std::size_t> negatives, fallback_buckets, max_new_tokens;
  std::optional<double> lr, warmup, weight_decay, pretrain_lr;
  std::optional<std::size_t> batch_size, epochs, pretrain_batch_size, pretrain_epochs;
  std::optional<std::string> schedule, pretrain_schedule;
  std::optional<std::size_t> hidden_width, layers, heads, ffn_width, max_len, buckets;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run configuration");
    cmd->add_option("--run-id", run_id);
    cmd->add_option("--data", data, "raw dataset manifest (datasets.json)");
    cmd->add_option("--output-root", output_root, "default: $ZSTC_OUTPUT_ROOT or ./runs");
    cmd->add_option("--corpus", corpus, "prepared corpus directory");
    cmd->add_option("--normalize", normalize, "aspect-normalize in-domain train data");
    cmd->add_option("--normalize-seed", normalize_seed);
    cmd->add_option("--formalization", formalization, "binary|dual|generative|sequence_cls");
    cmd->add_option("--strategy", strategy, "vanilla|implicit|explicit");
    cmd->add_option("--seed", seed);
    cmd->add_option("--negatives", negatives, "negatives per positive (binary, dual)");
    cmd->add_option("--loss-scope", loss_scope, "full_sequence|answer_only");
    cmd->add_option("--template-id", template_id);
    cmd->add_option("--templates", templates, "JSON template pack");
    cmd->add_option("--fallback-buckets", fallback_buckets);
    cmd->add_option("--max-new-tokens", max_new_tokens);
    cmd->add_option("--lr", lr, "fine-tuning learning rate");
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--warmup", warmup, "warmup fraction");
    cmd->add_option("--schedule", schedule, "constant|linear|cosine");
    cmd->add_option("--weight-decay", weight_decay);
    cmd->add_option("--pretrain-lr", pretrain_lr);
    cmd->add_option("--pretrain-batch-size", pretrain_batch_size);
    cmd->add_option("--pretrain-epochs", pretrain_epochs);
    cmd->add_option("--pretrain-schedule", pretrain_schedule);
    cmd->add_option("--hidden-width", hidden_width);
    cmd->add_option("--layers", layers);
    cmd->add_option("--heads", heads);
    cmd->add_option("--ffn-width", ffn_width);
    cmd->add_option("--max-len", max_len);
    cmd->add_option("--buckets", buckets, "tokenizer hash buckets");
    cmd->add_option("--set", sets, "key.path=JSON override, e.g. finetune.seed=7");
  }

  json overrides() const {
    json j = json::object();
    auto put = [&](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    auto put_in = [&](const char* obj, const char* key, const auto& v) {
      if (v) j[obj][key] = *v;
    };
    put("run_id", run_id);
    put("data", data);
    put("output_root", output_root);
    put("corpus", corpus);
    put("normalize", normalize);
    put("normalize_seed", normalize_seed);
    put("formalization", formalization);
    put("strategy", strategy);
    put("seed", seed);
    put("negatives_per_positive", negatives);
    put("loss_scope", loss_scope);
    put("template_id", template_id);
    put("templates", templates);
    put("fallback_buckets", fallback_buckets);
    put("max_new_tokens", max_new_tokens);
    put_in("finetune", "learning_rate", lr);
    put_in("finetune", "batch_size", batch_size);
    put_in("finetune", "epochs", epochs);
    put_in("finetune", "warmup_fraction", warmup);
    put_in("finetune", "schedule", schedule);
    put_in("finetune", "weight_decay", weight_decay);
    put_in("pretrain", "learning_rate", pretrain_lr);
    put_in("pretrain", "batch_size", pretrain_batch_size);
    put_in("pretrain", "epochs", pretrain_epochs);
    put_in("pretrain", "schedule", pretrain_schedule);
    put_in("encoder", "hidden_width", hidden_width);
    put_in("encoder", "layers", layers);
    put_in("encoder", "heads", heads);
    put_in("encoder", "ffn_width", ffn_width);
    put_in("encoder", "max_sequence_length", max_len);
    put_in("encoder", "hash_buckets", buckets);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw zstc::ConfigError("--set expects key.path=value, got '" + s + "'");
      json value;
      try {
        value = json::parse(s.substr(eq + 1));
      } catch (const json::exception&) {
        value = s.substr(eq + 1);
      }
      std::string path = "/" + s.substr(0, eq);
      std::replace(path.begin(), path.end(), '.', '/');
      j[json::json_pointer(path)] = value;
    }
    return j;
  }

  zstc::RunConfig resolve() const {
    const json file = config_path.empty() ? json::object() : zstc::read_json_file(config_path);
    return zstc::resolve_config(file, overrides());
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot text classification: prepare, train, eval, overlap, report"};
  app.require_subcommand(1);

  auto* generate = app.add_subcommand("generate", "write the synthetic benchmark");
  std::string gen_out;
  std::string gen_spec;
  std::uint64_t gen_seed = 1;
  generate->add_option("-o,--out", gen_out, "output directory")->required();
  generate->add_option("--spec", gen_spec, "JSON synthetic spec (defaults otherwise)");
  generate->add_option("--seed", gen_seed);

  ConfigFlags prepare_flags, train_flags, eval_flags, overlap_flags;
  auto* prepare = app.add_subcommand("prepare", "ingest, normalize and describe the corpus");
  prepare_flags.attach(prepare);
  auto* train = app.add_subcommand("train", "run the training plan");
  train_flags.attach(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on test partitions");
  eval_flags.attach(eval);
  std::string which = "both";
  std::string checkpoint;
  eval->add_option("--which", which, "in|out|both")->check(CLI::IsMember({"in", "out", "both"}));
  eval->add_option("--checkpoint", checkpoint, "default: the run's last stage");
  auto* overlap = app.add_subcommand("overlap", "label token overlap of the prepared corpus");
  overlap_flags.attach(overlap);
  bool overlap_json = false;
  overlap->add_flag("--json", overlap_json);
  auto* report = app.add_subcommand("report", "aggregate metrics files");
  std::vector<std::string> metrics_files;
  bool report_json = false;
  report->add_option("metrics", metrics_files, "metrics JSON files")->required();
  report->add_flag("--json", report_json);

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      zstc::fixtures::SyntheticSpec spec;
      if (!gen_spec.empty()) spec = zstc::fixtures::SyntheticSpec::from_json(zstc::read_json_file(gen_spec));
      const auto datasets = zstc::fixtures::generate(spec, gen_seed);
      zstc::fixtures::write_benchmark(gen_out, datasets);
      std::cout << "wrote " << datasets.size() << " datasets to " << gen_out << "\n";
    } else if (prepare->parsed()) {
      const auto r = zstc::cmd_prepare(prepare_flags.resolve());
      std::cout << r.stats_table;
      for (const auto& [aspect, n] : r.aspect_unique_texts) std::cout << "unique " << aspect << " " << n << "\n";
    } else if (train->parsed()) {
      const auto cfg = train_flags.resolve();
      const auto art = zstc::cmd_train(cfg);
      for (const auto& c : art.checkpoints) std::cout << "checkpoint " << c.string() << "\n";
    } else if (eval->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (!checkpoint.empty()) ckpt = checkpoint;
      const auto rep = zstc::cmd_eval(eval_flags.resolve(), zstc::parse_eval_selection(which), ckpt);
      std::cout << rep.to_table();
    } else if (overlap->parsed()) {
      const auto cfg = overlap_flags.resolve();
      const auto m = zstc::corpus_overlap(zstc::load_manifest(cfg.corpus / "datasets.json"));
      std::cout << (overlap_json ? m.to_json().dump(2) + "\n" : m.to_table());
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> files(metrics_files.begin(), metrics_files.end());
      const auto rep = zstc::cmd_report(files);
      std::cout << (report_json ? rep.to_json().dump(2) + "\n" : rep.to_table());
    }
  } catch (const zstc::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
