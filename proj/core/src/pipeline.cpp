#include "zstc/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "zstc/error.hpp"

namespace zstc {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path default_output_root() {
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
  return "runs";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

const std::set<std::string> kConfigKeys = {
    "run_id", "data", "output_root", "corpus", "normalize", "normalize_seed",
    "formalization", "strategy", "seed", "encoder", "pretrain", "finetune",
    "negatives_per_positive", "loss_scope", "template_id", "templates", "fallback_buckets",
    "max_new_tokens"};

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << s;
}

std::vector<Dataset> load_corpus(const RunConfig& cfg) {
  const fs::path manifest = cfg.corpus / "datasets.json";
  if (!fs::exists(manifest))
    throw DataError("no prepared corpus at " + cfg.corpus.string() + " (run prepare first)");
  return load_manifest(manifest);
}

}  // namespace

TrainingPlan RunConfig::plan() const {
  TrainingPlan p;
  p.strategy = strategy;
  p.formalization = formalization;
  if (strategy == Strategy::explicit_pretrain) p.stages.push_back({StageKind::aspect_pretrain, pretrain});
  p.stages.push_back({StageKind::finetune, finetune});
  p.negatives_per_positive = negatives_per_positive;
  p.loss_scope = loss_scope;
  p.template_id = template_id;
  p.templates = templates.empty() ? TemplatePack::defaults() : TemplatePack::load(templates);
  if (!p.templates.contains(template_id)) throw ConfigError("unknown template '" + template_id + "'");
  p.validate();
  return p;
}

json RunConfig::to_json() const {
  return {{"run_id", run_id},
          {"data", data.string()},
          {"output_root", output_root.string()},
          {"corpus", corpus.string()},
          {"normalize", normalize},
          {"normalize_seed", normalize_seed},
          {"formalization", zstc::to_string(formalization)},
          {"strategy", zstc::to_string(strategy)},
          {"seed", seed},
          {"encoder", encoder.to_json()},
          {"pretrain", pretrain.to_json()},
          {"finetune", finetune.to_json()},
          {"negatives_per_positive", negatives_per_positive},
          {"loss_scope", zstc::to_string(loss_scope)},
          {"template_id", template_id},
          {"templates", templates.string()},
          {"fallback_buckets", fallback_buckets},
          {"max_new_tokens", max_new_tokens}};
}

RunConfig resolve_config(const json& file, const json& flags) {
  json merged = file.is_null() ? json::object() : file;
  if (!merged.is_object()) throw ConfigError("configuration must be a JSON object");
  merged.merge_patch(flags);
  for (const auto& [key, _] : merged.items())
    if (!kConfigKeys.contains(key)) throw ConfigError("unknown configuration key '" + key + "'");

  RunConfig c;
  try {
    c.run_id = merged.value("run_id", "");
    c.data = merged.value("data", "");
    c.output_root = merged.contains("output_root") ? fs::path(merged["output_root"].get<std::string>())
                                                   : default_output_root();
    c.corpus = merged.contains("corpus") ? fs::path(merged["corpus"].get<std::string>()) : c.output_root / "corpus";
    c.normalize = merged.value("normalize", c.normalize);
    c.normalize_seed = merged.value("normalize_seed", c.normalize_seed);
    c.formalization = parse_formalization(merged.value("formalization", "binary"));
    c.strategy = parse_strategy(merged.value("strategy", "vanilla"));
    c.seed = merged.value("seed", c.seed);

    EncoderConfig enc;
    enc.seed = c.seed;
    enc.mode = required_mode(c.formalization);
    json ej = enc.to_json();
    if (merged.contains("encoder")) ej.merge_patch(merged["encoder"]);
    c.encoder = EncoderConfig::from_json(ej);
    if (c.encoder.mode != required_mode(c.formalization))
      throw ConfigError("encoder mode " + std::string(to_string(c.encoder.mode)) + " does not fit formalization " +
                        std::string(to_string(c.formalization)));

    OptimizerConfig pre = default_pretrain_config();
    pre.seed = c.seed;
    c.pretrain = OptimizerConfig::from_json(merged.value("pretrain", json::object()), pre);
    OptimizerConfig fin = default_finetune_config(c.formalization);
    fin.seed = c.seed;
    c.finetune = OptimizerConfig::from_json(merged.value("finetune", json::object()), fin);

    c.negatives_per_positive = merged.value("negatives_per_positive", c.negatives_per_positive);
    c.loss_scope = parse_loss_scope(merged.value("loss_scope", std::string(to_string(c.loss_scope))));
    c.template_id = merged.value("template_id", c.template_id);
    c.templates = merged.value("templates", "");
    c.fallback_buckets = merged.value("fallback_buckets", c.fallback_buckets);
    c.max_new_tokens = merged.value("max_new_tokens", c.max_new_tokens);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  }
  if (c.fallback_buckets == 0) throw ConfigError("fallback_buckets must be positive");
  c.plan();
  return c;
}

std::vector<Dataset> load_manifest(const fs::path& manifest) {
  const json entries = read_json_file(manifest);
  if (!entries.is_array()) throw DataError(manifest.string() + ": expected an array of dataset entries");
  const fs::path base = manifest.parent_path();
  std::vector<Dataset> out;
  std::set<std::string> ids;
  for (const auto& entry : entries) {
    if (!entry.contains("path")) throw DataError(manifest.string() + ": dataset entry without a path");
    const fs::path path = base / entry["path"].get<std::string>();
    DatasetSpec spec;
    try {
      spec = entry.contains("labels") ? spec_from_json(entry) : scan_dataset(path);
    } catch (const json::exception& e) {
      throw DataError(manifest.string() + ": " + e.what());
    }
    if (!entry.contains("labels") && entry.contains("counts"))
      spec.counts = PartitionCounts{entry["counts"].at("train").get<std::size_t>(),
                                    entry["counts"].at("test").get<std::size_t>()};
    spec.validate();
    if (!ids.insert(spec.dataset_id).second) throw DataError(manifest.string() + ": duplicate dataset '" + spec.dataset_id + "'");
    Dataset d{spec, load_dataset(path, spec)};
    out.push_back(std::move(d));
  }
  return out;
}

void write_manifest(const fs::path& dir, const std::vector<Dataset>& datasets) {
  fs::create_directories(dir);
  json manifest = json::array();
  for (const auto& d : datasets) {
    const std::string file = d.spec.dataset_id + ".jsonl";
    write_jsonl(dir / file, d.examples);
    DatasetSpec spec = d.spec;
    spec.counts = d.counts();
    json entry = to_json(spec);
    entry["path"] = file;
    manifest.push_back(std::move(entry));
  }
  write_text(dir / "datasets.json", manifest.dump(2) + "\n");
}

std::string stats_row(const Dataset& d) {
  const auto c = d.counts();
  return d.spec.dataset_id + " " + std::string(to_string(d.spec.aspect)) + " " + std::to_string(c.train) + "/" +
         std::to_string(c.test) + " " + std::to_string(d.spec.label_vocabulary.size());
}

OverlapMatrix corpus_overlap(const std::vector<Dataset>& datasets) {
  std::vector<DatasetSpec> in_specs, out_specs;
  for (const auto& d : datasets) (d.spec.split == Split::in_domain ? in_specs : out_specs).push_back(d.spec);
  if (in_specs.empty() || out_specs.empty())
    throw DataError("overlap needs at least one in-domain and one out-of-domain dataset");
  in_specs.push_back(merge_vocabularies("in:all", in_specs));
  return overlap_matrix(in_specs, out_specs);
}

PrepareResult cmd_prepare(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("prepare needs a data manifest");
  std::vector<Dataset> datasets = load_manifest(cfg.data);

  std::map<Aspect, AspectCorpus> by_aspect;
  for (const auto& d : datasets) {
    if (d.spec.split != Split::in_domain) continue;
    auto& corpus = by_aspect[d.spec.aspect];
    corpus.aspect = d.spec.aspect;
    corpus.datasets.push_back(d);
  }
  if (cfg.normalize) {
    if (by_aspect.size() < 2) {
      spdlog::warn("aspect normalization skipped: fewer than two in-domain aspects");
    } else {
      std::vector<AspectCorpus> corpora;
      for (auto& [_, c] : by_aspect) corpora.push_back(std::move(c));
      const auto normalized = aspect_normalize(corpora, cfg.normalize_seed);
      by_aspect.clear();
      std::map<std::string, const Dataset*> by_id;
      for (const auto& c : normalized) by_aspect[c.aspect] = c;
      for (const auto& [_, c] : by_aspect)
        for (const auto& d : c.datasets) by_id[d.spec.dataset_id] = &d;
      for (auto& d : datasets)
        if (auto it = by_id.find(d.spec.dataset_id); it != by_id.end()) d = *it->second;
    }
  }

  PrepareResult r;
  r.datasets = datasets;
  std::string table = "Dataset Aspect Train/Test #labels\n";
  json stats = json::array();
  for (const auto& d : datasets) {
    table += stats_row(d) + "\n";
    const auto c = d.counts();
    stats.push_back({{"dataset", d.spec.dataset_id},
                     {"aspect", to_string(d.spec.aspect)},
                     {"split", to_string(d.spec.split)},
                     {"train", c.train},
                     {"test", c.test},
                     {"labels", d.spec.label_vocabulary.size()}});
  }
  r.stats_table = table;
  for (const auto& [aspect, c] : by_aspect) r.aspect_unique_texts[std::string(to_string(aspect))] = c.unique_text_count();

  fs::create_directories(cfg.corpus);
  write_manifest(cfg.corpus, datasets);
  write_text(cfg.corpus / "stats.txt", table);
  write_text(cfg.corpus / "stats.json",
             json{{"datasets", stats}, {"aspect_unique_texts", r.aspect_unique_texts}}.dump(2) + "\n");
  bool has_out = false;
  for (const auto& d : datasets) has_out = has_out || d.spec.split == Split::out_of_domain;
  if (has_out && !by_aspect.empty()) {
    r.overlap = corpus_overlap(datasets);
    write_text(cfg.corpus / "overlap.json", r.overlap.to_json().dump(2) + "\n");
    write_text(cfg.corpus / "overlap.txt", r.overlap.to_table());
  }
  return r;
}

RunArtifacts cmd_train(const RunConfig& cfg) {
  if (cfg.run_id.empty()) throw ConfigError("train needs a run_id");
  const TrainingPlan plan = cfg.plan();
  std::vector<Dataset> in_domain;
  for (auto& d : load_corpus(cfg))
    if (d.spec.split == Split::in_domain) in_domain.push_back(std::move(d));
  if (in_domain.empty()) throw DataError("prepared corpus has no in-domain datasets");

  const fs::path run_dir = cfg.run_dir();
  fs::create_directories(run_dir / "checkpoints");
  for (const auto& entry : fs::directory_iterator(run_dir / "checkpoints"))
    if (entry.path().filename().string().starts_with(".")) fs::remove_all(entry.path());
  write_text(run_dir / "config.json", cfg.to_json().dump(2) + "\n");
  return run_plan(plan, ReferenceEncoder(cfg.encoder), in_domain, run_dir);
}

EvalSelection parse_eval_selection(std::string_view s) {
  if (s == "in") return EvalSelection::in;
  if (s == "out") return EvalSelection::out;
  if (s == "both") return EvalSelection::both;
  throw ConfigError("unknown evaluation selection '" + std::string(s) + "' (in|out|both)");
}

std::string_view to_string(EvalSelection s) {
  switch (s) {
    case EvalSelection::in: return "in";
    case EvalSelection::out: return "out";
    case EvalSelection::both: return "both";
  }
  return "unknown";
}

Report cmd_eval(const RunConfig& cfg, EvalSelection which, const std::optional<fs::path>& checkpoint) {
  if (cfg.run_id.empty()) throw ConfigError("eval needs a run_id");
  const TrainingPlan plan = cfg.plan();
  const fs::path run_dir = cfg.run_dir();
  const fs::path ckpt =
      checkpoint ? *checkpoint : run_dir / "checkpoints" / std::to_string(plan.stages.size() - 1);
  if (!fs::exists(ckpt / "manifest.json")) throw ModelError("missing checkpoint " + ckpt.string());
  const ReferenceEncoder model = load_checkpoint(ckpt);
  if (const auto it = model.metadata().find("formalization");
      it != model.metadata().end() && it->get<std::string>() != to_string(cfg.formalization))
    throw ConfigError("checkpoint was trained as " + it->get<std::string>() + ", config says " +
                      std::string(to_string(cfg.formalization)));

  const BagOfTokensEmbedder fallback(cfg.fallback_buckets);
  GenerativeOptions gen{cfg.template_id, plan.templates, cfg.max_new_tokens};
  const ModelClassifier classifier(model, cfg.formalization, &fallback, gen);
  const AspectPolicy policy = cfg.strategy == Strategy::implicit ? AspectPolicy::known : AspectPolicy::none;

  std::vector<MetricsRecord> records;
  const fs::path metrics_dir = run_dir / "metrics";
  fs::create_directories(metrics_dir);
  for (const auto& d : load_corpus(cfg)) {
    const bool in = d.spec.split == Split::in_domain;
    if ((which == EvalSelection::in && !in) || (which == EvalSelection::out && in)) continue;
    auto rec = evaluate(classifier, d, policy, cfg.run_id, true);
    write_predictions_csv(metrics_dir / (d.spec.dataset_id + ".csv"), rec);
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw DataError("no datasets match selection '" + std::string(to_string(which)) + "'");
  Report report = aggregate(records);
  write_text(metrics_dir / (std::string(to_string(which)) + ".json"), report.to_json().dump(2) + "\n");
  if (!fs::exists(run_dir / "config.json")) write_text(run_dir / "config.json", cfg.to_json().dump(2) + "\n");
  return report;
}

Report cmd_report(const std::vector<fs::path>& metrics_files) {
  std::vector<MetricsRecord> records;
  for (const auto& f : metrics_files) {
    const json j = read_json_file(f);
    if (!j.contains("records") || !j["records"].is_array()) throw DataError(f.string() + ": no records array");
    for (const auto& r : j["records"]) records.push_back(MetricsRecord::from_json(r));
  }
  return aggregate(records);
}

}  // namespace zstc
