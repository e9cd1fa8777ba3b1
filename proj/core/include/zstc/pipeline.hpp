#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zstc/corpus.hpp"
#include "zstc/encoder.hpp"
#include "zstc/evaluation.hpp"
#include "zstc/strategies.hpp"

namespace zstc {

inline constexpr const char* kOutputRootEnv = "ZSTC_OUTPUT_ROOT";

/// Everything a prepare/train/eval run needs. Only data and run_id lack
/// defaults; the remaining fields resolve as flag > file > default.
struct RunConfig {
  std::string run_id;
  std::filesystem::path data;  ///< raw dataset manifest (datasets.json)
  std::filesystem::path output_root;
  std::filesystem::path corpus;  ///< prepared corpus dir; default <output_root>/corpus
  bool normalize = true;
  std::uint64_t normalize_seed = 13;
  Formalization formalization = Formalization::binary;
  Strategy strategy = Strategy::vanilla;
  std::uint64_t seed = 42;
  EncoderConfig encoder;
  OptimizerConfig pretrain;
  OptimizerConfig finetune;
  std::size_t negatives_per_positive = 3;
  LossScope loss_scope = LossScope::full_sequence;
  std::string template_id = std::string(kDefaultTemplate);
  std::filesystem::path templates;  ///< optional JSON template pack
  std::size_t fallback_buckets = 4096;
  std::size_t max_new_tokens = 0;

  std::filesystem::path run_dir() const { return output_root / run_id; }
  TrainingPlan plan() const;
  nlohmann::json to_json() const;
};

/// Output root when no flag or file sets one: $ZSTC_OUTPUT_ROOT, else "runs".
std::filesystem::path default_output_root();

/// Merges flags over file (JSON merge-patch) and fills the rest with defaults.
/// Stage defaults follow the formalization; the global seed seeds the encoder
/// and both stages unless they set their own. Unknown keys are rejected.
RunConfig resolve_config(const nlohmann::json& file, const nlohmann::json& flags = nlohmann::json::object());
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Reads a datasets.json manifest: an array of dataset specs, each with a
/// "path" relative to the manifest. Entries without "labels" are scanned.
std::vector<Dataset> load_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& dir, const std::vector<Dataset>& datasets);

struct PrepareResult {
  std::vector<Dataset> datasets;
  std::string stats_table;  ///< one "<dataset> <aspect> <train>/<test> <#labels>" row per dataset
  std::map<std::string, std::size_t> aspect_unique_texts;
  OverlapMatrix overlap;
};

std::string stats_row(const Dataset& d);
/// Rows are the in-domain datasets plus a final "in:all" merged vocabulary.
OverlapMatrix corpus_overlap(const std::vector<Dataset>& datasets);

/// Loads cfg.data, aspect-normalizes the in-domain train partitions when
/// cfg.normalize holds, and writes the corpus, stats.txt, stats.json,
/// overlap.json and overlap.txt into cfg.corpus.
PrepareResult cmd_prepare(const RunConfig& cfg);

/// Runs the training plan on the prepared in-domain corpus. Writes
/// <run_dir>/config.json, checkpoints/<stage>/ and logs/stage<stage>.jsonl.
RunArtifacts cmd_train(const RunConfig& cfg);

enum class EvalSelection : std::uint8_t { in, out, both };
EvalSelection parse_eval_selection(std::string_view s);
std::string_view to_string(EvalSelection s);

/// Evaluates a checkpoint (default: the run's last stage) on the test
/// partitions of the selected datasets. Writes metrics/<which>.json and
/// metrics/<dataset>.csv under the run dir.
Report cmd_eval(const RunConfig& cfg, EvalSelection which,
                const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Aggregates the records of one or more metrics JSON files.
Report cmd_report(const std::vector<std::filesystem::path>& metrics_files);

}  // namespace zstc
