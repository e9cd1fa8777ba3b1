#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zstc/aspect.hpp"

namespace zstc {

/// One text with its gold label set. gold_labels keeps record order; the
/// first label is the stratum used by aspect normalization.
struct Example {
  std::string text;
  std::vector<std::string> gold_labels;
  std::string dataset_id;
  Aspect aspect = Aspect::sentiment;
  Split split = Split::in_domain;
  Partition partition = Partition::train;

  bool operator==(const Example&) const = default;
};

struct PartitionCounts {
  std::size_t train = 0;
  std::size_t test = 0;
  bool operator==(const PartitionCounts&) const = default;
};

struct DatasetSpec {
  std::string dataset_id;
  Aspect aspect = Aspect::sentiment;
  Split split = Split::in_domain;
  std::vector<std::string> label_vocabulary;
  /// When set, ingestion fails unless the file holds exactly these counts.
  std::optional<PartitionCounts> counts;

  /// Throws DataError on duplicate (case-folded, trimmed) or non-textual labels.
  void validate() const;
  bool has_label(const std::string& label) const;
  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Example> examples;

  std::vector<Example> partition(Partition p) const;
  PartitionCounts counts() const;
};

/// All in-domain datasets of one aspect.
struct AspectCorpus {
  Aspect aspect = Aspect::sentiment;
  std::vector<Dataset> datasets;

  /// Distinct texts across the members' train partitions.
  std::size_t unique_text_count() const;
};

// ---------------------------------------------------------------- ingestion

Example parse_record(const nlohmann::json& j);
nlohmann::json to_json(const Example& e);

/// Reads a JSONL dataset and validates every record against spec. Record order
/// is preserved. Errors carry the file name and 1-based line number.
std::vector<Example> load_dataset(const std::filesystem::path& path, const DatasetSpec& spec);

/// Derives a spec from the records of a single-dataset JSONL file; the label
/// vocabulary is ordered by first appearance.
DatasetSpec scan_dataset(const std::filesystem::path& path);

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);

nlohmann::json to_json(const DatasetSpec& s);
DatasetSpec spec_from_json(const nlohmann::json& j);

// ------------------------------------------------------------ standardizing

/// Label rewrite table. Two source labels may share a target only when that
/// target is listed in merge_targets.
struct LabelMapping {
  std::map<std::string, std::string> rewrite;
  std::set<std::string> merge_targets;
};

Dataset standardize_labels(const Dataset& dataset, const LabelMapping& mapping);

// ------------------------------------------------------------ normalization

/// Subsamples train partitions so every corpus ends with the minimum
/// unique-text count among the inputs. Sampling is stratified per dataset by
/// first gold label with largest-remainder rounding and a floor of one text
/// per class. Test partitions are returned unchanged.
std::vector<AspectCorpus> aspect_normalize(const std::vector<AspectCorpus>& corpora, std::uint64_t seed);

/// Per-label share of unique train texts, keyed by first gold label.
std::map<std::string, double> label_proportions(const Dataset& dataset);

/// Records sorted by (dataset_id, text, first label), one JSON object per line.
std::string canonical_serialization(std::vector<Example> examples);

// ------------------------------------------------------------------ overlap

/// 100 * |T(out) ∩ T(in)| / |T(out)| over case-folded alphanumeric label tokens.
double label_overlap(const DatasetSpec& in_spec, const DatasetSpec& out_spec);

struct OverlapMatrix {
  std::vector<std::string> in_ids;
  std::vector<std::string> out_ids;
  /// scores[i][j] = label_overlap(in[i], out[j])
  std::vector<std::vector<double>> scores;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

OverlapMatrix overlap_matrix(const std::vector<DatasetSpec>& in_specs, const std::vector<DatasetSpec>& out_specs);

/// Spec holding the union of the given vocabularies (first appearance order).
DatasetSpec merge_vocabularies(const std::string& id, const std::vector<DatasetSpec>& specs);

}  // namespace zstc
