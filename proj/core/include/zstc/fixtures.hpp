#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zstc/corpus.hpp"

namespace zstc::fixtures {

/// Target label-token overlap of an out-of-domain dataset with the in-domain
/// label vocabulary: low 20, medium 50, high 80 (percent).
enum class OverlapLevel : std::uint8_t { low, medium, high };

std::string_view to_string(OverlapLevel l);
OverlapLevel parse_overlap_level(std::string_view s);
double target_percent(OverlapLevel l);

struct SyntheticSpec {
  std::vector<Aspect> aspects = {Aspect::sentiment, Aspect::intent, Aspect::topic};
  std::size_t in_datasets_per_aspect = 2;
  std::size_t out_datasets_per_aspect = 1;
  std::size_t labels_per_dataset = 4;
  std::size_t train_texts_per_label = 25;
  std::size_t test_texts_per_label = 10;
  /// Multiplies train_texts_per_label per aspect (same order as aspects);
  /// empty means 1 for every aspect.
  std::vector<double> aspect_train_scale;
  std::size_t keywords_per_label = 4;
  std::size_t markers_per_aspect = 2;
  std::size_t noise_words = 40;
  /// Cycled over out-of-domain datasets in generation order.
  std::vector<OverlapLevel> out_overlap = {OverlapLevel::high, OverlapLevel::medium, OverlapLevel::low};
  /// Fraction of test texts that carry a second gold label.
  double multi_label_fraction = 0.0;
  /// When non-zero, generated words occupy distinct buckets of a
  /// Tokenizer with this many buckets and avoid the prompt-template words.
  std::size_t distinct_buckets = 1024;

  /// Throws ConfigError on an inconsistent spec.
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct GeneratedDataset {
  Dataset dataset;
  /// Target for out-of-domain datasets; unset for in-domain ones.
  std::optional<OverlapLevel> overlap;
};

/// Builds the benchmark. Texts mix label words, label keywords, aspect
/// markers and noise words. Throws ConfigError when an overlap target cannot
/// be met within 10 points.
std::vector<GeneratedDataset> generate(const SyntheticSpec& spec, std::uint64_t seed);

/// Writes <id>.jsonl per dataset and a datasets.json manifest into dir.
void write_benchmark(const std::filesystem::path& dir, const std::vector<GeneratedDataset>& datasets);

}  // namespace zstc::fixtures
