#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zstc/corpus.hpp"
#include "zstc/encoder.hpp"
#include "zstc/formalizations.hpp"

namespace zstc {

/// True iff prediction equals one of the gold labels after text::canonical.
/// Throws DataError on an empty gold set.
bool is_correct(std::string_view prediction, const std::vector<std::string>& gold);

inline constexpr std::string_view kEmptyGeneration = "unknown";

/// Resolves free-form generated text to a candidate. A canonical exact match
/// (or a single candidate) is returned without calling the embedder; otherwise
/// the candidate with the highest cosine similarity wins, ties to the lowest
/// index. Empty generations are embedded as kEmptyGeneration.
std::string map_generated_to_label(std::string_view generated, const std::vector<std::string>& candidates,
                                   const TextEncoder& embedder);

/// Whether the evaluated model is told the dataset's aspect (implicit models).
enum class AspectPolicy : std::uint8_t { none, known };

/// Anything that picks one label for a text.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string predict(std::string_view text, const std::vector<std::string>& candidates,
                              std::optional<Aspect> aspect) const = 0;
};

struct GenerativeOptions {
  std::string template_id = std::string(kDefaultTemplate);
  TemplatePack templates = TemplatePack::defaults();
  /// 0 selects the longest candidate's token count plus one.
  std::size_t max_new_tokens = 0;
};

/// Adapts a trained ReferenceEncoder under one formalization. Generative
/// predictions go through map_generated_to_label with fallback.
class ModelClassifier : public Classifier {
 public:
  /// Throws ModelError on a mode mismatch, a missing head, or a generative
  /// formalization without a fallback embedder.
  ModelClassifier(const ReferenceEncoder& model, Formalization formalization, const TextEncoder* fallback = nullptr,
                  GenerativeOptions options = {});

  std::string predict(std::string_view text, const std::vector<std::string>& candidates,
                      std::optional<Aspect> aspect) const override;

  Formalization formalization() const { return formalization_; }

 private:
  const ReferenceEncoder& model_;
  Formalization formalization_;
  const TextEncoder* fallback_;
  GenerativeOptions options_;
  std::vector<std::string> seq_labels_;
};

struct PredictionRow {
  std::string text_hash;
  std::vector<std::string> gold;
  std::string prediction;
  bool correct = false;
};

struct MetricsRecord {
  std::string run_id;
  std::string dataset_id;
  Aspect aspect = Aspect::sentiment;
  Split split = Split::in_domain;
  std::size_t correct = 0;
  std::size_t n_examples = 0;
  double accuracy = 0.0;  ///< correct / n_examples
  std::vector<PredictionRow> predictions;

  nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& j);
};

/// Scores every test-partition example of dataset against the dataset's own
/// vocabulary. Throws DataError when there are no test examples.
MetricsRecord evaluate(const Classifier& classifier, const Dataset& dataset, AspectPolicy policy,
                       const std::string& run_id = {}, bool keep_predictions = true);

/// Writes text_hash,gold,prediction,correct rows; gold labels joined by '|'.
void write_predictions_csv(const std::filesystem::path& path, const MetricsRecord& record);

struct Report {
  std::string run_id;
  std::vector<MetricsRecord> records;
  std::map<std::string, double> aspect_means;
  double average = 0.0;  ///< unweighted mean over records

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Throws DataError on an empty record list.
Report aggregate(const std::vector<MetricsRecord>& records);

}  // namespace zstc
