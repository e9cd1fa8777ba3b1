#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "zstc/corpus.hpp"
#include "zstc/encoder.hpp"
#include "zstc/formalizations.hpp"
#include "zstc/optim.hpp"

namespace zstc {

/// How aspect knowledge enters training.
///   vanilla:  plain fine-tuning
///   implicit: every instance carries its aspect (token or prompt phrase)
///   explicit: an aspect-detection stage initializes fine-tuning
enum class Strategy : std::uint8_t { vanilla, implicit, explicit_pretrain };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

enum class StageKind : std::uint8_t { aspect_pretrain, finetune };
std::string_view to_string(StageKind k);

struct Stage {
  StageKind kind = StageKind::finetune;
  OptimizerConfig optimizer;
};

struct TrainingPlan {
  Strategy strategy = Strategy::vanilla;
  Formalization formalization = Formalization::binary;
  std::vector<Stage> stages;
  std::size_t negatives_per_positive = 3;
  LossScope loss_scope = LossScope::full_sequence;
  std::string template_id = std::string(kDefaultTemplate);
  TemplatePack templates = TemplatePack::defaults();

  /// Explicit plans have exactly [aspect_pretrain, finetune]; others [finetune].
  void validate() const;
};

/// Fine-tuning defaults: lr 2e-5, batch 16, 10% warmup, linear (binary, dual,
/// sequence_cls); lr 4e-5, batch 128, 1% warmup, cosine (generative). All use
/// 3 epochs and weight decay 0.01.
OptimizerConfig default_finetune_config(Formalization f);
/// Aspect pre-training defaults: lr 2e-5, batch 16, 10% warmup, cosine, 3 epochs.
OptimizerConfig default_pretrain_config();
TrainingPlan make_plan(Strategy strategy, Formalization formalization);

/// Adds the aspect to an instance. Throws DataError when one is already set.
ClassificationInstance inject_aspect(ClassificationInstance instance, Aspect aspect);

/// Training instances for one fine-tuning pass over the train partitions.
/// Implicit plans inject each example's aspect; vanilla plans never do.
std::vector<ClassificationInstance> build_instances(const TrainingPlan& plan, const std::vector<Dataset>& corpus,
                                                    std::uint64_t seed);

/// Union of the datasets' vocabularies: the fixed label space of the
/// sequence-classification baseline.
std::vector<std::string> label_space(const std::vector<Dataset>& corpus);

struct LogEntry {
  std::size_t stage = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainingLog {
  std::vector<LogEntry> entries;
  /// One {stage, step, loss, learning_rate} object per line.
  std::string to_jsonl() const;
};

inline const std::string kAspectHead = "aspect";

/// Trains the temporary aspect head (bidirectional) or aspect-name generation
/// (autoregressive) on texts deduplicated to their first aspect. The returned
/// model keeps the aspect head attached.
ReferenceEncoder train_aspect_detector(ReferenceEncoder model, const std::vector<Example>& corpus,
                                       const OptimizerConfig& config, TrainingLog* log = nullptr,
                                       std::size_t stage_index = 0);
Aspect predict_aspect(const ReferenceEncoder& model, std::string_view text);
/// train_aspect_detector followed by discarding the aspect head.
ReferenceEncoder aspect_pretrain(ReferenceEncoder model, const std::vector<Example>& corpus,
                                 const OptimizerConfig& config, TrainingLog* log = nullptr,
                                 std::size_t stage_index = 0);

struct StageResult {
  ReferenceEncoder model;
  TrainingLog log;
};

/// Runs plan.stages[stage_index] (a finetune stage) over the train partitions.
StageResult finetune(ReferenceEncoder model, const TrainingPlan& plan, std::size_t stage_index,
                     const std::vector<Dataset>& corpus);

struct RunArtifacts {
  ReferenceEncoder model;
  TrainingLog log;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> logs;
};

/// Executes the stages in order. With a non-empty run_dir each stage writes
/// run_dir/checkpoints/<stage>/ and run_dir/logs/stage<stage>.jsonl.
RunArtifacts run_plan(const TrainingPlan& plan, ReferenceEncoder model_init, const std::vector<Dataset>& corpus,
                      const std::filesystem::path& run_dir = {});

}  // namespace zstc
