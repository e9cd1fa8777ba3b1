#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "zstc/corpus.hpp"
#include "zstc/encoder.hpp"

namespace zstc {

enum class Formalization : std::uint8_t { binary, dual, generative, sequence_cls };

std::string_view to_string(Formalization f);
Formalization parse_formalization(std::string_view s);
/// Encoder mode a formalization runs on.
Mode required_mode(Formalization f);

/// Formalization-specific model input with its training target.
///   binary:       label + bool target
///   dual:         label + similarity target in {0, 1}
///   generative:   options + answer string
///   sequence_cls: class index into the fixed label space
struct ClassificationInstance {
  Formalization kind = Formalization::binary;
  std::string text;
  std::string label;
  std::vector<std::string> options;
  std::optional<Aspect> aspect;
  std::variant<bool, double, std::string, std::size_t> target;

  /// Throws DataError when the target type does not match kind.
  void validate() const;
};

// ----------------------------------------------------------- input layouts

/// [start] label ([sep] aspect) [sep] text, with text truncated to fit.
/// Throws ModelError when the label block alone exceeds max_len.
std::vector<TokenId> binary_input(const Tokenizer& tok, std::string_view label, std::optional<Aspect> aspect,
                                  std::string_view text, std::size_t max_len);
/// [start] text, truncated to max_len.
std::vector<TokenId> text_input(const Tokenizer& tok, std::string_view text, std::size_t max_len);
/// [start] label ([sep] aspect). Labels are never truncated.
std::vector<TokenId> label_input(const Tokenizer& tok, std::string_view label, std::optional<Aspect> aspect,
                                 std::size_t max_len);

// --------------------------------------------------------- instance builders

/// One True instance per gold label, each followed by up to
/// negatives_per_positive False instances drawn uniformly without replacement
/// from the non-gold vocabulary.
std::vector<ClassificationInstance> make_binary_pairs(const Example& example, const std::vector<std::string>& vocabulary,
                                                      std::size_t negatives_per_positive, std::uint64_t seed);
/// Same sampling as make_binary_pairs with {0, 1} similarity targets.
std::vector<ClassificationInstance> make_dual_pairs(const Example& example, const std::vector<std::string>& vocabulary,
                                                    std::size_t negatives_per_positive, std::uint64_t seed);
ClassificationInstance make_generative_instance(const Example& example, const std::vector<std::string>& options);
ClassificationInstance make_sequence_instance(const Example& example, const std::vector<std::string>& label_space);

// ------------------------------------------------------------ prompt builder

/// template_id -> pattern with {text}, {options}, {aspect_phrase} slots.
class TemplatePack {
 public:
  static TemplatePack defaults();
  /// JSON object mapping template ids to patterns; entries override defaults.
  static TemplatePack load(const std::filesystem::path& path);

  const std::string& get(const std::string& id) const;
  void set(const std::string& id, std::string pattern) { patterns_[id] = std::move(pattern); }
  bool contains(const std::string& id) const { return patterns_.contains(id); }

 private:
  std::map<std::string, std::string> patterns_;
};

inline constexpr std::string_view kDefaultTemplate = "default";
inline constexpr std::string_view kAspectTemplate = "aspect";
inline constexpr std::size_t kPromptTextFloor = 1;

struct GenerativePrompt {
  std::vector<TokenId> tokens;  ///< starts with [start], ends before the answer
  std::size_t answer_start = 0;  ///< index where answer tokens begin (== tokens.size())
  std::vector<std::string> options;
  std::string rendered;
  SurfaceTable surfaces;  ///< word pieces of the rendered prompt, for decoding
};

std::string aspect_phrase(std::optional<Aspect> aspect);

/// Renders the template with options in caller order. Text is truncated from
/// the end so the prompt plus the longest option and an end marker fit in
/// max_len; throws ModelError when fewer than kPromptTextFloor text pieces
/// would remain.
GenerativePrompt build_generative_prompt(const Tokenizer& tok, std::string_view text,
                                         const std::vector<std::string>& options, std::optional<Aspect> aspect,
                                         std::string_view template_id, const TemplatePack& pack, std::size_t max_len);

// ----------------------------------------------------------- losses

enum class LossScope : std::uint8_t { full_sequence, answer_only };
std::string_view to_string(LossScope s);
LossScope parse_loss_scope(std::string_view s);

inline const std::string kBinaryHead = "binary";
inline const std::string kSequenceHead = "seq_cls";

ad::Var binary_loss(ad::Tape& tape, const ReferenceEncoder& model, const ClassificationInstance& inst);
/// (cos(phi(x), phi(y)) - target)^2 with phi = encode -> mean pool.
ad::Var dual_loss(ad::Tape& tape, const ReferenceEncoder& model, const ClassificationInstance& inst);
/// Sum of next-token cross-entropies over prompt + answer + [eos].
ad::Var generative_loss(ad::Tape& tape, const ReferenceEncoder& model, const GenerativePrompt& prompt,
                        std::string_view answer, LossScope scope = LossScope::full_sequence);
ad::Var sequence_loss(ad::Tape& tape, const ReferenceEncoder& model, const ClassificationInstance& inst);

/// Token sequence prompt + answer + [eos] used by generative_loss.
std::vector<TokenId> generative_sequence(const Tokenizer& tok, const GenerativePrompt& prompt, std::string_view answer);

// ---------------------------------------------------------- predictors

struct SequencePrediction {
  std::size_t index = 0;
  RowVector probabilities;
};

SequencePrediction seq_cls_predict(const ReferenceEncoder& model, std::string_view text);

double binary_score(const ReferenceEncoder& model, std::string_view text, std::string_view label,
                    std::optional<Aspect> aspect = std::nullopt);
std::string binary_predict(const ReferenceEncoder& model, std::string_view text,
                           const std::vector<std::string>& candidates, std::optional<Aspect> aspect = std::nullopt);

/// Mean-pooled embedding of text as seen by the dual encoder.
RowVector dual_text_embedding(const ReferenceEncoder& model, std::string_view text);
RowVector dual_label_embedding(const ReferenceEncoder& model, std::string_view label, std::optional<Aspect> aspect);
/// Cosine similarity in [-1, 1]; 0 (with a warning) when an embedding has zero norm.
double cosine_similarity(const RowVector& a, const RowVector& b);
double dual_encode_score(const ReferenceEncoder& model, std::string_view text, std::string_view label,
                         std::optional<Aspect> aspect = std::nullopt);
std::string dual_predict(const ReferenceEncoder& model, std::string_view text,
                         const std::vector<std::string>& candidates, std::optional<Aspect> aspect = std::nullopt);

/// Greedy decoding until [eos], max_new_tokens, or the length limit.
std::string generative_predict(const ReferenceEncoder& model, const GenerativePrompt& prompt,
                               std::size_t max_new_tokens);

/// Index of the maximum score; ties go to the lowest index. Throws on empty input.
std::size_t argmax_first(const std::vector<double>& scores);

}  // namespace zstc
