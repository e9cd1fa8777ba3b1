#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zstc/autodiff.hpp"
#include "zstc/tokenizer.hpp"

namespace zstc {

enum class Mode : std::uint8_t { bidirectional, autoregressive };
enum class Pooling : std::uint8_t { first_token, mean };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct EncoderInfo {
  std::size_t vocabulary_size = 0;
  std::size_t hidden_width = 0;
  std::size_t max_sequence_length = 0;
  Mode mode = Mode::bidirectional;
};

/// Contract every text backend satisfies: token ids in, one hidden vector per
/// token out. Implementations must be deterministic and safe to call
/// concurrently on a fixed parameter snapshot.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual EncoderInfo info() const = 0;
  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
  /// Returns a |tokens| x hidden_width matrix. Throws ModelError on an
  /// overlong sequence or an out-of-range id; never truncates.
  virtual Matrix encode(std::span<const TokenId> tokens) const = 0;
};

struct PooledVector {
  RowVector values;
  Pooling pooling = Pooling::mean;
};

/// mask[i] != 0 marks a real (non-padding) position.
PooledVector pool(const Matrix& states, std::span<const std::uint8_t> mask, Pooling pooling);
/// encode -> mean pool over all positions.
RowVector embed(const TextEncoder& encoder, std::string_view text);

struct EncoderConfig {
  std::size_t hash_buckets = 1024;
  std::size_t hidden_width = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_width = 64;
  std::size_t max_sequence_length = 128;
  Mode mode = Mode::bidirectional;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Named parameter matrices. std::map keeps iteration order (and hence
/// checkpoints and optimizer state) stable.
using ParameterSet = std::map<std::string, Matrix>;
using Gradients = std::map<std::string, Matrix>;

/// Pre-LayerNorm transformer with learned positions. Autoregressive mode
/// applies a causal mask and adds a language-model head tied to the token
/// embedding. Classification heads are attached by name.
class ReferenceEncoder : public TextEncoder {
 public:
  explicit ReferenceEncoder(EncoderConfig config);

  EncoderInfo info() const override;
  std::vector<TokenId> tokenize(std::string_view text) const override { return tokenizer_.encode(text); }
  Matrix encode(std::span<const TokenId> tokens) const override;

  const EncoderConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  Tokenizer& tokenizer() { return tokenizer_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  /// Hidden states on a tape (|tokens| x hidden_width).
  ad::Var forward(ad::Tape& tape, std::span<const TokenId> tokens) const;
  /// Next-token logits for every position (|tokens| x vocabulary_size).
  ad::Var lm_logits(ad::Tape& tape, ad::Var hidden) const;
  /// Linear head over a pooled 1 x hidden_width vector.
  ad::Var head_logits(ad::Tape& tape, const std::string& head, ad::Var pooled) const;

  void add_head(const std::string& name, std::size_t outputs, std::uint64_t seed);
  void remove_head(const std::string& name);
  bool has_head(const std::string& name) const;
  std::size_t head_outputs(const std::string& name) const;
  std::vector<std::string> head_names() const;

  /// Parameters excluding every classification head.
  ParameterSet backbone() const;

  /// Free-form facts persisted with checkpoints (e.g. a head's label names).
  const nlohmann::json& metadata() const { return metadata_; }
  nlohmann::json& metadata() { return metadata_; }

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  EncoderConfig config_;
  Tokenizer tokenizer_;
  ParameterSet params_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// Next-token distribution after prefix. Requires autoregressive mode.
RowVector lm_step(const ReferenceEncoder& model, std::span<const TokenId> prefix);

/// Loss of batch item i built on the given tape.
using ItemLoss = std::function<ad::Var(ad::Tape&, std::size_t)>;

struct GradientResult {
  double loss = 0.0;  ///< mean over the batch
  Gradients gradients;  ///< mean over the batch, keyed like parameters()
};

/// Mean loss and parameter gradients over batch items [0, batch_size).
/// Throws ModelError when any item loss is non-finite.
GradientResult gradient(const ReferenceEncoder& model, const ItemLoss& loss_fn, std::size_t batch_size);

/// Writes manifest.json + params.bin into a sibling temporary directory and
/// renames it onto dir, so a crash never leaves a partially written dir.
void save_checkpoint(const ReferenceEncoder& model, const std::filesystem::path& dir);
ReferenceEncoder load_checkpoint(const std::filesystem::path& dir);

/// Deterministic bag-of-tokens embedder: hidden state i is the one-hot vector
/// of token i's bucket, so mean pooling yields normalized token counts.
class BagOfTokensEmbedder : public TextEncoder {
 public:
  explicit BagOfTokensEmbedder(std::size_t buckets = 4096, std::size_t max_sequence_length = 512);
  EncoderInfo info() const override;
  std::vector<TokenId> tokenize(std::string_view text) const override;
  Matrix encode(std::span<const TokenId> tokens) const override;

 private:
  Tokenizer tokenizer_;
  std::size_t max_len_;
};

}  // namespace zstc
