#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zstc/aspect.hpp"

namespace zstc {

using TokenId = std::uint32_t;

/// Reserved ids. Aspect tokens occupy [kAspectBase, kAspectBase + kMaxAspects).
namespace special {
inline constexpr TokenId pad = 0;
inline constexpr TokenId start = 1;
inline constexpr TokenId sep = 2;
inline constexpr TokenId eos = 3;
inline constexpr TokenId unk = 4;
inline constexpr TokenId kAspectBase = 8;
inline constexpr TokenId kFirstWord = kAspectBase + static_cast<TokenId>(kMaxAspects);
}  // namespace special

using SurfaceTable = std::map<TokenId, std::string>;

/// Whitespace + punctuation tokenizer over a hash-bucketed word vocabulary.
///
/// Alphanumeric runs are lower-cased and hashed into `buckets` ids; every other
/// printable character is its own piece. Bracketed markers ("[sep]", "[start]",
/// "[eos]", "[pad]") map to the reserved ids. Decoding uses a surface table
/// that records, per bucket, the lexicographically smallest word observed.
class Tokenizer {
 public:
  explicit Tokenizer(std::size_t buckets = 1024);

  std::size_t buckets() const { return buckets_; }
  std::size_t vocabulary_size() const { return special::kFirstWord + buckets_; }

  std::vector<std::string> pieces(std::string_view text) const;
  TokenId id_of(std::string_view piece) const;
  std::vector<TokenId> encode(std::string_view text) const;
  static TokenId aspect_token(Aspect a);

  /// Registers surface forms of every word piece in text.
  void observe(std::string_view text);
  const SurfaceTable& surfaces() const { return surfaces_; }
  /// Surface table for the pieces of text only (no shared state).
  SurfaceTable surfaces_of(std::string_view text) const;

  /// Joins surface forms with single spaces; context entries win over the
  /// stored table. Reserved ids are skipped; unknown buckets render "<unk>".
  std::string decode(std::span<const TokenId> ids, const SurfaceTable* context = nullptr) const;

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

 private:
  std::size_t buckets_;
  SurfaceTable surfaces_;
};

}  // namespace zstc
