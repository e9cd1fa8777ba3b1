#include "zstc/tokenizer.hpp"

#include <cctype>

#include "zstc/error.hpp"
#include "zstc/text.hpp"

namespace zstc {

namespace {

struct Marker {
  std::string_view text;
  TokenId id;
};
constexpr Marker kMarkers[] = {
    {"[sep]", special::sep}, {"[start]", special::start}, {"[eos]", special::eos}, {"[pad]", special::pad}};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

Tokenizer::Tokenizer(std::size_t buckets) : buckets_(buckets) {
  if (buckets_ == 0) throw ConfigError("tokenizer needs at least one bucket");
}

std::vector<std::string> Tokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      ++i;
      continue;
    }
    if (c == '[') {
      bool matched = false;
      for (const auto& m : kMarkers) {
        if (text.substr(i, m.text.size()) == m.text) {
          out.emplace_back(m.text);
          i += m.text.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (is_word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      out.push_back(text::casefold(text.substr(i, j - i)));
      i = j;
      continue;
    }
    out.emplace_back(1, c);
    ++i;
  }
  return out;
}

TokenId Tokenizer::id_of(std::string_view piece) const {
  for (const auto& m : kMarkers)
    if (piece == m.text) return m.id;
  return special::kFirstWord + static_cast<TokenId>(text::fnv1a64(piece) % buckets_);
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& p : pieces(text)) ids.push_back(id_of(p));
  return ids;
}

TokenId Tokenizer::aspect_token(Aspect a) { return special::kAspectBase + static_cast<TokenId>(index_of(a)); }

void Tokenizer::observe(std::string_view text) {
  for (const auto& p : pieces(text)) {
    const TokenId id = id_of(p);
    if (id < special::kFirstWord) continue;
    auto [it, inserted] = surfaces_.emplace(id, p);
    if (!inserted && p < it->second) it->second = p;
  }
}

SurfaceTable Tokenizer::surfaces_of(std::string_view text) const {
  SurfaceTable out;
  for (const auto& p : pieces(text)) {
    const TokenId id = id_of(p);
    if (id < special::kFirstWord) continue;
    auto [it, inserted] = out.emplace(id, p);
    if (!inserted && p < it->second) it->second = p;
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids, const SurfaceTable* context) const {
  std::vector<std::string> words;
  for (TokenId id : ids) {
    if (id < special::kFirstWord) continue;
    if (context != nullptr) {
      if (auto it = context->find(id); it != context->end()) {
        words.push_back(it->second);
        continue;
      }
    }
    auto it = surfaces_.find(id);
    words.push_back(it != surfaces_.end() ? it->second : "<unk>");
  }
  return text::join(words, " ");
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json surf = nlohmann::json::object();
  for (const auto& [id, s] : surfaces_) surf[std::to_string(id)] = s;
  nlohmann::json aspects = nlohmann::json::object();
  for (Aspect a : kAllAspects) aspects[std::string(to_string(a))] = aspect_token(a);
  return {{"kind", "hash-bucket"},
          {"buckets", buckets_},
          {"special", {{"pad", special::pad}, {"start", special::start}, {"sep", special::sep},
                       {"eos", special::eos}, {"unk", special::unk}, {"first_word", special::kFirstWord}}},
          {"aspects", aspects},
          {"surfaces", surf}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string()) != "hash-bucket") throw ModelError("unsupported tokenizer kind");
  if (j.at("special").at("first_word").get<TokenId>() != special::kFirstWord)
    throw ModelError("checkpoint special-token layout differs from this build");
  Tokenizer t(j.at("buckets").get<std::size_t>());
  for (const auto& [k, v] : j.at("surfaces").items()) t.surfaces_[static_cast<TokenId>(std::stoul(k))] = v.get<std::string>();
  return t;
}

}  // namespace zstc
