#include "zstc/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <unordered_set>

#include "zstc/error.hpp"
#include "zstc/formalizations.hpp"
#include "zstc/random.hpp"
#include "zstc/text.hpp"
#include "zstc/tokenizer.hpp"

namespace zstc::fixtures {

std::string_view to_string(OverlapLevel l) {
  switch (l) {
    case OverlapLevel::low: return "low";
    case OverlapLevel::medium: return "medium";
    case OverlapLevel::high: return "high";
  }
  return "unknown";
}

OverlapLevel parse_overlap_level(std::string_view s) {
  if (s == "low") return OverlapLevel::low;
  if (s == "medium") return OverlapLevel::medium;
  if (s == "high") return OverlapLevel::high;
  throw ConfigError("unknown overlap level '" + std::string(s) + "'");
}

double target_percent(OverlapLevel l) {
  switch (l) {
    case OverlapLevel::low: return 20.0;
    case OverlapLevel::medium: return 50.0;
    case OverlapLevel::high: return 80.0;
  }
  return 0.0;
}

void SyntheticSpec::validate() const {
  if (aspects.size() < 3) throw ConfigError("synthetic spec needs at least 3 aspects");
  if (std::set<Aspect>(aspects.begin(), aspects.end()).size() != aspects.size())
    throw ConfigError("synthetic spec lists an aspect twice");
  if (in_datasets_per_aspect == 0) throw ConfigError("need at least one in-domain dataset per aspect");
  if (labels_per_dataset < 2) throw ConfigError("need at least two labels per dataset");
  if (train_texts_per_label == 0 || test_texts_per_label == 0) throw ConfigError("texts per label must be positive");
  if (!aspect_train_scale.empty() && aspect_train_scale.size() != aspects.size())
    throw ConfigError("aspect_train_scale must have one entry per aspect");
  for (double s : aspect_train_scale)
    if (!(s > 0.0)) throw ConfigError("aspect_train_scale entries must be positive");
  if (keywords_per_label == 0 || markers_per_aspect == 0 || noise_words == 0)
    throw ConfigError("keyword, marker and noise pools must be non-empty");
  if (out_datasets_per_aspect > 0 && out_overlap.empty()) throw ConfigError("out_overlap is empty");
  if (multi_label_fraction < 0.0 || multi_label_fraction > 1.0)
    throw ConfigError("multi_label_fraction must lie in [0, 1]");
}

nlohmann::json SyntheticSpec::to_json() const {
  std::vector<std::string> asp;
  for (Aspect a : aspects) asp.emplace_back(zstc::to_string(a));
  std::vector<std::string> ov;
  for (auto l : out_overlap) ov.emplace_back(to_string(l));
  return {{"aspects", asp},
          {"in_datasets_per_aspect", in_datasets_per_aspect},
          {"out_datasets_per_aspect", out_datasets_per_aspect},
          {"labels_per_dataset", labels_per_dataset},
          {"train_texts_per_label", train_texts_per_label},
          {"test_texts_per_label", test_texts_per_label},
          {"aspect_train_scale", aspect_train_scale},
          {"keywords_per_label", keywords_per_label},
          {"markers_per_aspect", markers_per_aspect},
          {"noise_words", noise_words},
          {"out_overlap", ov},
          {"multi_label_fraction", multi_label_fraction},
          {"distinct_buckets", distinct_buckets}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  const nlohmann::json known = s.to_json();
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("synthetic spec: unknown key '" + key + "'");
  try {
    if (j.contains("aspects")) {
      s.aspects.clear();
      for (const auto& a : j["aspects"]) s.aspects.push_back(parse_aspect(a.get<std::string>()));
    }
    s.in_datasets_per_aspect = j.value("in_datasets_per_aspect", s.in_datasets_per_aspect);
    s.out_datasets_per_aspect = j.value("out_datasets_per_aspect", s.out_datasets_per_aspect);
    s.labels_per_dataset = j.value("labels_per_dataset", s.labels_per_dataset);
    s.train_texts_per_label = j.value("train_texts_per_label", s.train_texts_per_label);
    s.test_texts_per_label = j.value("test_texts_per_label", s.test_texts_per_label);
    s.aspect_train_scale = j.value("aspect_train_scale", s.aspect_train_scale);
    s.keywords_per_label = j.value("keywords_per_label", s.keywords_per_label);
    s.markers_per_aspect = j.value("markers_per_aspect", s.markers_per_aspect);
    s.noise_words = j.value("noise_words", s.noise_words);
    if (j.contains("out_overlap")) {
      s.out_overlap.clear();
      for (const auto& l : j["out_overlap"]) s.out_overlap.push_back(parse_overlap_level(l.get<std::string>()));
    }
    s.multi_label_fraction = j.value("multi_label_fraction", s.multi_label_fraction);
    s.distinct_buckets = j.value("distinct_buckets", s.distinct_buckets);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

/// Pronounceable pseudo-words, unique across the benchmark.
class WordSource {
 public:
  WordSource(std::uint64_t seed, std::size_t buckets) : rng_(seed) {
    if (buckets > 0) tok_.emplace(buckets);
    std::vector<std::string> reserved;
    const auto pack = TemplatePack::defaults();
    for (const char* id : {"default", "aspect"}) reserved.push_back(pack.get(id));
    reserved.emplace_back("category sentiment intent topic unknown");
    for (const auto& r : reserved)
      for (const auto& w : text::alnum_tokens(r)) claim(w);
  }

  std::string next() {
    static constexpr std::string_view kOnset = "bdfgklmnprstvz";
    static constexpr std::string_view kVowel = "aeiou";
    for (std::size_t attempt = 0; attempt < 100000; ++attempt) {
      const std::size_t syllables = 2 + rng_.index(2);
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w += kOnset[rng_.index(kOnset.size())];
        w += kVowel[rng_.index(kVowel.size())];
      }
      if (claim(w)) return w;
    }
    throw ConfigError("word space exhausted; raise distinct_buckets or shrink the spec");
  }

  std::vector<std::string> take(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  bool claim(const std::string& w) {
    if (!words_.insert(w).second) return false;
    if (tok_) {
      const TokenId id = tok_->id_of(w);
      if (!ids_.insert(id).second) return false;
    }
    return true;
  }

  Rng rng_;
  std::optional<Tokenizer> tok_;
  std::unordered_set<std::string> words_;
  std::set<TokenId> ids_;
};

struct LabelDef {
  std::string name;
  std::vector<std::string> words;
  std::vector<std::string> keywords;
};

std::vector<std::size_t> word_counts(std::size_t labels, Rng& rng) {
  std::vector<std::size_t> counts(labels);
  for (auto& c : counts) c = 1 + rng.index(3);
  // keep the per-dataset token total large enough for 10-point overlap control
  std::size_t i = 0;
  while (std::accumulate(counts.begin(), counts.end(), std::size_t{0}) < 5) {
    if (counts[i % labels] < 3) ++counts[i % labels];
    ++i;
  }
  return counts;
}

std::vector<std::vector<std::string>> split_words(const std::vector<std::string>& tokens,
                                                  const std::vector<std::size_t>& counts) {
  std::vector<std::vector<std::string>> out;
  std::size_t at = 0;
  for (std::size_t c : counts) {
    out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(at), tokens.begin() + static_cast<std::ptrdiff_t>(at + c));
    at += c;
  }
  return out;
}

std::string text_for(const LabelDef& label, const LabelDef* second, const std::vector<std::string>& markers,
                     const std::vector<std::string>& noise, Rng& rng) {
  std::vector<std::string> parts;
  auto add_label = [&](const LabelDef& l) {
    std::vector<std::string> picked;
    for (const auto& w : l.words)
      if (rng.uniform() < 0.7) picked.push_back(w);
    if (picked.empty()) picked.push_back(l.words[rng.index(l.words.size())]);
    parts.insert(parts.end(), picked.begin(), picked.end());
    const std::size_t kw = 1 + rng.index(2);
    for (std::size_t i = 0; i < kw; ++i) parts.push_back(l.keywords[rng.index(l.keywords.size())]);
  };
  add_label(label);
  if (second != nullptr) add_label(*second);
  const std::size_t mk = 2;
  for (std::size_t i = 0; i < mk; ++i) parts.push_back(markers[rng.index(markers.size())]);
  const std::size_t nz = 2 + rng.index(2);
  for (std::size_t i = 0; i < nz; ++i) parts.push_back(noise[rng.index(noise.size())]);
  seeded_shuffle(parts, rng);
  return text::join(parts, " ");
}

Dataset build_dataset(const std::string& id, Aspect aspect, Split split, const std::vector<LabelDef>& labels,
                      std::size_t train_per_label, std::size_t test_per_label, double multi_label_fraction,
                      const std::vector<std::string>& markers, const std::vector<std::string>& noise, Rng& rng) {
  Dataset d;
  d.spec.dataset_id = id;
  d.spec.aspect = aspect;
  d.spec.split = split;
  for (const auto& l : labels) d.spec.label_vocabulary.push_back(l.name);
  auto emit = [&](Partition part, std::size_t per_label) {
    for (std::size_t li = 0; li < labels.size(); ++li) {
      for (std::size_t t = 0; t < per_label; ++t) {
        const LabelDef* second = nullptr;
        if (part == Partition::test && rng.uniform() < multi_label_fraction) {
          std::size_t other = rng.index(labels.size() - 1);
          if (other >= li) ++other;
          second = &labels[other];
        }
        Example e;
        e.text = text_for(labels[li], second, markers, noise, rng);
        e.gold_labels = {labels[li].name};
        if (second != nullptr) e.gold_labels.push_back(second->name);
        e.dataset_id = id;
        e.aspect = aspect;
        e.split = split;
        e.partition = part;
        d.examples.push_back(std::move(e));
      }
    }
  };
  if (split == Split::in_domain) emit(Partition::train, train_per_label);
  emit(Partition::test, test_per_label);
  d.spec.counts = d.counts();
  return d;
}

}  // namespace

std::vector<GeneratedDataset> generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  WordSource words(seed ^ 0x5eed5eed5eedULL, spec.distinct_buckets);
  const std::vector<std::string> noise = words.take(spec.noise_words);

  std::vector<GeneratedDataset> out;
  std::set<std::string> in_label_names;
  std::vector<std::vector<std::string>> in_tokens_by_aspect(spec.aspects.size());
  std::vector<std::vector<std::string>> markers(spec.aspects.size());
  for (std::size_t a = 0; a < spec.aspects.size(); ++a) markers[a] = words.take(spec.markers_per_aspect);

  auto make_labels = [&](const std::vector<std::vector<std::string>>& label_words) {
    std::vector<LabelDef> labels;
    for (const auto& w : label_words) labels.push_back({text::join(w, " "), w, words.take(spec.keywords_per_label)});
    return labels;
  };

  for (std::size_t a = 0; a < spec.aspects.size(); ++a) {
    const Aspect aspect = spec.aspects[a];
    const double scale = spec.aspect_train_scale.empty() ? 1.0 : spec.aspect_train_scale[a];
    const auto train_n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(scale * static_cast<double>(spec.train_texts_per_label))));
    for (std::size_t k = 0; k < spec.in_datasets_per_aspect; ++k) {
      const auto counts = word_counts(spec.labels_per_dataset, rng);
      const auto tokens = words.take(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
      in_tokens_by_aspect[a].insert(in_tokens_by_aspect[a].end(), tokens.begin(), tokens.end());
      const auto labels = make_labels(split_words(tokens, counts));
      for (const auto& l : labels) in_label_names.insert(l.name);
      const std::string id = std::string(zstc::to_string(aspect)) + "_in" + std::to_string(k + 1);
      out.push_back({build_dataset(id, aspect, Split::in_domain, labels, train_n, spec.test_texts_per_label, 0.0,
                                   markers[a], noise, rng),
                     std::nullopt});
    }
  }

  std::size_t out_index = 0;
  for (std::size_t a = 0; a < spec.aspects.size(); ++a) {
    const Aspect aspect = spec.aspects[a];
    for (std::size_t k = 0; k < spec.out_datasets_per_aspect; ++k, ++out_index) {
      const OverlapLevel level = spec.out_overlap[out_index % spec.out_overlap.size()];
      const auto counts = word_counts(spec.labels_per_dataset, rng);
      const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
      const auto reuse =
          static_cast<std::size_t>(std::llround(target_percent(level) * static_cast<double>(total) / 100.0));
      const double realized = 100.0 * static_cast<double>(reuse) / static_cast<double>(total);
      if (reuse > in_tokens_by_aspect[a].size() || std::abs(realized - target_percent(level)) > 10.0)
        throw ConfigError("overlap target " + std::string(to_string(level)) + " is infeasible for " +
                          std::to_string(total) + " label tokens");
      const auto fresh = words.take(total - reuse);
      std::vector<std::vector<std::string>> label_words;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw ConfigError("cannot form out-of-domain labels distinct from in-domain ones");
        auto pool = in_tokens_by_aspect[a];
        seeded_shuffle(pool, rng);
        std::vector<std::string> tokens(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(reuse));
        tokens.insert(tokens.end(), fresh.begin(), fresh.end());
        seeded_shuffle(tokens, rng);
        label_words = split_words(tokens, counts);
        bool clash = false;
        for (const auto& w : label_words) clash = clash || in_label_names.contains(text::join(w, " "));
        if (!clash) break;
      }
      const auto labels = make_labels(label_words);
      const std::string id = std::string(zstc::to_string(aspect)) + "_out" + std::to_string(k + 1);
      out.push_back({build_dataset(id, aspect, Split::out_of_domain, labels, 0, spec.test_texts_per_label,
                                   spec.multi_label_fraction, markers[a], noise, rng),
                     level});
    }
  }
  return out;
}

void write_benchmark(const std::filesystem::path& dir, const std::vector<GeneratedDataset>& datasets) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& g : datasets) {
    const std::string file = g.dataset.spec.dataset_id + ".jsonl";
    write_jsonl(dir / file, g.dataset.examples);
    nlohmann::json entry = zstc::to_json(g.dataset.spec);
    entry["path"] = file;
    if (g.overlap) entry["overlap_target"] = to_string(*g.overlap);
    manifest.push_back(std::move(entry));
  }
  std::ofstream(dir / "datasets.json") << manifest.dump(2) << '\n';
}

}  // namespace zstc::fixtures
