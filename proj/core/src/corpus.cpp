#include "zstc/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "zstc/error.hpp"
#include "zstc/random.hpp"
#include "zstc/text.hpp"

namespace zstc {

using nlohmann::json;

void DatasetSpec::validate() const {
  if (label_vocabulary.empty()) throw DataError("dataset '" + dataset_id + "': empty label vocabulary");
  std::set<std::string> seen;
  for (const auto& label : label_vocabulary) {
    if (!text::has_alpha(label))
      throw DataError("dataset '" + dataset_id + "': non-textual label '" + label + "'");
    if (!seen.insert(text::casefold(text::trim(label))).second)
      throw DataError("dataset '" + dataset_id + "': duplicate label '" + label + "'");
  }
}

bool DatasetSpec::has_label(const std::string& label) const {
  return std::find(label_vocabulary.begin(), label_vocabulary.end(), label) != label_vocabulary.end();
}

std::vector<Example> Dataset::partition(Partition p) const {
  std::vector<Example> out;
  for (const auto& e : examples)
    if (e.partition == p) out.push_back(e);
  return out;
}

PartitionCounts Dataset::counts() const {
  PartitionCounts c;
  for (const auto& e : examples) (e.partition == Partition::train ? c.train : c.test)++;
  return c;
}

std::size_t AspectCorpus::unique_text_count() const {
  std::unordered_set<std::string> texts;
  for (const auto& d : datasets)
    for (const auto& e : d.examples)
      if (e.partition == Partition::train) texts.insert(e.text);
  return texts.size();
}

// ---------------------------------------------------------------- ingestion

Example parse_record(const json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  for (const char* key : {"text", "labels", "dataset", "aspect", "split", "partition"})
    if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  if (!j["labels"].is_array()) throw DataError("'labels' must be an array");
  Example e;
  e.text = j["text"].get<std::string>();
  for (const auto& l : j["labels"]) e.gold_labels.push_back(l.get<std::string>());
  e.dataset_id = j["dataset"].get<std::string>();
  e.aspect = parse_aspect(j["aspect"].get<std::string>());
  e.split = parse_split(j["split"].get<std::string>());
  e.partition = parse_partition(j["partition"].get<std::string>());
  return e;
}

json to_json(const Example& e) {
  return json{{"text", e.text},
              {"labels", e.gold_labels},
              {"dataset", e.dataset_id},
              {"aspect", to_string(e.aspect)},
              {"split", to_string(e.split)},
              {"partition", to_string(e.partition)}};
}

namespace {

template <typename F>
void for_each_record(const std::filesystem::path& path, F&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      fn(parse_record(json::parse(line)));
    } catch (const json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed record: " + ex.what());
    } catch (const DataError& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
}

}  // namespace

std::vector<Example> load_dataset(const std::filesystem::path& path, const DatasetSpec& spec) {
  spec.validate();
  std::vector<Example> out;
  for_each_record(path, [&](Example e) {
    if (text::trim(e.text).empty()) throw DataError("empty text");
    if (e.gold_labels.empty()) throw DataError("empty label set");
    if (e.dataset_id != spec.dataset_id)
      throw DataError("record belongs to dataset '" + e.dataset_id + "', expected '" + spec.dataset_id + "'");
    if (e.aspect != spec.aspect || e.split != spec.split)
      throw DataError("aspect/split disagree with the dataset spec");
    for (const auto& l : e.gold_labels) {
      if (!text::has_alpha(l)) throw DataError("non-textual label '" + l + "'");
      if (!spec.has_label(l)) throw DataError("label '" + l + "' not in vocabulary");
    }
    out.push_back(std::move(e));
  });
  if (spec.counts) {
    PartitionCounts got;
    for (const auto& e : out) (e.partition == Partition::train ? got.train : got.test)++;
    if (got != *spec.counts) {
      std::ostringstream msg;
      msg << path.string() << ": count mismatch for '" << spec.dataset_id << "': expected " << spec.counts->train
          << "/" << spec.counts->test << " train/test, found " << got.train << "/" << got.test;
      throw DataError(msg.str());
    }
  }
  return out;
}

DatasetSpec scan_dataset(const std::filesystem::path& path) {
  DatasetSpec spec;
  bool first = true;
  for_each_record(path, [&](const Example& e) {
    if (first) {
      spec.dataset_id = e.dataset_id;
      spec.aspect = e.aspect;
      spec.split = e.split;
      first = false;
    } else if (e.dataset_id != spec.dataset_id) {
      throw DataError("file mixes datasets '" + spec.dataset_id + "' and '" + e.dataset_id + "'");
    }
    for (const auto& l : e.gold_labels)
      if (!spec.has_label(l)) spec.label_vocabulary.push_back(l);
  });
  if (first) throw DataError(path.string() + ": no records");
  return spec;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

json to_json(const DatasetSpec& s) {
  json j{{"dataset", s.dataset_id},
         {"aspect", to_string(s.aspect)},
         {"split", to_string(s.split)},
         {"labels", s.label_vocabulary}};
  if (s.counts) j["counts"] = {{"train", s.counts->train}, {"test", s.counts->test}};
  return j;
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec s;
  s.dataset_id = j.at("dataset").get<std::string>();
  s.aspect = parse_aspect(j.at("aspect").get<std::string>());
  s.split = parse_split(j.at("split").get<std::string>());
  s.label_vocabulary = j.at("labels").get<std::vector<std::string>>();
  if (j.contains("counts"))
    s.counts = PartitionCounts{j["counts"].at("train").get<std::size_t>(), j["counts"].at("test").get<std::size_t>()};
  return s;
}

// ------------------------------------------------------------ standardizing

Dataset standardize_labels(const Dataset& dataset, const LabelMapping& mapping) {
  std::map<std::string, std::vector<std::string>> sources_of;
  for (const auto& label : dataset.spec.label_vocabulary) {
    auto it = mapping.rewrite.find(label);
    if (it == mapping.rewrite.end())
      throw DataError("dataset '" + dataset.spec.dataset_id + "': unmapped label '" + label + "'");
    if (!text::has_alpha(it->second))
      throw DataError("dataset '" + dataset.spec.dataset_id + "': non-textual target '" + it->second + "'");
    sources_of[it->second].push_back(label);
  }
  for (const auto& [target, sources] : sources_of) {
    if (sources.size() > 1 && !mapping.merge_targets.contains(target))
      throw DataError("dataset '" + dataset.spec.dataset_id + "': labels '" + sources[0] + "' and '" + sources[1] +
                      "' collide on '" + target + "' without a merge flag");
  }

  Dataset out;
  out.spec = dataset.spec;
  out.spec.label_vocabulary.clear();
  for (const auto& label : dataset.spec.label_vocabulary) {
    const auto& target = mapping.rewrite.at(label);
    if (!out.spec.has_label(target)) out.spec.label_vocabulary.push_back(target);
  }
  out.examples.reserve(dataset.examples.size());
  for (auto e : dataset.examples) {
    std::vector<std::string> rewritten;
    for (const auto& l : e.gold_labels) {
      auto it = mapping.rewrite.find(l);
      if (it == mapping.rewrite.end())
        throw DataError("dataset '" + dataset.spec.dataset_id + "': unmapped label '" + l + "'");
      if (std::find(rewritten.begin(), rewritten.end(), it->second) == rewritten.end())
        rewritten.push_back(it->second);
    }
    e.gold_labels = std::move(rewritten);
    out.examples.push_back(std::move(e));
  }
  out.spec.validate();
  return out;
}

// ------------------------------------------------------------ normalization

namespace {

struct TextUnit {
  std::string text;
  std::string stratum;
};

/// Distinct train texts of a dataset in first-appearance order.
std::vector<TextUnit> train_units(const Dataset& d) {
  std::vector<TextUnit> units;
  std::unordered_set<std::string> seen;
  for (const auto& e : d.examples) {
    if (e.partition != Partition::train) continue;
    if (seen.insert(e.text).second) units.push_back({e.text, e.gold_labels.front()});
  }
  return units;
}

/// Splits total across weights proportionally; leftover units go to the
/// largest fractional parts, lower index first on ties.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<std::size_t>& weights) {
  const double sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::size_t{0}));
  std::vector<std::size_t> alloc(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    alloc[i] = static_cast<std::size_t>(exact);
    used += alloc[i];
    rema.emplace_back(exact - static_cast<double>(alloc[i]), i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) alloc[rema[k % rema.size()].second]++;
  return alloc;
}

std::uint64_t mix(std::uint64_t seed, const std::string& a, const std::string& b = {}) {
  return seed ^ text::fnv1a64(a) ^ (text::fnv1a64(b) * 0x9e3779b97f4a7c15ULL);
}

/// Picks quota texts from one dataset, stratified by first gold label.
std::vector<std::string> stratified_pick(const Dataset& d, const std::vector<TextUnit>& units, std::size_t quota,
                                         std::uint64_t seed) {
  std::vector<std::string> classes;
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& label : d.spec.label_vocabulary) {
    by_class[label];
    classes.push_back(label);
  }
  for (const auto& u : units) by_class[u.stratum].push_back(u.text);
  std::vector<std::string> present;
  std::vector<std::size_t> sizes;
  for (const auto& c : classes)
    if (!by_class[c].empty()) {
      present.push_back(c);
      sizes.push_back(by_class[c].size());
    }
  if (quota < present.size()) {
    // The smallest class is the first to vanish under proportional rounding.
    const auto smallest = std::min_element(sizes.begin(), sizes.end()) - sizes.begin();
    throw DataError("dataset '" + d.spec.dataset_id + "': class '" + present[static_cast<std::size_t>(smallest)] +
                    "' would round to zero examples (quota " + std::to_string(quota) + " < " +
                    std::to_string(present.size()) + " classes)");
  }
  auto alloc = largest_remainder(quota, sizes);
  for (std::size_t i = 0; i < alloc.size(); ++i) {
    if (alloc[i] > 0) continue;
    spdlog::warn("dataset '{}': class '{}' rounds to zero; keeping one example", d.spec.dataset_id, present[i]);
    auto donor = std::max_element(alloc.begin(), alloc.end()) - alloc.begin();
    alloc[static_cast<std::size_t>(donor)]--;
    alloc[i] = 1;
  }
  std::vector<std::string> picked;
  for (std::size_t i = 0; i < present.size(); ++i) {
    auto pool = by_class[present[i]];
    seeded_shuffle(pool, mix(seed, d.spec.dataset_id, present[i]));
    picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(alloc[i]));
  }
  return picked;
}

AspectCorpus subsample(const AspectCorpus& corpus, std::size_t target, std::uint64_t seed) {
  std::vector<std::vector<TextUnit>> units;
  std::vector<std::size_t> sizes;
  for (const auto& d : corpus.datasets) {
    units.push_back(train_units(d));
    sizes.push_back(units.back().size());
  }
  const auto quotas = largest_remainder(target, sizes);

  std::vector<std::unordered_set<std::string>> keep(corpus.datasets.size());
  std::unordered_set<std::string> kept_union;
  for (std::size_t i = 0; i < corpus.datasets.size(); ++i) {
    for (auto& t : stratified_pick(corpus.datasets[i], units[i], quotas[i], seed)) {
      kept_union.insert(t);
      keep[i].insert(std::move(t));
    }
  }
  // Texts shared between datasets count once; top up round-robin until the
  // aspect reaches its target.
  if (kept_union.size() < target) {
    std::vector<std::vector<std::string>> reserve(corpus.datasets.size());
    for (std::size_t i = 0; i < corpus.datasets.size(); ++i) {
      for (const auto& u : units[i])
        if (!keep[i].contains(u.text)) reserve[i].push_back(u.text);
      seeded_shuffle(reserve[i], mix(seed, corpus.datasets[i].spec.dataset_id, "#topup"));
    }
    std::vector<std::size_t> cursor(reserve.size(), 0);
    bool progressed = true;
    while (kept_union.size() < target && progressed) {
      progressed = false;
      for (std::size_t i = 0; i < reserve.size() && kept_union.size() < target; ++i) {
        while (cursor[i] < reserve[i].size()) {
          const auto& t = reserve[i][cursor[i]++];
          if (kept_union.insert(t).second) {
            keep[i].insert(t);
            progressed = true;
            break;
          }
        }
      }
    }
  }

  AspectCorpus out;
  out.aspect = corpus.aspect;
  for (std::size_t i = 0; i < corpus.datasets.size(); ++i) {
    Dataset d;
    d.spec = corpus.datasets[i].spec;
    for (const auto& e : corpus.datasets[i].examples)
      if (e.partition == Partition::test || keep[i].contains(e.text)) d.examples.push_back(e);
    if (d.spec.counts) d.spec.counts = d.counts();
    out.datasets.push_back(std::move(d));
  }
  return out;
}

}  // namespace

std::vector<AspectCorpus> aspect_normalize(const std::vector<AspectCorpus>& corpora, std::uint64_t seed) {
  if (corpora.size() < 2) throw DataError("aspect_normalize needs at least two corpora");
  std::size_t target = static_cast<std::size_t>(-1);
  for (const auto& c : corpora) {
    for (const auto& d : c.datasets)
      if (d.spec.split != Split::in_domain)
        throw DataError("aspect_normalize: dataset '" + d.spec.dataset_id + "' is not in-domain");
    target = std::min(target, c.unique_text_count());
  }
  std::vector<AspectCorpus> out;
  out.reserve(corpora.size());
  for (const auto& c : corpora) out.push_back(c.unique_text_count() == target ? c : subsample(c, target, seed));
  return out;
}

std::map<std::string, double> label_proportions(const Dataset& dataset) {
  const auto units = train_units(dataset);
  std::map<std::string, double> out;
  for (const auto& label : dataset.spec.label_vocabulary) out[label] = 0.0;
  for (const auto& u : units) out[u.stratum] += 1.0;
  if (!units.empty())
    for (auto& [k, v] : out) v /= static_cast<double>(units.size());
  return out;
}

std::string canonical_serialization(std::vector<Example> examples) {
  std::stable_sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
    const auto& la = a.gold_labels.empty() ? std::string() : a.gold_labels.front();
    const auto& lb = b.gold_labels.empty() ? std::string() : b.gold_labels.front();
    return std::tie(a.dataset_id, a.text, la) < std::tie(b.dataset_id, b.text, lb);
  });
  std::string out;
  for (const auto& e : examples) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------------ overlap

double label_overlap(const DatasetSpec& in_spec, const DatasetSpec& out_spec) {
  if (in_spec.label_vocabulary.empty() || out_spec.label_vocabulary.empty())
    throw DataError("label_overlap: empty vocabulary");
  const auto in_tokens = text::token_set(in_spec.label_vocabulary);
  const auto out_tokens = text::token_set(out_spec.label_vocabulary);
  if (out_tokens.empty()) throw DataError("label_overlap: '" + out_spec.dataset_id + "' has no label tokens");
  std::size_t shared = 0;
  for (const auto& t : out_tokens) shared += in_tokens.contains(t) ? 1 : 0;
  return 100.0 * static_cast<double>(shared) / static_cast<double>(out_tokens.size());
}

OverlapMatrix overlap_matrix(const std::vector<DatasetSpec>& in_specs, const std::vector<DatasetSpec>& out_specs) {
  if (in_specs.empty() || out_specs.empty()) throw DataError("overlap_matrix: empty spec list");
  OverlapMatrix m;
  for (const auto& s : in_specs) m.in_ids.push_back(s.dataset_id);
  for (const auto& s : out_specs) m.out_ids.push_back(s.dataset_id);
  for (const auto& in : in_specs) {
    auto& row = m.scores.emplace_back();
    for (const auto& out : out_specs) row.push_back(label_overlap(in, out));
  }
  return m;
}

json OverlapMatrix::to_json() const {
  return json{{"in_domain", in_ids}, {"out_of_domain", out_ids}, {"scores", scores}};
}

std::string OverlapMatrix::to_table() const {
  std::size_t w0 = 9;
  for (const auto& id : in_ids) w0 = std::max(w0, id.size());
  std::vector<std::size_t> widths;
  for (const auto& id : out_ids) widths.push_back(std::max<std::size_t>(id.size(), 6));
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w0)) << "in \\ out";
  for (std::size_t j = 0; j < out_ids.size(); ++j) os << "  " << std::right << std::setw(static_cast<int>(widths[j])) << out_ids[j];
  os << '\n';
  for (std::size_t i = 0; i < in_ids.size(); ++i) {
    os << std::left << std::setw(static_cast<int>(w0)) << in_ids[i];
    for (std::size_t j = 0; j < out_ids.size(); ++j)
      os << "  " << std::right << std::setw(static_cast<int>(widths[j])) << std::fixed << std::setprecision(1)
         << scores[i][j];
    os << '\n';
  }
  return os.str();
}

DatasetSpec merge_vocabularies(const std::string& id, const std::vector<DatasetSpec>& specs) {
  DatasetSpec out;
  out.dataset_id = id;
  if (!specs.empty()) {
    out.aspect = specs.front().aspect;
    out.split = specs.front().split;
  }
  for (const auto& s : specs)
    for (const auto& l : s.label_vocabulary)
      if (!out.has_label(l)) out.label_vocabulary.push_back(l);
  return out;
}

}  // namespace zstc
