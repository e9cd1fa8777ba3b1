#include "zstc/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "zstc/error.hpp"
#include "zstc/text.hpp"

namespace zstc {

bool is_correct(std::string_view prediction, const std::vector<std::string>& gold) {
  if (gold.empty()) throw DataError("is_correct: empty gold label set");
  const std::string p = text::canonical(prediction);
  for (const auto& g : gold)
    if (text::canonical(g) == p) return true;
  return false;
}

std::string map_generated_to_label(std::string_view generated, const std::vector<std::string>& candidates,
                                   const TextEncoder& embedder) {
  if (candidates.empty()) throw DataError("map_generated_to_label: empty candidate list");
  std::string g = text::canonical(generated);
  for (const auto& c : candidates)
    if (text::canonical(c) == g) return c;
  if (candidates.size() == 1) return candidates.front();
  if (g.empty()) g = std::string(kEmptyGeneration);
  const RowVector target = embed(embedder, g);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) scores.push_back(cosine_similarity(target, embed(embedder, c)));
  return candidates[argmax_first(scores)];
}

ModelClassifier::ModelClassifier(const ReferenceEncoder& model, Formalization formalization,
                                 const TextEncoder* fallback, GenerativeOptions options)
    : model_(model), formalization_(formalization), fallback_(fallback), options_(std::move(options)) {
  if (model.config().mode != required_mode(formalization))
    throw ModelError(std::string(to_string(formalization)) + " needs a " +
                     std::string(to_string(required_mode(formalization))) + " model");
  switch (formalization) {
    case Formalization::binary:
      if (!model.has_head(kBinaryHead)) throw ModelError("model has no '" + kBinaryHead + "' head");
      break;
    case Formalization::sequence_cls: {
      if (!model.has_head(kSequenceHead)) throw ModelError("model has no '" + kSequenceHead + "' head");
      const auto it = model.metadata().find("seq_cls_labels");
      if (it == model.metadata().end()) throw ModelError("model metadata lacks seq_cls_labels");
      seq_labels_ = it->get<std::vector<std::string>>();
      if (seq_labels_.size() != model.head_outputs(kSequenceHead))
        throw ModelError("seq_cls_labels does not match the head width");
      break;
    }
    case Formalization::generative:
      if (fallback_ == nullptr) throw ModelError("generative evaluation needs a fallback embedder");
      if (!options_.templates.contains(options_.template_id))
        throw ConfigError("unknown template '" + options_.template_id + "'");
      break;
    case Formalization::dual: break;
  }
}

std::string ModelClassifier::predict(std::string_view text, const std::vector<std::string>& candidates,
                                     std::optional<Aspect> aspect) const {
  if (candidates.empty()) throw DataError("predict: empty candidate list");
  switch (formalization_) {
    case Formalization::binary: return binary_predict(model_, text, candidates, aspect);
    case Formalization::dual: return dual_predict(model_, text, candidates, aspect);
    case Formalization::sequence_cls: return seq_labels_[seq_cls_predict(model_, text).index];
    case Formalization::generative: {
      const auto prompt = build_generative_prompt(model_.tokenizer(), text, candidates, aspect, options_.template_id,
                                                  options_.templates, model_.config().max_sequence_length);
      std::size_t budget = options_.max_new_tokens;
      if (budget == 0) {
        for (const auto& c : candidates) budget = std::max(budget, model_.tokenizer().encode(c).size());
        budget += 1;
      }
      return map_generated_to_label(generative_predict(model_, prompt, budget), candidates, *fallback_);
    }
  }
  throw ModelError("unknown formalization");
}

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json j{{"run_id", run_id},         {"dataset_id", dataset_id}, {"aspect", to_string(aspect)},
                   {"split", to_string(split)}, {"correct", correct},       {"n_examples", n_examples},
                   {"accuracy", accuracy}};
  return j;
}

MetricsRecord MetricsRecord::from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.run_id = j.value("run_id", "");
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.aspect = parse_aspect(j.at("aspect").get<std::string>());
  r.split = parse_split(j.at("split").get<std::string>());
  r.correct = j.at("correct").get<std::size_t>();
  r.n_examples = j.at("n_examples").get<std::size_t>();
  if (r.n_examples == 0 || r.correct > r.n_examples) throw DataError("metrics record '" + r.dataset_id + "' has bad counts");
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n_examples);
  return r;
}

MetricsRecord evaluate(const Classifier& classifier, const Dataset& dataset, AspectPolicy policy,
                       const std::string& run_id, bool keep_predictions) {
  MetricsRecord r;
  r.run_id = run_id;
  r.dataset_id = dataset.spec.dataset_id;
  r.aspect = dataset.spec.aspect;
  r.split = dataset.spec.split;
  const std::optional<Aspect> aspect =
      policy == AspectPolicy::known ? std::optional<Aspect>(dataset.spec.aspect) : std::nullopt;
  for (const auto& e : dataset.examples) {
    if (e.partition != Partition::test) continue;
    const std::string prediction = classifier.predict(e.text, dataset.spec.label_vocabulary, aspect);
    const bool ok = is_correct(prediction, e.gold_labels);
    ++r.n_examples;
    if (ok) ++r.correct;
    if (keep_predictions) r.predictions.push_back({text::hex64(text::fnv1a64(e.text)), e.gold_labels, prediction, ok});
  }
  if (r.n_examples == 0) throw DataError("dataset '" + r.dataset_id + "' has no test examples");
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n_examples);
  return r;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_predictions_csv(const std::filesystem::path& path, const MetricsRecord& record) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "text_hash,gold,prediction,correct\n";
  for (const auto& p : record.predictions)
    out << p.text_hash << ',' << csv_field(text::join(p.gold, "|")) << ',' << csv_field(p.prediction) << ','
        << (p.correct ? "true" : "false") << '\n';
}

Report aggregate(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw DataError("aggregate: no metrics records");
  Report rep;
  rep.run_id = records.front().run_id;
  rep.records = records;
  std::map<std::string, std::pair<double, std::size_t>> sums;
  double total = 0.0;
  for (const auto& r : records) {
    auto& s = sums[std::string(to_string(r.aspect))];
    s.first += r.accuracy;
    ++s.second;
    total += r.accuracy;
  }
  for (const auto& [aspect, s] : sums) rep.aspect_means[aspect] = s.first / static_cast<double>(s.second);
  rep.average = total / static_cast<double>(records.size());
  return rep;
}

nlohmann::json Report::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) recs.push_back(r.to_json());
  return {{"run_id", run_id}, {"records", recs}, {"aspect_means", aspect_means}, {"average", average}};
}

std::string Report::to_table() const {
  std::size_t width = 7;
  for (const auto& r : records) width = std::max(width, r.dataset_id.size());
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(static_cast<int>(width)) << "Dataset" << "  " << std::setw(9) << "Aspect" << "  "
     << std::setw(5) << "Split" << "  Accuracy\n";
  for (const auto& r : records)
    os << std::setw(static_cast<int>(width)) << r.dataset_id << "  " << std::setw(9) << to_string(r.aspect) << "  "
       << std::setw(5) << to_string(r.split) << "  " << std::right << std::setw(8) << 100.0 * r.accuracy << std::left
       << '\n';
  for (const auto& [aspect, mean] : aspect_means)
    os << std::setw(static_cast<int>(width)) << ("mean:" + aspect) << "  " << std::setw(9) << "" << "  "
       << std::setw(5) << "" << "  " << std::right << std::setw(8) << 100.0 * mean << std::left << '\n';
  os << std::setw(static_cast<int>(width)) << "Average" << "  " << std::setw(9) << "" << "  " << std::setw(5) << ""
     << "  " << std::right << std::setw(8) << 100.0 * average << '\n';
  return os.str();
}

}  // namespace zstc
