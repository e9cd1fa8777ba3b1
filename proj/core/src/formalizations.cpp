#include "zstc/formalizations.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "zstc/error.hpp"
#include "zstc/random.hpp"
#include "zstc/text.hpp"

namespace zstc {

std::string_view to_string(Formalization f) {
  switch (f) {
    case Formalization::binary: return "binary";
    case Formalization::dual: return "dual";
    case Formalization::generative: return "generative";
    case Formalization::sequence_cls: return "sequence_cls";
  }
  return "unknown";
}

Formalization parse_formalization(std::string_view s) {
  if (s == "binary") return Formalization::binary;
  if (s == "dual") return Formalization::dual;
  if (s == "generative") return Formalization::generative;
  if (s == "sequence_cls") return Formalization::sequence_cls;
  throw ConfigError("unknown formalization '" + std::string(s) + "'");
}

Mode required_mode(Formalization f) {
  return f == Formalization::generative ? Mode::autoregressive : Mode::bidirectional;
}

void ClassificationInstance::validate() const {
  const bool ok = [&] {
    switch (kind) {
      case Formalization::binary: return std::holds_alternative<bool>(target);
      case Formalization::dual: {
        if (!std::holds_alternative<double>(target)) return false;
        const double t = std::get<double>(target);
        return t == 0.0 || t == 1.0;
      }
      case Formalization::generative:
        return std::holds_alternative<std::string>(target) &&
               std::find(options.begin(), options.end(), std::get<std::string>(target)) != options.end();
      case Formalization::sequence_cls: return std::holds_alternative<std::size_t>(target);
    }
    return false;
  }();
  if (!ok) throw DataError("instance target does not match its formalization (" + std::string(to_string(kind)) + ")");
}

// ----------------------------------------------------------- input layouts

std::vector<TokenId> binary_input(const Tokenizer& tok, std::string_view label, std::optional<Aspect> aspect,
                                  std::string_view text, std::size_t max_len) {
  std::vector<TokenId> ids{special::start};
  for (TokenId t : tok.encode(label)) ids.push_back(t);
  if (aspect) {
    ids.push_back(special::sep);
    ids.push_back(Tokenizer::aspect_token(*aspect));
  }
  ids.push_back(special::sep);
  if (ids.size() > max_len)
    throw ModelError("binary input: label block of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                     std::to_string(max_len));
  const auto body = tok.encode(text);
  const std::size_t room = max_len - ids.size();
  ids.insert(ids.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(std::min(room, body.size())));
  return ids;
}

std::vector<TokenId> text_input(const Tokenizer& tok, std::string_view text, std::size_t max_len) {
  std::vector<TokenId> ids{special::start};
  const auto body = tok.encode(text);
  const std::size_t room = max_len > 0 ? max_len - 1 : 0;
  ids.insert(ids.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(std::min(room, body.size())));
  return ids;
}

std::vector<TokenId> label_input(const Tokenizer& tok, std::string_view label, std::optional<Aspect> aspect,
                                 std::size_t max_len) {
  std::vector<TokenId> ids{special::start};
  for (TokenId t : tok.encode(label)) ids.push_back(t);
  if (aspect) {
    ids.push_back(special::sep);
    ids.push_back(Tokenizer::aspect_token(*aspect));
  }
  if (ids.size() > max_len) throw ModelError("label input exceeds max length");
  return ids;
}

// --------------------------------------------------------- instance builders

std::vector<ClassificationInstance> make_binary_pairs(const Example& example, const std::vector<std::string>& vocabulary,
                                                      std::size_t negatives_per_positive, std::uint64_t seed) {
  if (negatives_per_positive == 0) throw ConfigError("negatives_per_positive must be at least 1");
  for (const auto& g : example.gold_labels)
    if (std::find(vocabulary.begin(), vocabulary.end(), g) == vocabulary.end())
      throw DataError("gold label '" + g + "' missing from the vocabulary");
  std::vector<std::string> pool;
  for (const auto& l : vocabulary)
    if (std::find(example.gold_labels.begin(), example.gold_labels.end(), l) == example.gold_labels.end())
      pool.push_back(l);
  if (pool.empty())
    spdlog::warn("dataset '{}': vocabulary equals the gold set; emitting positives only", example.dataset_id);

  Rng rng(seed ^ text::fnv1a64(example.text));
  std::vector<ClassificationInstance> out;
  for (const auto& gold : example.gold_labels) {
    out.push_back({Formalization::binary, example.text, gold, {}, std::nullopt, true});
    // Partial Fisher-Yates: the first k slots become a uniform sample without replacement.
    auto draw = pool;
    const std::size_t k = std::min(negatives_per_positive, draw.size());
    for (std::size_t i = 0; i < k; ++i) std::swap(draw[i], draw[i + rng.index(draw.size() - i)]);
    for (std::size_t i = 0; i < k; ++i)
      out.push_back({Formalization::binary, example.text, draw[i], {}, std::nullopt, false});
  }
  return out;
}

std::vector<ClassificationInstance> make_dual_pairs(const Example& example, const std::vector<std::string>& vocabulary,
                                                    std::size_t negatives_per_positive, std::uint64_t seed) {
  auto out = make_binary_pairs(example, vocabulary, negatives_per_positive, seed);
  for (auto& inst : out) {
    inst.kind = Formalization::dual;
    inst.target = std::get<bool>(inst.target) ? 1.0 : 0.0;
  }
  return out;
}

ClassificationInstance make_generative_instance(const Example& example, const std::vector<std::string>& options) {
  ClassificationInstance inst{Formalization::generative, example.text, {}, options, std::nullopt,
                              example.gold_labels.front()};
  inst.validate();
  return inst;
}

ClassificationInstance make_sequence_instance(const Example& example, const std::vector<std::string>& label_space) {
  auto it = std::find(label_space.begin(), label_space.end(), example.gold_labels.front());
  if (it == label_space.end()) throw DataError("label '" + example.gold_labels.front() + "' not in the label space");
  return {Formalization::sequence_cls, example.text, {}, {}, std::nullopt,
          static_cast<std::size_t>(it - label_space.begin())};
}

// ------------------------------------------------------------ prompt builder

TemplatePack TemplatePack::defaults() {
  TemplatePack p;
  p.patterns_[std::string(kDefaultTemplate)] =
      "{text} [sep] Which of these choices best describes the {aspect_phrase} of the text? Choices: {options}. Answer:";
  p.patterns_[std::string(kAspectTemplate)] = "{text} [sep] What aspect is this? Answer:";
  return p;
}

TemplatePack TemplatePack::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template pack " + path.string());
  const auto j = nlohmann::json::parse(in);
  if (!j.is_object()) throw ConfigError("template pack must be a JSON object");
  TemplatePack p = defaults();
  for (const auto& [id, pattern] : j.items()) {
    auto s = pattern.get<std::string>();
    if (s.find("{text}") == std::string::npos) throw ConfigError("template '" + id + "' lacks a {text} slot");
    p.patterns_[id] = std::move(s);
  }
  return p;
}

const std::string& TemplatePack::get(const std::string& id) const {
  auto it = patterns_.find(id);
  if (it == patterns_.end()) throw ConfigError("unknown template '" + id + "'");
  return it->second;
}

std::string aspect_phrase(std::optional<Aspect> aspect) {
  return aspect ? std::string(to_string(*aspect)) : std::string("category");
}

namespace {

std::string fill(std::string s, std::string_view slot, const std::string& value) {
  for (std::size_t pos = s.find(slot); pos != std::string::npos; pos = s.find(slot, pos + value.size()))
    s.replace(pos, slot.size(), value);
  return s;
}

}  // namespace

GenerativePrompt build_generative_prompt(const Tokenizer& tok, std::string_view text,
                                         const std::vector<std::string>& options, std::optional<Aspect> aspect,
                                         std::string_view template_id, const TemplatePack& pack, std::size_t max_len) {
  if (options.empty() && template_id != kAspectTemplate) throw DataError("generative prompt needs at least one option");
  std::string pattern = pack.get(std::string(template_id));
  pattern = fill(pattern, "{options}", text::join(options, ", "));
  pattern = fill(pattern, "{aspect_phrase}", aspect_phrase(aspect));
  const auto at = pattern.find("{text}");
  if (at == std::string::npos) throw ConfigError("template lacks a {text} slot");
  const std::string prefix = pattern.substr(0, at);
  const std::string suffix = pattern.substr(at + 6);

  const auto prefix_ids = tok.encode(prefix);
  const auto suffix_ids = tok.encode(suffix);
  auto text_pieces = tok.pieces(text);
  std::size_t answer_room = 1;
  for (const auto& o : options) answer_room = std::max(answer_room, tok.encode(o).size() + 1);
  const std::size_t fixed = 1 + prefix_ids.size() + suffix_ids.size() + answer_room;
  const std::size_t room = max_len > fixed ? max_len - fixed : 0;
  if (text_pieces.size() > room) {
    if (room < std::min(kPromptTextFloor, text_pieces.size()))
      throw ModelError("generative prompt exceeds max length " + std::to_string(max_len) +
                       " even after truncating the text");
    text_pieces.resize(room);
  }

  GenerativePrompt p;
  p.options = options;
  p.tokens.push_back(special::start);
  p.tokens.insert(p.tokens.end(), prefix_ids.begin(), prefix_ids.end());
  for (const auto& piece : text_pieces) p.tokens.push_back(tok.id_of(piece));
  p.tokens.insert(p.tokens.end(), suffix_ids.begin(), suffix_ids.end());
  p.answer_start = p.tokens.size();
  p.rendered = prefix + text::join(text_pieces, " ") + suffix;
  p.surfaces = tok.surfaces_of(p.rendered);
  return p;
}

// ----------------------------------------------------------- losses

std::string_view to_string(LossScope s) { return s == LossScope::full_sequence ? "full_sequence" : "answer_only"; }

LossScope parse_loss_scope(std::string_view s) {
  if (s == "full_sequence") return LossScope::full_sequence;
  if (s == "answer_only") return LossScope::answer_only;
  throw ConfigError("unknown loss scope '" + std::string(s) + "'");
}

namespace {

void require_mode(const ReferenceEncoder& model, Mode mode, std::string_view what) {
  if (model.config().mode != mode)
    throw ModelError(std::string(what) + ": requires a " + std::string(to_string(mode)) + " model");
}

ad::Var mean_pool(ad::Tape& tape, ad::Var states) {
  const std::vector<double> w(static_cast<std::size_t>(tape.value(states).rows()), 1.0);
  return ad::masked_mean_rows(tape, states, w);
}

}  // namespace

ad::Var binary_loss(ad::Tape& tape, const ReferenceEncoder& model, const ClassificationInstance& inst) {
  require_mode(model, Mode::bidirectional, "binary_loss");
  const auto ids = binary_input(model.tokenizer(), inst.label, inst.aspect, inst.text, model.config().max_sequence_length);
  ad::Var cls = ad::row(tape, model.forward(tape, ids), 0);
  ad::Var logits = model.head_logits(tape, kBinaryHead, cls);
  const std::size_t target = std::get<bool>(inst.target) ? 1 : 0;
  return ad::cross_entropy(tape, logits, std::span<const std::size_t>(&target, 1));
}

ad::Var dual_loss(ad::Tape& tape, const ReferenceEncoder& model, const ClassificationInstance& inst) {
  require_mode(model, Mode::bidirectional, "dual_loss");
  const std::size_t max_len = model.config().max_sequence_length;
  ad::Var u = mean_pool(tape, model.forward(tape, text_input(model.tokenizer(), inst.text, max_len)));
  ad::Var v = mean_pool(tape, model.forward(tape, label_input(model.tokenizer(), inst.label, inst.aspect, max_len)));
  return ad::squared_error(tape, ad::cosine(tape, u, v), std::get<double>(inst.target));
}

std::vector<TokenId> generative_sequence(const Tokenizer& tok, const GenerativePrompt& prompt, std::string_view answer) {
  std::vector<TokenId> seq = prompt.tokens;
  for (TokenId t : tok.encode(answer)) seq.push_back(t);
  seq.push_back(special::eos);
  return seq;
}

ad::Var generative_loss(ad::Tape& tape, const ReferenceEncoder& model, const GenerativePrompt& prompt,
                        std::string_view answer, LossScope scope) {
  require_mode(model, Mode::autoregressive, "generative_loss");
  if (!prompt.options.empty() && std::find(prompt.options.begin(), prompt.options.end(), answer) == prompt.options.end())
    throw DataError("answer '" + std::string(answer) + "' is not among the prompt options");
  const auto seq = generative_sequence(model.tokenizer(), prompt, answer);
  ad::Var logits = model.lm_logits(tape, model.forward(tape, seq));
  const std::size_t first = scope == LossScope::full_sequence ? 0 : prompt.answer_start - 1;
  const std::size_t count = seq.size() - 1 - first;
  std::vector<std::size_t> targets(seq.begin() + static_cast<std::ptrdiff_t>(first + 1), seq.end());
  return ad::cross_entropy(tape, ad::slice_rows(tape, logits, first, count), targets);
}

ad::Var sequence_loss(ad::Tape& tape, const ReferenceEncoder& model, const ClassificationInstance& inst) {
  require_mode(model, Mode::bidirectional, "sequence_loss");
  const auto ids = text_input(model.tokenizer(), inst.text, model.config().max_sequence_length);
  ad::Var logits = model.head_logits(tape, kSequenceHead, ad::row(tape, model.forward(tape, ids), 0));
  const std::size_t target = std::get<std::size_t>(inst.target);
  return ad::cross_entropy(tape, logits, std::span<const std::size_t>(&target, 1));
}

// ---------------------------------------------------------- predictors

std::size_t argmax_first(const std::vector<double>& scores) {
  if (scores.empty()) throw DataError("argmax over an empty candidate list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

namespace {

RowVector softmax(const RowVector& z) {
  RowVector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

SequencePrediction seq_cls_predict(const ReferenceEncoder& model, std::string_view text) {
  require_mode(model, Mode::bidirectional, "seq_cls_predict");
  if (model.tokenizer().encode(text).empty()) throw DataError("seq_cls_predict: text tokenizes to nothing");
  ad::Tape tape;
  const auto ids = text_input(model.tokenizer(), text, model.config().max_sequence_length);
  ad::Var logits = model.head_logits(tape, kSequenceHead, ad::row(tape, model.forward(tape, ids), 0));
  SequencePrediction out;
  out.probabilities = softmax(tape.value(logits).row(0));
  std::vector<double> p(out.probabilities.data(), out.probabilities.data() + out.probabilities.size());
  out.index = argmax_first(p);
  return out;
}

double binary_score(const ReferenceEncoder& model, std::string_view text, std::string_view label,
                    std::optional<Aspect> aspect) {
  require_mode(model, Mode::bidirectional, "binary_score");
  if (model.head_outputs(kBinaryHead) != 2) throw ModelError("binary_score: binary head must have two outputs");
  ad::Tape tape;
  const auto ids = binary_input(model.tokenizer(), label, aspect, text, model.config().max_sequence_length);
  ad::Var logits = model.head_logits(tape, kBinaryHead, ad::row(tape, model.forward(tape, ids), 0));
  return softmax(tape.value(logits).row(0))(1);
}

std::string binary_predict(const ReferenceEncoder& model, std::string_view text,
                           const std::vector<std::string>& candidates, std::optional<Aspect> aspect) {
  if (candidates.empty()) throw DataError("binary_predict: empty candidate list");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) scores.push_back(binary_score(model, text, c, aspect));
  return candidates[argmax_first(scores)];
}

RowVector dual_text_embedding(const ReferenceEncoder& model, std::string_view text) {
  require_mode(model, Mode::bidirectional, "dual encoder");
  const std::size_t max_len = model.config().max_sequence_length;
  return model.encode(text_input(model.tokenizer(), text, max_len)).colwise().mean();
}

RowVector dual_label_embedding(const ReferenceEncoder& model, std::string_view label, std::optional<Aspect> aspect) {
  require_mode(model, Mode::bidirectional, "dual encoder");
  const std::size_t max_len = model.config().max_sequence_length;
  return model.encode(label_input(model.tokenizer(), label, aspect, max_len)).colwise().mean();
}

double cosine_similarity(const RowVector& a, const RowVector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    spdlog::warn("cosine similarity of a zero-norm embedding; scoring it as 0");
    return 0.0;
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double dual_encode_score(const ReferenceEncoder& model, std::string_view text, std::string_view label,
                         std::optional<Aspect> aspect) {
  return cosine_similarity(dual_text_embedding(model, text), dual_label_embedding(model, label, aspect));
}

std::string dual_predict(const ReferenceEncoder& model, std::string_view text,
                         const std::vector<std::string>& candidates, std::optional<Aspect> aspect) {
  if (candidates.empty()) throw DataError("dual_predict: empty candidate list");
  const RowVector x = dual_text_embedding(model, text);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) scores.push_back(cosine_similarity(x, dual_label_embedding(model, c, aspect)));
  return candidates[argmax_first(scores)];
}

std::string generative_predict(const ReferenceEncoder& model, const GenerativePrompt& prompt,
                               std::size_t max_new_tokens) {
  require_mode(model, Mode::autoregressive, "generative_predict");
  std::vector<TokenId> seq = prompt.tokens;
  std::vector<TokenId> generated;
  const std::size_t max_len = model.config().max_sequence_length;
  while (generated.size() < max_new_tokens && seq.size() < max_len) {
    const RowVector dist = lm_step(model, seq);
    std::vector<double> p(dist.data(), dist.data() + dist.size());
    const auto next = static_cast<TokenId>(argmax_first(p));
    if (next == special::eos) break;
    generated.push_back(next);
    seq.push_back(next);
  }
  return model.tokenizer().decode(generated, &prompt.surfaces);
}

}  // namespace zstc
