// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "support.hpp"
#include "zstc/error.hpp"
#include "zstc/evaluation.hpp"
#include "zstc/fixtures.hpp"
#include "zstc/formalizations.hpp"
#include "zstc/pipeline.hpp"

using namespace zstc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string random_words(Rng& rng, std::size_t n, const std::string& prefix, std::size_t pool) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + prefix + std::to_string(rng.index(pool));
  return s;
}

// ------------------------------------------------------------- criterion 1

// P(True) recomputed from the raw head logits.
double oracle_binary(const ReferenceEncoder& m, const std::string& text, const std::string& label) {
  ad::Tape t;
  const auto ids = binary_input(m.tokenizer(), label, std::nullopt, text, m.config().max_sequence_length);
  const Matrix h = m.encode(ids);
  const Matrix logits = t.value(m.head_logits(t, kBinaryHead, t.constant(h.row(0))));
  const double a = logits(0, 0), b = logits(0, 1);
  return 1.0 / (1.0 + std::exp(a - b));
}

RowVector mean_rows(const Matrix& h) { return h.colwise().mean(); }

double oracle_dual(const ReferenceEncoder& m, const std::string& text, const std::string& label) {
  const std::size_t max_len = m.config().max_sequence_length;
  const RowVector x = mean_rows(m.encode(text_input(m.tokenizer(), text, max_len)));
  const RowVector y = mean_rows(m.encode(label_input(m.tokenizer(), label, std::nullopt, max_len)));
  const double n = x.norm() * y.norm();
  return n == 0.0 ? 0.0 : x.dot(y) / n;
}

// Exhaustive argmax over every candidate; the earliest of equal maxima wins.
std::size_t exhaustive(const std::vector<double>& scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  return static_cast<std::size_t>(std::find(scores.begin(), scores.end(), top) - scores.begin());
}

Outcome criterion_oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(2024);
  std::size_t mismatches = 0, fixtures = 0;
  for (int f = 0; f < 200; ++f) {
    EncoderConfig cfg = zstc::test::tiny_config(Mode::bidirectional, 100 + static_cast<std::uint64_t>(f), 16);
    cfg.hash_buckets = 256;
    ReferenceEncoder b(cfg);
    b.add_head(kBinaryHead, 2, 7 + static_cast<std::uint64_t>(f));
    const ReferenceEncoder d(cfg);
    const std::string text = random_words(rng, 3 + rng.index(8), "w", 60);
    std::vector<std::string> cands;
    const std::size_t n = 1 + rng.index(7);
    for (std::size_t i = 0; i < n; ++i) cands.push_back(random_words(rng, 1 + rng.index(3), "c", 30));
    if (n > 2 && rng.index(3) == 0) cands.push_back(cands[rng.index(n)]);  // forced tie
    std::vector<double> bs, ds;
    for (const auto& c : cands) {
      bs.push_back(oracle_binary(b, text, c));
      ds.push_back(oracle_dual(d, text, c));
    }
    mismatches += binary_predict(b, text, cands) != cands[exhaustive(bs)];
    mismatches += dual_predict(d, text, cands) != cands[exhaustive(ds)];
    fixtures += 2;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {mismatches == 0 && secs < 60.0,
          std::to_string(fixtures) + " fixtures, " + std::to_string(mismatches) + " mismatches, " + fmt(secs, 1) + "s"};
}

// ------------------------------------------------------------- criterion 2

Outcome criterion_gradients() {
  const auto pack = TemplatePack::defaults();
  std::map<std::string, double> worst;
  std::map<std::string, std::size_t> draws;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    Rng rng(500 + draw);
    const std::string text = random_words(rng, 2 + rng.index(5), "t", 40);
    const std::string label = random_words(rng, 1 + rng.index(2), "l", 20);
    {
      ReferenceEncoder m(zstc::test::tiny_config(Mode::bidirectional, draw + 1, 16));
      m.add_head(kBinaryHead, 2, draw + 2);
      const ClassificationInstance inst{Formalization::binary, text, label, {}, std::nullopt, rng.index(2) == 0};
      const auto r = zstc::test::finite_difference_check(
          m, [&](ad::Tape& t) { return binary_loss(t, m, inst); }, 2, draw);
      worst["binary"] = std::max(worst["binary"], r.worst_relative);
      ++draws["binary"];
    }
    {
      ReferenceEncoder m(zstc::test::tiny_config(Mode::bidirectional, draw + 31, 16));
      const ClassificationInstance inst{Formalization::dual, text, label, {}, std::nullopt,
                                        rng.index(2) == 0 ? 1.0 : 0.0};
      const auto r = zstc::test::finite_difference_check(
          m, [&](ad::Tape& t) { return dual_loss(t, m, inst); }, 2, draw);
      worst["dual"] = std::max(worst["dual"], r.worst_relative);
      ++draws["dual"];
    }
    {
      ReferenceEncoder m(zstc::test::tiny_config(Mode::autoregressive, draw + 61, 16));
      const std::vector<std::string> options = {label, "other"};
      const auto p = build_generative_prompt(m.tokenizer(), random_words(rng, 2, "t", 40), options, std::nullopt,
                                             kDefaultTemplate, pack, 48);
      const LossScope scope = draw % 2 == 0 ? LossScope::full_sequence : LossScope::answer_only;
      const auto r = zstc::test::finite_difference_check(
          m, [&](ad::Tape& t) { return generative_loss(t, m, p, label, scope); }, 2, draw);
      worst["generative"] = std::max(worst["generative"], r.worst_relative);
      ++draws["generative"];
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [loss, w] : worst) {
    ok = ok && w <= 1e-3 && draws[loss] >= 20;
    detail += loss + " " + std::to_string(draws[loss]) + " draws worst " + fmt(w * 1e6, 2) + "e-6; ";
  }
  return {ok, detail + "tolerance 1e-3"};
}

// ------------------------------------------------------------- criterion 3

// Share of unique train texts per first gold label, tallied from scratch.
std::map<std::string, double> tally(const Dataset& d) {
  std::map<std::string, std::string> first_label;
  for (const auto& e : d.examples)
    if (e.partition == Partition::train) first_label.emplace(e.text, e.gold_labels.front());
  std::map<std::string, double> out;
  for (const auto& [text, label] : first_label) out[label] += 1.0;
  for (auto& [label, n] : out) n /= static_cast<double>(first_label.size());
  return out;
}

Outcome criterion_normalization() {
  fixtures::SyntheticSpec spec;
  spec.train_texts_per_label = 20;
  spec.aspect_train_scale = {1.0, 1.65, 2.9};
  std::map<Aspect, AspectCorpus> by_aspect;
  for (auto& g : fixtures::generate(spec, 21)) {
    if (g.dataset.spec.split != Split::in_domain) continue;
    auto& c = by_aspect[g.dataset.spec.aspect];
    c.aspect = g.dataset.spec.aspect;
    c.datasets.push_back(std::move(g.dataset));
  }
  std::vector<AspectCorpus> input;
  for (auto& [a, c] : by_aspect) input.push_back(c);
  const auto output = aspect_normalize(input, 77);

  std::vector<std::size_t> before, after;
  bool ok = output.size() == input.size();
  double worst_excess = -1.0;
  for (std::size_t i = 0; i < input.size() && ok; ++i) {
    std::set<std::string> in_texts, out_texts;
    for (const auto& d : input[i].datasets)
      for (const auto& e : d.examples)
        if (e.partition == Partition::train) in_texts.insert(e.text);
    for (const auto& d : output[i].datasets)
      for (const auto& e : d.examples)
        if (e.partition == Partition::train) out_texts.insert(e.text);
    before.push_back(in_texts.size());
    after.push_back(out_texts.size());
    for (std::size_t k = 0; k < input[i].datasets.size(); ++k) {
      const auto p0 = tally(input[i].datasets[k]);
      const auto p1 = tally(output[i].datasets[k]);
      std::size_t kept = 0;
      for (const auto& e : output[i].datasets[k].examples) kept += e.partition == Partition::train;
      const double tol = std::max(0.02, 1.0 / static_cast<double>(kept));
      for (const auto& [label, share] : p0) {
        const double drift = std::abs(share - (p1.contains(label) ? p1.at(label) : 0.0));
        worst_excess = std::max(worst_excess, drift - tol);
      }
    }
  }
  const bool equal = std::all_of(after.begin(), after.end(), [&](std::size_t n) { return n == after.front(); });
  const bool unequal_input = std::set<std::size_t>(before.begin(), before.end()).size() == before.size();
  ok = ok && equal && unequal_input && worst_excess <= 0.0;
  std::string counts;
  for (std::size_t i = 0; i < before.size(); ++i)
    counts += (i ? "," : "") + std::to_string(before[i]) + "->" + std::to_string(after[i]);
  return {ok, "unique texts " + counts + "; worst drift minus tolerance " + fmt(worst_excess, 4)};
}

// ------------------------------------------------------------- criterion 4

Outcome criterion_overlap() {
  bool self_ok = true;
  std::map<fixtures::OverlapLevel, std::vector<double>> levels;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto g = fixtures::generate(fixtures::SyntheticSpec{}, seed);
    std::vector<Dataset> ds;
    for (const auto& x : g) {
      self_ok = self_ok && label_overlap(x.dataset.spec, x.dataset.spec) == 100.0;
      ds.push_back(x.dataset);
    }
    const auto m = corpus_overlap(ds);
    const std::size_t all = m.in_ids.size() - 1;
    for (std::size_t j = 0; j < m.out_ids.size(); ++j)
      for (const auto& x : g)
        if (x.dataset.spec.dataset_id == m.out_ids[j]) levels[*x.overlap].push_back(m.scores[all][j]);
  }
  const DatasetSpec anger{"a", Aspect::sentiment, Split::in_domain, {"anger"}, std::nullopt};
  const DatasetSpec refund{"b", Aspect::intent, Split::out_of_domain, {"refund"}, std::nullopt};
  const bool disjoint_ok = label_overlap(anger, refund) == 0.0;
  const double hi = mean(levels[fixtures::OverlapLevel::high]);
  const double md = mean(levels[fixtures::OverlapLevel::medium]);
  const double lo = mean(levels[fixtures::OverlapLevel::low]);
  const bool ordered = hi > md && md > lo;
  return {self_ok && disjoint_ok && ordered,
          std::string("self=100 ") + (self_ok ? "ok" : "FAILED") + ", disjoint=0 " + (disjoint_ok ? "ok" : "FAILED") +
              ", realized high/medium/low " + fmt(hi, 1) + "/" + fmt(md, 1) + "/" + fmt(lo, 1)};
}

// ------------------------------------------------------------- criterion 5

class TableClassifier : public Classifier {
 public:
  explicit TableClassifier(std::map<std::string, std::string> answers) : answers_(std::move(answers)) {}
  std::string predict(std::string_view text, const std::vector<std::string>&, std::optional<Aspect>) const override {
    return answers_.at(std::string(text));
  }

 private:
  std::map<std::string, std::string> answers_;
};

class CountingEmbedder : public TextEncoder {
 public:
  EncoderInfo info() const override { return inner_.info(); }
  std::vector<TokenId> tokenize(std::string_view t) const override { return inner_.tokenize(t); }
  Matrix encode(std::span<const TokenId> tokens) const override {
    ++calls;
    return inner_.encode(tokens);
  }
  mutable int calls = 0;

 private:
  BagOfTokensEmbedder inner_;
};

Outcome criterion_protocol() {
  struct Row {
    std::vector<std::string> gold;
    std::string prediction;
    bool hand;  // answer key, marked by hand
  };
  const std::vector<Row> rows = {
      {{"joy"}, "joy", true},
      {{"anger", "joy", "love"}, "joy", true},
      {{"anger", "joy", "love"}, "sadness", false},
      {{"sadness"}, "Sadness ", true},
      {{"fear"}, "surprise", false},
      {{"love", "joy"}, "love", true},
      {{"surprise"}, "surprise", true},
      {{"anger"}, "fear", false},
      {{"fear", "sadness"}, "sadness", true},
      {{"joy"}, "love", false},
      {{"anger", "fear"}, "fear", true},
      {{"love"}, "love", true},
      {{"sadness", "anger"}, "joy", false},
      {{"surprise", "joy"}, "JOY", true},
      {{"fear"}, "fear", true},
      {{"joy", "love", "surprise"}, "anger", false},
      {{"anger"}, "anger", true},
      {{"love"}, "joy", false},
      {{"sadness"}, "sadness", true},
      {{"surprise"}, "fear", false},
  };
  Dataset d;
  d.spec = {"emotion_fixture", Aspect::sentiment, Split::out_of_domain,
            {"sadness", "joy", "love", "anger", "fear", "surprise"}, std::nullopt};
  std::map<std::string, std::string> answers;
  std::size_t hand_correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string text = "example number " + std::to_string(i);
    d.examples.push_back({text, rows[i].gold, d.spec.dataset_id, d.spec.aspect, d.spec.split, Partition::test});
    answers[text] = rows[i].prediction;
    hand_correct += rows[i].hand;
  }
  const auto rec = evaluate(TableClassifier(answers), d, AspectPolicy::none);
  const bool scoring_ok = rec.n_examples == 20 && rec.correct == hand_correct &&
                          rec.accuracy == static_cast<double>(hand_correct) / 20.0;

  CountingEmbedder e;
  std::size_t exact_ok = 0;
  const std::vector<std::string> cands = {"sadness", "joy", "love", "anger", "fear", "surprise"};
  for (const auto& c : cands) {
    exact_ok += map_generated_to_label(c, cands, e) == c;
    exact_ok += map_generated_to_label(" " + std::string(1, static_cast<char>(std::toupper(c[0]))) + c.substr(1),
                                       cands, e) == c;
  }
  const int calls_on_exact = e.calls;
  map_generated_to_label("a feeling of dread", cands, e);
  const bool counter_live = e.calls > calls_on_exact;
  const bool fallback_ok = exact_ok == 2 * cands.size() && calls_on_exact == 0 && counter_live;
  return {scoring_ok && fallback_ok, "accuracy " + std::to_string(rec.correct) + "/20 vs hand count " +
                                         std::to_string(hand_correct) + "/20; exact-match embedder calls " +
                                         std::to_string(calls_on_exact) + " over " +
                                         std::to_string(2 * cands.size()) + " lookups"};
}

// ------------------------------------------------------------- criterion 6

struct RunScores {
  double in = 0.0;
  double out = 0.0;
};

class DeskBench {
 public:
  DeskBench() {
    fixtures::SyntheticSpec spec;
    spec.train_texts_per_label = 50;
    spec.test_texts_per_label = 25;
    fixtures::write_benchmark(dir_ / "raw", fixtures::generate(spec, 1));
    cmd_prepare(resolve_config(base("prepare")));
  }

  json base(const std::string& run_id) const {
    return {{"run_id", run_id},
            {"data", (dir_ / "raw" / "datasets.json").string()},
            {"output_root", (dir_ / "runs").string()}};
  }

  RunScores run(Formalization f, Strategy s, std::uint64_t seed) {
    json j = base(std::string(to_string(f)) + "-" + std::string(to_string(s)) + "-" + std::to_string(seed));
    j["formalization"] = std::string(to_string(f));
    j["strategy"] = std::string(to_string(s));
    j["seed"] = seed;
    j["finetune"] = {{"learning_rate", 3e-3}, {"batch_size", 16}, {"epochs", 3}, {"warmup_fraction", 0.1}};
    j["pretrain"] = {{"learning_rate", 1e-3}, {"batch_size", 16}, {"epochs", 3}};
    if (f == Formalization::generative) {
      j["finetune"]["epochs"] = 4;
      j["loss_scope"] = "answer_only";
      j["encoder"] = {{"hidden_width", 64}, {"heads", 4}, {"ffn_width", 128}};
    }
    const RunConfig cfg = resolve_config(j);
    cmd_train(cfg);
    const Report rep = cmd_eval(cfg, EvalSelection::both);
    std::vector<double> in, out;
    for (const auto& r : rep.records) (r.split == Split::in_domain ? in : out).push_back(r.accuracy);
    const RunScores sc{mean(in), mean(out)};
    std::cout << "  " << cfg.run_id << ": in " << fmt(sc.in) << " out " << fmt(sc.out) << std::endl;
    return sc;
  }

 private:
  zstc::test::TempDir dir_{"zstc-desk"};
};

Outcome criterion_desk_scale() {
  const auto start = std::chrono::steady_clock::now();
  DeskBench bench;
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::map<std::pair<Formalization, Strategy>, std::vector<RunScores>> runs;
  for (Formalization f : {Formalization::binary, Formalization::dual})
    for (Strategy s : {Strategy::vanilla, Strategy::implicit, Strategy::explicit_pretrain})
      for (auto seed : seeds) runs[{f, s}].push_back(bench.run(f, s, seed));
  for (auto seed : seeds) {
    runs[{Formalization::generative, Strategy::vanilla}].push_back(bench.run(Formalization::generative, Strategy::vanilla, seed));
    runs[{Formalization::sequence_cls, Strategy::vanilla}].push_back(
        bench.run(Formalization::sequence_cls, Strategy::vanilla, seed));
  }
  auto in_mean = [&](Formalization f, Strategy s) {
    std::vector<double> v;
    for (const auto& r : runs[{f, s}]) v.push_back(r.in);
    return mean(v);
  };
  auto out_mean = [&](Formalization f, Strategy s) {
    std::vector<double> v;
    for (const auto& r : runs[{f, s}]) v.push_back(r.out);
    return mean(v);
  };

  // (a) in-domain preserved
  bool a_ok = true;
  std::string a_detail;
  for (Formalization f : {Formalization::binary, Formalization::dual}) {
    const double v = in_mean(f, Strategy::vanilla);
    for (Strategy s : {Strategy::implicit, Strategy::explicit_pretrain}) {
      const double gap = in_mean(f, s) - v;
      a_ok = a_ok && std::abs(gap) <= 0.03;
      a_detail += std::string(to_string(f)) + "/" + std::string(to_string(s)) + " " + fmt(gap, 3) + " ";
    }
  }
  // (b) explicit binary out-of-domain
  const auto& bv = runs[{Formalization::binary, Strategy::vanilla}];
  const auto& be = runs[{Formalization::binary, Strategy::explicit_pretrain}];
  std::size_t wins = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) wins += be[i].out >= bv[i].out;
  const double bvm = out_mean(Formalization::binary, Strategy::vanilla);
  const double bem = out_mean(Formalization::binary, Strategy::explicit_pretrain);
  const bool b_ok = bem >= bvm - 0.02 && wins >= 2;
  // (c) fixed-head baseline at chance, zero-shot formalizations above it
  const double chance = 1.0 / 4.0 + 0.1;
  const double seq = out_mean(Formalization::sequence_cls, Strategy::vanilla);
  bool c_ok = seq <= chance;
  std::string c_detail = "seq_cls " + fmt(seq);
  for (Formalization f : {Formalization::binary, Formalization::dual, Formalization::generative}) {
    const double o = out_mean(f, Strategy::vanilla);
    c_ok = c_ok && o > chance;
    c_detail += ", " + std::string(to_string(f)) + " " + fmt(o);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "  6(a) " << (a_ok ? "PASS" : "FAIL") << ": in-domain gap vs vanilla " << a_detail << std::endl;
  std::cout << "  6(b) " << (b_ok ? "PASS" : "FAIL") << ": binary out-of-domain explicit " << fmt(bem) << " vs vanilla "
            << fmt(bvm) << ", explicit >= vanilla in " << wins << "/3 seeds" << std::endl;
  std::cout << "  6(c) " << (c_ok ? "PASS" : "FAIL") << ": out-of-domain " << c_detail << " (chance band "
            << fmt(chance, 2) << ")" << std::endl;
  return {a_ok && b_ok && c_ok, std::string("(a) ") + (a_ok ? "pass" : "fail") + " (b) " + (b_ok ? "pass" : "fail") +
                                    " (c) " + (c_ok ? "pass" : "fail") + ", " + fmt(secs / 60.0, 1) + " min"};
}

// ------------------------------------------------------------- criterion 7

Outcome criterion_aggregate() {
  const std::vector<double> table = {96.0, 97.2, 84.8, 88.6, 99.0, 88.9, 94.8, 64.1, 82.6};
  std::vector<MetricsRecord> recs;
  for (std::size_t i = 0; i < table.size(); ++i) {
    MetricsRecord r;
    r.dataset_id = "d" + std::to_string(i);
    r.aspect = static_cast<Aspect>(i / 3);
    r.split = Split::out_of_domain;
    r.accuracy = table[i] / 100.0;
    recs.push_back(r);
  }
  const double avg = aggregate(recs).average * 100.0;
  const double rounded = std::round(avg * 10.0) / 10.0;
  return {rounded == 88.4, "average " + fmt(avg, 4) + " -> " + fmt(rounded, 1)};
}

// ------------------------------------------------------------- criterion 8

Outcome criterion_determinism() {
  zstc::test::TempDir dir("zstc-det");
  fixtures::SyntheticSpec spec;
  spec.train_texts_per_label = 8;
  spec.test_texts_per_label = 4;
  fixtures::write_benchmark(dir / "raw", fixtures::generate(spec, 3));
  std::vector<std::string> metrics;
  for (const char* root : {"a", "b"}) {
    const json j = {{"run_id", "det"},
                    {"data", (dir / "raw" / "datasets.json").string()},
                    {"output_root", (dir / root).string()},
                    {"strategy", "explicit"},
                    {"seed", 11},
                    {"encoder", {{"hidden_width", 16}, {"ffn_width", 32}}},
                    {"finetune", {{"learning_rate", 3e-3}, {"epochs", 1}}},
                    {"pretrain", {{"learning_rate", 1e-3}, {"epochs", 1}}}};
    const RunConfig cfg = resolve_config(j);
    cmd_prepare(cfg);
    cmd_train(cfg);
    cmd_eval(cfg, EvalSelection::both);
    metrics.push_back(zstc::test::read_file(cfg.run_dir() / "metrics" / "both.json"));
  }
  const bool same = !metrics[0].empty() && metrics[0] == metrics[1];
  return {same, std::to_string(metrics[0].size()) + " bytes, " + (same ? "identical" : "different")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle equivalence", criterion_oracle_equivalence},
      {"gradient correctness", criterion_gradients},
      {"normalization invariants", criterion_normalization},
      {"overlap sanity", criterion_overlap},
      {"protocol fidelity", criterion_protocol},
      {"desk-scale directional reproduction", criterion_desk_scale},
      {"aggregation arithmetic", criterion_aggregate},
      {"end-to-end determinism", criterion_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
