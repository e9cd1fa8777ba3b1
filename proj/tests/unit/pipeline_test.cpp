#include <doctest.h>

#include <cstdlib>
#include <set>

#include "support.hpp"
#include "zstc/error.hpp"
#include "zstc/fixtures.hpp"
#include "zstc/pipeline.hpp"

using namespace zstc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_run(const zstc::test::TempDir& dir, const std::string& run_id) {
  return {{"run_id", run_id},
          {"data", (dir / "raw" / "datasets.json").string()},
          {"output_root", (dir / "out").string()},
          {"encoder", {{"hidden_width", 16}, {"ffn_width", 32}, {"hash_buckets", 1024}, {"max_sequence_length", 64}}},
          {"finetune", {{"learning_rate", 3e-3}, {"epochs", 1}}},
          {"pretrain", {{"learning_rate", 1e-3}, {"epochs", 1}}}};
}

void write_raw(const zstc::test::TempDir& dir) {
  fixtures::SyntheticSpec spec;
  spec.train_texts_per_label = 6;
  spec.test_texts_per_label = 2;
  spec.aspect_train_scale = {1.0, 1.5, 2.0};
  fixtures::write_benchmark(dir / "raw", fixtures::generate(spec, 8));
}

}  // namespace

TEST_CASE("flags override the file, which overrides defaults") {
  const json file = {{"run_id", "r"}, {"seed", 5}, {"finetune", {{"learning_rate", 1e-4}, {"epochs", 2}}}};
  const auto from_file = resolve_config(file);
  CHECK(from_file.seed == 5);
  CHECK(from_file.finetune.learning_rate == 1e-4);
  CHECK(from_file.finetune.epochs == 2);
  CHECK(from_file.finetune.batch_size == 16);
  CHECK(from_file.finetune.seed == 5);
  CHECK(from_file.encoder.seed == 5);

  const auto flagged = resolve_config(file, {{"seed", 9}, {"finetune", {{"learning_rate", 3e-3}}}});
  CHECK(flagged.seed == 9);
  CHECK(flagged.finetune.learning_rate == 3e-3);
  CHECK(flagged.finetune.epochs == 2);

  const auto defaults = resolve_config({{"run_id", "r"}});
  CHECK(defaults.seed == 42);
  CHECK(defaults.formalization == Formalization::binary);
  CHECK(defaults.strategy == Strategy::vanilla);
  OptimizerConfig expected = default_finetune_config(Formalization::binary);
  expected.seed = 42;
  CHECK(defaults.finetune == expected);
  CHECK(defaults.to_json()["finetune"]["batch_size"] == 16);
  CHECK(defaults.corpus == defaults.output_root / "corpus");

  const auto gen = resolve_config({{"formalization", "generative"}});
  CHECK(gen.encoder.mode == Mode::autoregressive);
  CHECK(gen.finetune.batch_size == 128);

  CHECK_THROWS_AS(resolve_config({{"colour", "blue"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"strategy", "sideways"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"formalization", "dual"}, {"encoder", {{"mode", "autoregressive"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"formalization", "sequence_cls"}, {"strategy", "implicit"}}), ConfigError);
}

TEST_CASE("output root falls back to the environment") {
  ::setenv(kOutputRootEnv, "/tmp/zstc-env-root", 1);
  CHECK(resolve_config(json::object()).output_root == fs::path("/tmp/zstc-env-root"));
  CHECK(resolve_config({{"output_root", "x"}}).output_root == fs::path("x"));
  ::unsetenv(kOutputRootEnv);
  CHECK(default_output_root() == fs::path("runs"));
}

TEST_CASE("resolved config round-trips through its JSON echo") {
  const auto c = resolve_config({{"run_id", "r"}, {"strategy", "explicit"}, {"seed", 3}});
  const auto again = resolve_config(c.to_json());
  CHECK(again.to_json() == c.to_json());
}

TEST_CASE("stats rows") {
  Dataset d;
  d.spec = {"ag_news", Aspect::topic, Split::in_domain, {"world", "sports", "business", "tech"}, std::nullopt};
  for (int i = 0; i < 3; ++i)
    d.examples.push_back(zstc::test::make_example("t" + std::to_string(i), {"world"}, "ag_news"));
  d.examples.push_back(zstc::test::make_example("q", {"tech"}, "ag_news", Aspect::topic, Split::in_domain,
                                                Partition::test));
  CHECK(stats_row(d) == "ag_news topic 3/1 4");
}

TEST_CASE("prepare equalizes aspects and is deterministic") {
  zstc::test::TempDir dir;
  write_raw(dir);
  const auto cfg = resolve_config(tiny_run(dir, "p"));
  const auto r = cmd_prepare(cfg);
  REQUIRE(r.aspect_unique_texts.size() == 3);
  const std::size_t first = r.aspect_unique_texts.begin()->second;
  for (const auto& [aspect, n] : r.aspect_unique_texts) CHECK(n == first);

  // independent recount from the written corpus
  std::map<Aspect, std::set<std::string>> texts;
  for (const auto& d : load_manifest(cfg.corpus / "datasets.json"))
    if (d.spec.split == Split::in_domain)
      for (const auto& e : d.partition(Partition::train)) texts[e.aspect].insert(e.text);
  for (const auto& [aspect, s] : texts) CHECK(s.size() == first);

  CHECK(r.stats_table.rfind("Dataset Aspect Train/Test #labels", 0) == 0);
  CHECK(fs::exists(cfg.corpus / "overlap.json"));
  CHECK(r.overlap.in_ids.back() == "in:all");

  std::map<std::string, std::string> before;
  for (const auto& e : fs::directory_iterator(cfg.corpus)) before[e.path().filename()] = zstc::test::read_file(e.path());
  cmd_prepare(cfg);
  for (const auto& [name, content] : before) CHECK(zstc::test::read_file(cfg.corpus / name) == content);
}

TEST_CASE("train and evaluate a run") {
  zstc::test::TempDir dir;
  write_raw(dir);
  json j = tiny_run(dir, "dual-run");
  j["formalization"] = "dual";
  const auto cfg = resolve_config(j);
  cmd_prepare(cfg);
  const auto art = cmd_train(cfg);
  CHECK(art.checkpoints.size() == 1);
  CHECK(fs::exists(cfg.run_dir() / "config.json"));
  CHECK(read_json_file(cfg.run_dir() / "config.json") == cfg.to_json());

  const auto out = cmd_eval(cfg, EvalSelection::out);
  CHECK(out.records.size() == 3);
  for (const auto& r : out.records) {
    CHECK(r.split == Split::out_of_domain);
    CHECK(r.n_examples == 8);  // 4 labels x 2 test texts
  }
  const std::string first = zstc::test::read_file(cfg.run_dir() / "metrics" / "out.json");
  cmd_eval(cfg, EvalSelection::out);
  CHECK(zstc::test::read_file(cfg.run_dir() / "metrics" / "out.json") == first);
  CHECK(fs::exists(cfg.run_dir() / "metrics" / (out.records.front().dataset_id + ".csv")));

  CHECK(cmd_eval(cfg, EvalSelection::both).records.size() == 9);
  const auto rep = cmd_report({cfg.run_dir() / "metrics" / "out.json"});
  CHECK(rep.average == doctest::Approx(out.average));

  json wrong = j;
  wrong["formalization"] = "binary";
  CHECK_THROWS_AS(cmd_eval(resolve_config(wrong), EvalSelection::in), ConfigError);
  CHECK_THROWS_AS(cmd_eval(cfg, EvalSelection::in, dir / "nowhere"), ModelError);
  json noid = j;
  noid.erase("run_id");
  CHECK_THROWS_AS(cmd_train(resolve_config(noid)), ConfigError);
}

TEST_CASE("explicit runs persist two checkpoints") {
  zstc::test::TempDir dir;
  write_raw(dir);
  json j = tiny_run(dir, "explicit-run");
  j["strategy"] = "explicit";
  const auto cfg = resolve_config(j);
  cmd_prepare(cfg);
  const auto art = cmd_train(cfg);
  CHECK(art.checkpoints.size() == 2);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(cfg.run_dir() / "checkpoints")) dirs += e.is_directory();
  CHECK(dirs == 2);
  CHECK(fs::exists(cfg.run_dir() / "logs" / "stage1.jsonl"));
}
