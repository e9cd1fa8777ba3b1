#include "zstc/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "zstc/error.hpp"
#include "zstc/random.hpp"

namespace zstc {

namespace fs = std::filesystem;

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::vanilla: return "vanilla";
    case Strategy::implicit: return "implicit";
    case Strategy::explicit_pretrain: return "explicit";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "vanilla") return Strategy::vanilla;
  if (s == "implicit") return Strategy::implicit;
  if (s == "explicit") return Strategy::explicit_pretrain;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

std::string_view to_string(StageKind k) { return k == StageKind::aspect_pretrain ? "aspect_pretrain" : "finetune"; }

void TrainingPlan::validate() const {
  const bool is_explicit = strategy == Strategy::explicit_pretrain;
  if (is_explicit) {
    if (stages.size() != 2 || stages[0].kind != StageKind::aspect_pretrain || stages[1].kind != StageKind::finetune)
      throw ConfigError("explicit plans run exactly [aspect_pretrain, finetune]");
  } else if (stages.size() != 1 || stages[0].kind != StageKind::finetune) {
    throw ConfigError(std::string(to_string(strategy)) + " plans run exactly one finetune stage");
  }
  if (strategy == Strategy::implicit && formalization == Formalization::sequence_cls)
    throw ConfigError("implicit training needs a zero-shot formalization (binary, dual or generative)");
  if (negatives_per_positive == 0) throw ConfigError("negatives_per_positive must be at least 1");
  for (const auto& st : stages)
    if (st.optimizer.batch_size == 0 || st.optimizer.epochs == 0)
      throw ConfigError("stage batch_size and epochs must be positive");
}

OptimizerConfig default_finetune_config(Formalization f) {
  OptimizerConfig c;
  c.epochs = 3;
  c.weight_decay = 0.01;
  if (f == Formalization::generative) {
    c.learning_rate = 4e-5;
    c.batch_size = 128;
    c.warmup_fraction = 0.01;
    c.schedule = Schedule::cosine;
  } else {
    c.learning_rate = 2e-5;
    c.batch_size = 16;
    c.warmup_fraction = 0.1;
    c.schedule = Schedule::linear;
  }
  return c;
}

OptimizerConfig default_pretrain_config() {
  OptimizerConfig c;
  c.learning_rate = 2e-5;
  c.batch_size = 16;
  c.warmup_fraction = 0.1;
  c.schedule = Schedule::cosine;
  c.epochs = 3;
  c.weight_decay = 0.01;
  return c;
}

TrainingPlan make_plan(Strategy strategy, Formalization formalization) {
  TrainingPlan p;
  p.strategy = strategy;
  p.formalization = formalization;
  if (strategy == Strategy::explicit_pretrain) p.stages.push_back({StageKind::aspect_pretrain, default_pretrain_config()});
  p.stages.push_back({StageKind::finetune, default_finetune_config(formalization)});
  p.validate();
  return p;
}

ClassificationInstance inject_aspect(ClassificationInstance instance, Aspect aspect) {
  if (instance.aspect) throw DataError("aspect already injected into this instance");
  if (index_of(aspect) >= kAspectCount) throw DataError("unknown aspect");
  if (instance.kind == Formalization::sequence_cls)
    throw DataError("sequence classification instances take no aspect");
  instance.aspect = aspect;
  return instance;
}

std::vector<std::string> label_space(const std::vector<Dataset>& corpus) {
  std::vector<std::string> out;
  for (const auto& d : corpus)
    for (const auto& l : d.spec.label_vocabulary)
      if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  return out;
}

std::vector<ClassificationInstance> build_instances(const TrainingPlan& plan, const std::vector<Dataset>& corpus,
                                                    std::uint64_t seed) {
  std::vector<ClassificationInstance> out;
  const auto space = label_space(corpus);
  for (const auto& d : corpus) {
    if (d.spec.split != Split::in_domain)
      throw DataError("training data must be in-domain; '" + d.spec.dataset_id + "' is out-of-domain");
    for (const auto& e : d.examples) {
      if (e.partition != Partition::train) continue;
      std::vector<ClassificationInstance> batch;
      switch (plan.formalization) {
        case Formalization::binary:
          batch = make_binary_pairs(e, d.spec.label_vocabulary, plan.negatives_per_positive, seed);
          break;
        case Formalization::dual:
          batch = make_dual_pairs(e, d.spec.label_vocabulary, plan.negatives_per_positive, seed);
          break;
        case Formalization::generative: batch.push_back(make_generative_instance(e, d.spec.label_vocabulary)); break;
        case Formalization::sequence_cls: batch.push_back(make_sequence_instance(e, space)); break;
      }
      for (auto& inst : batch) {
        if (plan.strategy == Strategy::implicit) inst = inject_aspect(std::move(inst), e.aspect);
        out.push_back(std::move(inst));
      }
    }
  }
  return out;
}

std::string TrainingLog::to_jsonl() const {
  std::string out;
  for (const auto& e : entries) {
    out += nlohmann::json{{"stage", e.stage}, {"step", e.step}, {"loss", e.loss}, {"learning_rate", e.learning_rate}}
               .dump();
    out += '\n';
  }
  return out;
}

namespace {

/// Mini-batch AdamW over item losses; item order is reshuffled every epoch.
void train_items(ReferenceEncoder& model, std::size_t n_items, const std::function<ad::Var(ad::Tape&, std::size_t)>& loss_of,
                 const OptimizerConfig& cfg, std::size_t stage_index, TrainingLog* log) {
  if (n_items == 0) throw DataError("training stage " + std::to_string(stage_index) + ": empty corpus");
  const std::size_t batches_per_epoch = (n_items + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = batches_per_epoch * cfg.epochs;
  AdamW opt;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n_items);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    seeded_shuffle(order, rng);
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t size = std::min(cfg.batch_size, n_items - begin);
      GradientResult g;
      try {
        g = gradient(model, [&](ad::Tape& tape, std::size_t j) { return loss_of(tape, order[begin + j]); }, size);
      } catch (const ModelError& ex) {
        throw ModelError("step " + std::to_string(step) + ": " + ex.what());
      }
      const double lr = learning_rate_at(cfg, step, total);
      opt.step(model.parameters(), g.gradients, lr, cfg.weight_decay);
      if (log != nullptr) log->entries.push_back({stage_index, step, g.loss, lr});
    }
  }
}

struct AspectItem {
  std::string text;
  Aspect aspect;
};

std::vector<AspectItem> dedupe_by_text(const std::vector<Example>& corpus) {
  std::vector<AspectItem> items;
  std::unordered_set<std::string> seen;
  std::set<Aspect> aspects;
  for (const auto& e : corpus) {
    if (e.partition != Partition::train) continue;
    if (seen.insert(e.text).second) {
      items.push_back({e.text, e.aspect});
      aspects.insert(e.aspect);
    }
  }
  if (aspects.size() < 2) throw DataError("aspect pre-training needs a corpus spanning at least two aspects");
  return items;
}

std::vector<std::string> aspect_names() {
  std::vector<std::string> out;
  for (Aspect a : kAllAspects) out.emplace_back(to_string(a));
  return out;
}

GenerativePrompt aspect_prompt(const ReferenceEncoder& model, std::string_view text) {
  static const TemplatePack pack = TemplatePack::defaults();
  return build_generative_prompt(model.tokenizer(), text, aspect_names(), std::nullopt, kAspectTemplate, pack,
                                 model.config().max_sequence_length);
}

}  // namespace

ReferenceEncoder train_aspect_detector(ReferenceEncoder model, const std::vector<Example>& corpus,
                                       const OptimizerConfig& config, TrainingLog* log, std::size_t stage_index) {
  const auto items = dedupe_by_text(corpus);
  for (const auto& it : items) model.tokenizer().observe(it.text);
  if (model.config().mode == Mode::bidirectional) {
    model.add_head(kAspectHead, kAspectCount, config.seed ^ 0xa5a5a5a5ULL);
    train_items(
        model, items.size(),
        [&](ad::Tape& tape, std::size_t i) {
          const auto ids = text_input(model.tokenizer(), items[i].text, model.config().max_sequence_length);
          ad::Var logits = model.head_logits(tape, kAspectHead, ad::row(tape, model.forward(tape, ids), 0));
          const std::size_t target = index_of(items[i].aspect);
          return ad::cross_entropy(tape, logits, std::span<const std::size_t>(&target, 1));
        },
        config, stage_index, log);
  } else {
    for (const auto& name : aspect_names()) model.tokenizer().observe(name);
    std::vector<GenerativePrompt> prompts;
    prompts.reserve(items.size());
    for (const auto& it : items) prompts.push_back(aspect_prompt(model, it.text));
    train_items(
        model, items.size(),
        [&](ad::Tape& tape, std::size_t i) {
          return generative_loss(tape, model, prompts[i], to_string(items[i].aspect), LossScope::full_sequence);
        },
        config, stage_index, log);
  }
  return model;
}

Aspect predict_aspect(const ReferenceEncoder& model, std::string_view text) {
  if (model.config().mode == Mode::bidirectional) {
    ad::Tape tape;
    const auto ids = text_input(model.tokenizer(), text, model.config().max_sequence_length);
    ad::Var logits = model.head_logits(tape, kAspectHead, ad::row(tape, model.forward(tape, ids), 0));
    const Matrix& z = tape.value(logits);
    std::vector<double> scores(z.data(), z.data() + z.size());
    return kAllAspects[argmax_first(scores)];
  }
  const auto generated = generative_predict(model, aspect_prompt(model, text), 4);
  for (Aspect a : kAllAspects)
    if (generated == to_string(a)) return a;
  throw ModelError("generated '" + generated + "' is not an aspect name");
}

ReferenceEncoder aspect_pretrain(ReferenceEncoder model, const std::vector<Example>& corpus,
                                 const OptimizerConfig& config, TrainingLog* log, std::size_t stage_index) {
  auto trained = train_aspect_detector(std::move(model), corpus, config, log, stage_index);
  trained.remove_head(kAspectHead);
  return trained;
}

StageResult finetune(ReferenceEncoder model, const TrainingPlan& plan, std::size_t stage_index,
                     const std::vector<Dataset>& corpus) {
  plan.validate();
  if (stage_index >= plan.stages.size() || plan.stages[stage_index].kind != StageKind::finetune)
    throw ConfigError("stage " + std::to_string(stage_index) + " is not a finetune stage");
  if (model.config().mode != required_mode(plan.formalization))
    throw ModelError(std::string(to_string(plan.formalization)) + " needs a " +
                     std::string(to_string(required_mode(plan.formalization))) + " model");
  const OptimizerConfig& cfg = plan.stages[stage_index].optimizer;
  const auto instances = build_instances(plan, corpus, cfg.seed);
  if (instances.empty()) throw DataError("finetune: no training instances");

  for (const auto& d : corpus) {
    for (const auto& l : d.spec.label_vocabulary) model.tokenizer().observe(l);
    for (const auto& e : d.examples)
      if (e.partition == Partition::train) model.tokenizer().observe(e.text);
  }

  StageResult result{std::move(model), {}};
  ReferenceEncoder& m = result.model;
  const std::uint64_t head_seed = cfg.seed * 0x9e3779b97f4a7c15ULL + stage_index;
  switch (plan.formalization) {
    case Formalization::binary:
      if (!m.has_head(kBinaryHead)) m.add_head(kBinaryHead, 2, head_seed);
      break;
    case Formalization::sequence_cls: {
      const auto space = label_space(corpus);
      m.remove_head(kSequenceHead);
      m.add_head(kSequenceHead, space.size(), head_seed);
      m.metadata()["seq_cls_labels"] = space;
      break;
    }
    default: break;
  }
  m.metadata()["formalization"] = to_string(plan.formalization);
  m.metadata()["strategy"] = to_string(plan.strategy);

  std::function<ad::Var(ad::Tape&, std::size_t)> loss_of;
  std::vector<GenerativePrompt> prompts;
  switch (plan.formalization) {
    case Formalization::binary:
      loss_of = [&](ad::Tape& t, std::size_t i) { return binary_loss(t, m, instances[i]); };
      break;
    case Formalization::dual:
      loss_of = [&](ad::Tape& t, std::size_t i) { return dual_loss(t, m, instances[i]); };
      break;
    case Formalization::sequence_cls:
      loss_of = [&](ad::Tape& t, std::size_t i) { return sequence_loss(t, m, instances[i]); };
      break;
    case Formalization::generative:
      prompts.reserve(instances.size());
      for (const auto& inst : instances)
        prompts.push_back(build_generative_prompt(m.tokenizer(), inst.text, inst.options, inst.aspect,
                                                  plan.template_id, plan.templates, m.config().max_sequence_length));
      loss_of = [&](ad::Tape& t, std::size_t i) {
        return generative_loss(t, m, prompts[i], std::get<std::string>(instances[i].target), plan.loss_scope);
      };
      break;
  }
  train_items(m, instances.size(), loss_of, cfg, stage_index, &result.log);
  return result;
}

namespace {

[[noreturn]] void rethrow_in_stage(const Error& e, std::size_t s, StageKind kind) {
  const std::string msg = "stage " + std::to_string(s) + " (" + std::string(to_string(kind)) + "): " + e.what();
  if (dynamic_cast<const DataError*>(&e) != nullptr) throw DataError(msg);
  if (dynamic_cast<const ModelError*>(&e) != nullptr) throw ModelError(msg);
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) throw ConfigError(msg);
  throw Error(msg);
}

ReferenceEncoder run_stage(const TrainingPlan& plan, std::size_t s, ReferenceEncoder model,
                           const std::vector<Dataset>& corpus, TrainingLog& log) {
  const Stage& stage = plan.stages[s];
  if (stage.kind == StageKind::finetune) {
    auto r = finetune(std::move(model), plan, s, corpus);
    log = std::move(r.log);
    return std::move(r.model);
  }
  std::vector<Example> examples;
  for (const auto& d : corpus) {
    if (d.spec.split != Split::in_domain)
      throw DataError("aspect pre-training uses in-domain data only; got '" + d.spec.dataset_id + "'");
    for (const auto& e : d.examples)
      if (e.partition == Partition::train) examples.push_back(e);
  }
  return aspect_pretrain(std::move(model), examples, stage.optimizer, &log, s);
}

}  // namespace

RunArtifacts run_plan(const TrainingPlan& plan, ReferenceEncoder model_init, const std::vector<Dataset>& corpus,
                      const fs::path& run_dir) {
  plan.validate();
  RunArtifacts art{std::move(model_init), {}, {}, {}};
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const Stage& stage = plan.stages[s];
    TrainingLog stage_log;
    try {
      art.model = run_stage(plan, s, std::move(art.model), corpus, stage_log);
    } catch (const Error& e) {
      rethrow_in_stage(e, s, stage.kind);
    }
    art.log.entries.insert(art.log.entries.end(), stage_log.entries.begin(), stage_log.entries.end());
    if (!run_dir.empty()) {
      const fs::path ckpt = run_dir / "checkpoints" / std::to_string(s);
      save_checkpoint(art.model, ckpt);
      fs::create_directories(run_dir / "logs");
      const fs::path log_path = run_dir / "logs" / ("stage" + std::to_string(s) + ".jsonl");
      std::ofstream(log_path) << stage_log.to_jsonl();
      art.checkpoints.push_back(ckpt);
      art.logs.push_back(log_path);
    }
  }
  return art;
}

}  // namespace zstc
