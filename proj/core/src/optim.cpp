#include "zstc/optim.hpp"

#include <cmath>
#include <numbers>

#include "zstc/error.hpp"

namespace zstc {

std::string_view to_string(Schedule s) {
  switch (s) {
    case Schedule::constant: return "constant";
    case Schedule::linear: return "linear";
    case Schedule::cosine: return "cosine";
  }
  return "unknown";
}

Schedule parse_schedule(std::string_view s) {
  if (s == "constant") return Schedule::constant;
  if (s == "linear") return Schedule::linear;
  if (s == "cosine") return Schedule::cosine;
  throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"warmup_fraction", warmup_fraction},
          {"schedule", to_string(schedule)}, {"epochs", epochs},        {"weight_decay", weight_decay},
          {"seed", seed}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j, const OptimizerConfig& base) {
  OptimizerConfig c = base;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  if (j.contains("schedule")) c.schedule = parse_schedule(j["schedule"].get<std::string>());
  c.epochs = j.value("epochs", c.epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.warmup_fraction < 0.0 || c.warmup_fraction > 1.0) throw ConfigError("warmup_fraction must lie in [0, 1]");
  return c;
}

double learning_rate_at(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return cfg.learning_rate;
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t decay_steps = total_steps - warmup;
  if (decay_steps == 0) return cfg.learning_rate;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(decay_steps);
  switch (cfg.schedule) {
    case Schedule::constant: return cfg.learning_rate;
    case Schedule::linear: return cfg.learning_rate * (1.0 - progress);
    case Schedule::cosine: return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return cfg.learning_rate;
}

void AdamW::step(ParameterSet& params, const Gradients& grads, double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() == 0) {
      m = Matrix::Zero(p.rows(), p.cols());
      v = Matrix::Zero(p.rows(), p.cols());
    }
    m = beta1_ * m + (1.0 - beta1_) * g->second;
    v = beta2_ * v + (1.0 - beta2_) * g->second.cwiseProduct(g->second);
    p *= (1.0 - lr * weight_decay);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }
}

}  // namespace zstc
