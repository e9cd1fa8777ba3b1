#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "zstc/encoder.hpp"

namespace zstc {

enum class Schedule : std::uint8_t { constant, linear, cosine };

std::string_view to_string(Schedule s);
Schedule parse_schedule(std::string_view s);

/// Hyperparameters for one training stage.
struct OptimizerConfig {
  double learning_rate = 2e-5;
  std::size_t batch_size = 16;
  double warmup_fraction = 0.1;
  Schedule schedule = Schedule::linear;
  std::size_t epochs = 3;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;

  bool operator==(const OptimizerConfig&) const = default;
  nlohmann::json to_json() const;
  /// Fields absent from j keep the values of base.
  static OptimizerConfig from_json(const nlohmann::json& j, const OptimizerConfig& base);
};

/// Learning rate at step (0-based) of total_steps: linear warmup over the
/// first ceil(warmup_fraction * total) steps, then constant, linear decay to
/// zero, or half-cosine decay to zero.
double learning_rate_at(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps);

/// AdamW (decoupled weight decay). Moment buffers are created lazily per
/// parameter name, so heads added later are handled.
class AdamW {
 public:
  explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, const Gradients& grads, double lr, double weight_decay);
  std::size_t steps_taken() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

}  // namespace zstc
