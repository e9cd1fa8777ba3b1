#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "zstc/corpus.hpp"
#include "zstc/encoder.hpp"
#include "zstc/random.hpp"

namespace zstc::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "zstc") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream(p, std::ios::binary) << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline EncoderConfig tiny_config(Mode mode, std::uint64_t seed = 1, std::size_t width = 16) {
  EncoderConfig c;
  c.hash_buckets = 64;
  c.hidden_width = width;
  c.layers = 2;
  c.heads = 2;
  c.ffn_width = 2 * width;
  c.max_sequence_length = 48;
  c.mode = mode;
  c.seed = seed;
  return c;
}

inline Example make_example(std::string text, std::vector<std::string> labels, std::string dataset = "d",
                            Aspect aspect = Aspect::topic, Split split = Split::in_domain,
                            Partition partition = Partition::train) {
  return Example{std::move(text), std::move(labels), std::move(dataset), aspect, split, partition};
}

/// Loss evaluated on a fresh tape; used by the finite-difference oracle.
using ScalarLoss = std::function<ad::Var(ad::Tape&)>;

inline double loss_value(const ReferenceEncoder& model, const ScalarLoss& loss) {
  ad::Tape tape;
  return tape.scalar(loss(tape));
}

struct FdReport {
  std::size_t checked = 0;
  double worst_relative = 0.0;
  std::string worst_param;
};

/// Central differences on `samples` random entries of every parameter,
/// compared with gradient(). Relative error uses a 1e-6 floor on the scale.
inline FdReport finite_difference_check(ReferenceEncoder& model, const ScalarLoss& loss, std::size_t samples,
                                        std::uint64_t seed, double h = 1e-5) {
  const GradientResult analytic = gradient(model, [&](ad::Tape& t, std::size_t) { return loss(t); }, 1);
  Rng rng(seed);
  FdReport rep;
  for (auto& [name, param] : model.parameters()) {
    const Matrix& g = analytic.gradients.at(name);
    for (std::size_t s = 0; s < samples; ++s) {
      const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(param.size())));
      const double saved = param(i);
      param(i) = saved + h;
      const double up = loss_value(model, loss);
      param(i) = saved - h;
      const double down = loss_value(model, loss);
      param(i) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(g(i)), 1e-6});
      const double rel = std::abs(numeric - g(i)) / scale;
      ++rep.checked;
      if (rel > rep.worst_relative) {
        rep.worst_relative = rel;
        rep.worst_param = name;
      }
    }
  }
  return rep;
}

}  // namespace zstc::test
