#include "zstc/encoder.hpp"

#include <cmath>
#include <fstream>
#include <unistd.h>

#include "zstc/error.hpp"
#include "zstc/random.hpp"

namespace zstc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Mode m) { return m == Mode::bidirectional ? "bidirectional" : "autoregressive"; }

Mode parse_mode(std::string_view s) {
  if (s == "bidirectional") return Mode::bidirectional;
  if (s == "autoregressive") return Mode::autoregressive;
  throw ConfigError("unknown encoder mode '" + std::string(s) + "'");
}

PooledVector pool(const Matrix& states, std::span<const std::uint8_t> mask, Pooling pooling) {
  if (static_cast<Eigen::Index>(mask.size()) != states.rows())
    throw ModelError("pool: mask length must equal sequence length");
  std::size_t live = 0;
  for (auto m : mask) live += m != 0 ? 1 : 0;
  if (live == 0) throw ModelError("pool: fully masked input");
  PooledVector out;
  out.pooling = pooling;
  if (pooling == Pooling::first_token) {
    out.values = states.row(0);
    return out;
  }
  out.values = RowVector::Zero(states.cols());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0) out.values += states.row(static_cast<Eigen::Index>(i));
  out.values /= static_cast<double>(live);
  return out;
}

RowVector embed(const TextEncoder& encoder, std::string_view text) {
  const auto ids = encoder.tokenize(text);
  if (ids.empty()) return RowVector::Zero(static_cast<Eigen::Index>(encoder.info().hidden_width));
  const std::vector<std::uint8_t> mask(ids.size(), 1);
  return pool(encoder.encode(ids), mask, Pooling::mean).values;
}

json EncoderConfig::to_json() const {
  return {{"hash_buckets", hash_buckets}, {"hidden_width", hidden_width}, {"layers", layers},
          {"heads", heads},               {"ffn_width", ffn_width},       {"max_sequence_length", max_sequence_length},
          {"mode", to_string(mode)},      {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.hash_buckets = j.value("hash_buckets", c.hash_buckets);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
  if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
  c.seed = j.value("seed", c.seed);
  return c;
}

// ------------------------------------------------------------------ encoder

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, stddev);
  return m;
}

std::string layer_key(std::size_t layer, std::string_view name) {
  return "l" + std::to_string(layer) + "." + std::string(name);
}

std::string head_key(std::size_t layer, std::size_t head, std::string_view name) {
  return layer_key(layer, "h" + std::to_string(head) + "." + std::string(name));
}

const std::string kHeadPrefix = "head.";

}  // namespace

ReferenceEncoder::ReferenceEncoder(EncoderConfig config) : config_(config), tokenizer_(config.hash_buckets) {
  const std::size_t d = config_.hidden_width;
  if (d == 0 || config_.heads == 0 || d % config_.heads != 0)
    throw ConfigError("hidden_width must be a positive multiple of heads");
  if (config_.layers == 0 || config_.max_sequence_length == 0 || config_.ffn_width == 0)
    throw ConfigError("layers, ffn_width and max_sequence_length must be positive");
  const std::size_t dh = d / config_.heads;
  const std::size_t vocab = tokenizer_.vocabulary_size();
  Rng rng(config_.seed);
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));
  // tied LM logits start with unit scale
  params_["tok_emb"] = random_matrix(rng, vocab, d, wd);
  params_["pos_emb"] = random_matrix(rng, config_.max_sequence_length, d, 0.3 * wd);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    params_[layer_key(l, "ln1.g")] = Matrix::Ones(1, static_cast<Eigen::Index>(d));
    params_[layer_key(l, "ln1.b")] = Matrix::Zero(1, static_cast<Eigen::Index>(d));
    for (std::size_t h = 0; h < config_.heads; ++h) {
      params_[head_key(l, h, "wq")] = random_matrix(rng, d, dh, wd);
      params_[head_key(l, h, "wk")] = random_matrix(rng, d, dh, wd);
      params_[head_key(l, h, "wv")] = random_matrix(rng, d, dh, wd);
    }
    params_[layer_key(l, "wo")] = random_matrix(rng, d, d, wd);
    params_[layer_key(l, "bo")] = Matrix::Zero(1, static_cast<Eigen::Index>(d));
    params_[layer_key(l, "ln2.g")] = Matrix::Ones(1, static_cast<Eigen::Index>(d));
    params_[layer_key(l, "ln2.b")] = Matrix::Zero(1, static_cast<Eigen::Index>(d));
    params_[layer_key(l, "w1")] = random_matrix(rng, d, config_.ffn_width, wd);
    params_[layer_key(l, "b1")] = Matrix::Zero(1, static_cast<Eigen::Index>(config_.ffn_width));
    params_[layer_key(l, "w2")] = random_matrix(rng, config_.ffn_width, d,
                                                1.0 / std::sqrt(static_cast<double>(config_.ffn_width)));
    params_[layer_key(l, "b2")] = Matrix::Zero(1, static_cast<Eigen::Index>(d));
  }
  params_["lnf.g"] = Matrix::Ones(1, static_cast<Eigen::Index>(d));
  params_["lnf.b"] = Matrix::Zero(1, static_cast<Eigen::Index>(d));
  if (config_.mode == Mode::autoregressive) params_["lm.bias"] = Matrix::Zero(1, static_cast<Eigen::Index>(vocab));
}

EncoderInfo ReferenceEncoder::info() const {
  return {tokenizer_.vocabulary_size(), config_.hidden_width, config_.max_sequence_length, config_.mode};
}

void ReferenceEncoder::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw ModelError("encode: empty token sequence");
  if (tokens.size() > config_.max_sequence_length)
    throw ModelError("encode: sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_sequence_length " +
                     std::to_string(config_.max_sequence_length));
  const std::size_t vocab = tokenizer_.vocabulary_size();
  for (TokenId t : tokens)
    if (t >= vocab) throw ModelError("encode: token id " + std::to_string(t) + " out of range");
}

ad::Var ReferenceEncoder::forward(ad::Tape& tape, std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  const std::size_t len = tokens.size();
  const std::size_t dh = config_.hidden_width / config_.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = config_.mode == Mode::autoregressive;
  auto p = [&](const std::string& name) { return tape.param(params_.at(name)); };

  std::vector<std::size_t> rows(tokens.begin(), tokens.end());
  ad::Var x = ad::gather_rows(tape, p("tok_emb"), rows);
  x = ad::add(tape, x, ad::slice_rows(tape, p("pos_emb"), 0, len));

  for (std::size_t l = 0; l < config_.layers; ++l) {
    ad::Var h = ad::layer_norm(tape, x, p(layer_key(l, "ln1.g")), p(layer_key(l, "ln1.b")));
    std::vector<ad::Var> heads;
    heads.reserve(config_.heads);
    for (std::size_t k = 0; k < config_.heads; ++k) {
      ad::Var q = ad::matmul(tape, h, p(head_key(l, k, "wq")));
      ad::Var kk = ad::matmul(tape, h, p(head_key(l, k, "wk")));
      ad::Var v = ad::matmul(tape, h, p(head_key(l, k, "wv")));
      ad::Var scores = ad::scale(tape, ad::matmul_bt(tape, q, kk), inv_sqrt_dh);
      ad::Var attn = ad::softmax_rows(tape, scores, causal);
      heads.push_back(ad::matmul(tape, attn, v));
    }
    ad::Var merged = heads.size() == 1 ? heads[0] : ad::concat_cols(tape, heads);
    ad::Var proj = ad::add_row(tape, ad::matmul(tape, merged, p(layer_key(l, "wo"))), p(layer_key(l, "bo")));
    x = ad::add(tape, x, proj);

    ad::Var h2 = ad::layer_norm(tape, x, p(layer_key(l, "ln2.g")), p(layer_key(l, "ln2.b")));
    ad::Var ff = ad::gelu(tape, ad::add_row(tape, ad::matmul(tape, h2, p(layer_key(l, "w1"))), p(layer_key(l, "b1"))));
    ff = ad::add_row(tape, ad::matmul(tape, ff, p(layer_key(l, "w2"))), p(layer_key(l, "b2")));
    x = ad::add(tape, x, ff);
  }
  return ad::layer_norm(tape, x, p("lnf.g"), p("lnf.b"));
}

Matrix ReferenceEncoder::encode(std::span<const TokenId> tokens) const {
  ad::Tape tape;
  return tape.value(forward(tape, tokens));
}

ad::Var ReferenceEncoder::lm_logits(ad::Tape& tape, ad::Var hidden) const {
  if (config_.mode != Mode::autoregressive) throw ModelError("lm_logits: model is not autoregressive");
  ad::Var logits = ad::matmul_bt(tape, hidden, tape.param(params_.at("tok_emb")));
  return ad::add_row(tape, logits, tape.param(params_.at("lm.bias")));
}

ad::Var ReferenceEncoder::head_logits(ad::Tape& tape, const std::string& head, ad::Var pooled) const {
  auto w = params_.find(kHeadPrefix + head + ".w");
  if (w == params_.end()) throw ModelError("no classification head named '" + head + "'");
  ad::Var z = ad::matmul(tape, pooled, tape.param(w->second));
  return ad::add_row(tape, z, tape.param(params_.at(kHeadPrefix + head + ".b")));
}

void ReferenceEncoder::add_head(const std::string& name, std::size_t outputs, std::uint64_t seed) {
  if (outputs == 0) throw ConfigError("head '" + name + "' needs at least one output");
  Rng rng(seed);
  params_[kHeadPrefix + name + ".w"] = random_matrix(rng, config_.hidden_width, outputs,
                                                     1.0 / std::sqrt(static_cast<double>(config_.hidden_width)));
  params_[kHeadPrefix + name + ".b"] = Matrix::Zero(1, static_cast<Eigen::Index>(outputs));
}

void ReferenceEncoder::remove_head(const std::string& name) {
  params_.erase(kHeadPrefix + name + ".w");
  params_.erase(kHeadPrefix + name + ".b");
}

bool ReferenceEncoder::has_head(const std::string& name) const { return params_.contains(kHeadPrefix + name + ".w"); }

std::size_t ReferenceEncoder::head_outputs(const std::string& name) const {
  auto it = params_.find(kHeadPrefix + name + ".w");
  if (it == params_.end()) throw ModelError("no classification head named '" + name + "'");
  return static_cast<std::size_t>(it->second.cols());
}

std::vector<std::string> ReferenceEncoder::head_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : params_) {
    if (k.rfind(kHeadPrefix, 0) == 0 && k.size() > 2 && k.substr(k.size() - 2) == ".w")
      out.push_back(k.substr(kHeadPrefix.size(), k.size() - kHeadPrefix.size() - 2));
  }
  return out;
}

ParameterSet ReferenceEncoder::backbone() const {
  ParameterSet out;
  for (const auto& [k, v] : params_)
    if (k.rfind(kHeadPrefix, 0) != 0) out.emplace(k, v);
  return out;
}

RowVector lm_step(const ReferenceEncoder& model, std::span<const TokenId> prefix) {
  if (model.config().mode != Mode::autoregressive) throw ModelError("lm_step: model is not autoregressive");
  if (prefix.empty()) throw ModelError("lm_step: empty prefix");
  ad::Tape tape;
  ad::Var logits = model.lm_logits(tape, model.forward(tape, prefix));
  const Matrix& z = tape.value(logits);
  RowVector last = z.row(z.rows() - 1);
  last = (last.array() - last.maxCoeff()).exp();
  return last / last.sum();
}

GradientResult gradient(const ReferenceEncoder& model, const ItemLoss& loss_fn, std::size_t batch_size) {
  if (batch_size == 0) throw ModelError("gradient: empty batch");
  GradientResult out;
  // Map parameter storage back to names.
  std::map<const Matrix*, Matrix*> slots;
  for (const auto& [k, v] : model.parameters()) {
    auto& g = out.gradients[k];
    g = Matrix::Zero(v.rows(), v.cols());
    slots.emplace(&v, &g);
  }
  for (std::size_t i = 0; i < batch_size; ++i) {
    ad::Tape tape;
    ad::Var loss = loss_fn(tape, i);
    const double value = tape.scalar(loss);
    if (!std::isfinite(value)) throw ModelError("non-finite loss on batch item " + std::to_string(i));
    out.loss += value;
    tape.backward(loss);
    tape.for_each_param_grad([&](const Matrix& p, const Matrix& g) {
      if (auto it = slots.find(&p); it != slots.end()) *it->second += g;
    });
  }
  const double inv = 1.0 / static_cast<double>(batch_size);
  out.loss *= inv;
  for (auto& [k, g] : out.gradients) g *= inv;
  return out;
}

// --------------------------------------------------------------- checkpoint

void save_checkpoint(const ReferenceEncoder& model, const fs::path& dir) {
  const fs::path parent = dir.parent_path().empty() ? fs::path(".") : dir.parent_path();
  fs::create_directories(parent);
  const fs::path tmp = parent / ("." + dir.filename().string() + ".partial-" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  json manifest;
  manifest["format"] = 1;
  manifest["encoder"] = model.config().to_json();
  manifest["tokenizer"] = model.tokenizer().to_json();
  json heads = json::object();
  for (const auto& h : model.head_names()) heads[h] = model.head_outputs(h);
  manifest["heads"] = heads;
  manifest["metadata"] = model.metadata();
  json entries = json::array();
  std::size_t offset = 0;
  {
    std::ofstream blob(tmp / "params.bin", std::ios::binary);
    for (const auto& [name, m] : model.parameters()) {
      entries.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
      // Column-major doubles in host byte order (little-endian on supported targets).
      blob.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      offset += static_cast<std::size_t>(m.size());
    }
    if (!blob) throw ModelError("failed writing " + (tmp / "params.bin").string());
  }
  manifest["parameters"] = entries;
  {
    std::ofstream mf(tmp / "manifest.json");
    mf << manifest.dump(2) << '\n';
    if (!mf) throw ModelError("failed writing manifest in " + tmp.string());
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

ReferenceEncoder load_checkpoint(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ModelError("missing checkpoint manifest in " + dir.string());
  const json manifest = json::parse(mf);
  if (manifest.value("format", 0) != 1) throw ModelError("unsupported checkpoint format in " + dir.string());
  ReferenceEncoder model(EncoderConfig::from_json(manifest.at("encoder")));
  model.tokenizer() = Tokenizer::from_json(manifest.at("tokenizer"));
  for (const auto& [h, n] : manifest.at("heads").items()) model.add_head(h, n.get<std::size_t>(), 0);
  model.metadata() = manifest.value("metadata", json::object());

  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw ModelError("missing params.bin in " + dir.string());
  auto& params = model.parameters();
  if (manifest.at("parameters").size() != params.size())
    throw ModelError("checkpoint parameter count does not match the architecture");
  for (const auto& e : manifest.at("parameters")) {
    const auto name = e.at("name").get<std::string>();
    auto it = params.find(name);
    if (it == params.end()) throw ModelError("unexpected parameter '" + name + "' in checkpoint");
    Matrix& m = it->second;
    if (m.rows() != e.at("rows").get<Eigen::Index>() || m.cols() != e.at("cols").get<Eigen::Index>())
      throw ModelError("shape mismatch for parameter '" + name + "'");
    blob.seekg(static_cast<std::streamoff>(e.at("offset").get<std::size_t>() * sizeof(double)));
    blob.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!blob) throw ModelError("truncated params.bin in " + dir.string());
  }
  return model;
}

// ---------------------------------------------------------- bag of tokens

BagOfTokensEmbedder::BagOfTokensEmbedder(std::size_t buckets, std::size_t max_sequence_length)
    : tokenizer_(buckets), max_len_(max_sequence_length) {}

EncoderInfo BagOfTokensEmbedder::info() const {
  return {tokenizer_.vocabulary_size(), tokenizer_.vocabulary_size(), max_len_, Mode::bidirectional};
}

std::vector<TokenId> BagOfTokensEmbedder::tokenize(std::string_view text) const { return tokenizer_.encode(text); }

Matrix BagOfTokensEmbedder::encode(std::span<const TokenId> tokens) const {
  if (tokens.size() > max_len_) throw ModelError("bag-of-tokens: sequence exceeds max length");
  const auto width = static_cast<Eigen::Index>(tokenizer_.vocabulary_size());
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(tokens.size()), width);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= static_cast<TokenId>(width)) throw ModelError("bag-of-tokens: token id out of range");
    out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(tokens[i])) = 1.0;
  }
  return out;
}

}  // namespace zstc
