#include <doctest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "zstc/encoder.hpp"
#include "zstc/error.hpp"
#include "zstc/optim.hpp"

using namespace zstc;
using zstc::test::tiny_config;

TEST_CASE("encode returns one hidden vector per token") {
  const ReferenceEncoder m(tiny_config(Mode::bidirectional));
  for (std::size_t len : {1u, 2u, 7u}) {
    std::vector<TokenId> ids(len, special::kFirstWord + 3);
    const Matrix h = m.encode(ids);
    CHECK(h.rows() == static_cast<Eigen::Index>(len));
    CHECK(h.cols() == 16);
  }
  const std::vector<TokenId> ids = m.tokenize("the cat sat");
  CHECK(m.encode(ids) == m.encode(ids));
}

TEST_CASE("position-aware encoder distinguishes token order") {
  const ReferenceEncoder m(tiny_config(Mode::bidirectional));
  const std::vector<TokenId> ab = {special::kFirstWord + 1, special::kFirstWord + 2};
  const std::vector<TokenId> ba = {special::kFirstWord + 2, special::kFirstWord + 1};
  CHECK((m.encode(ab).row(0) - m.encode(ba).row(1)).norm() > 1e-6);
}

TEST_CASE("encode rejects overlong and out-of-range input") {
  const ReferenceEncoder m(tiny_config(Mode::bidirectional));
  std::vector<TokenId> ids(49, special::kFirstWord);
  CHECK_THROWS_AS(m.encode(ids), ModelError);
  const std::vector<TokenId> bad = {static_cast<TokenId>(m.info().vocabulary_size)};
  CHECK_THROWS_AS(m.encode(bad), ModelError);
  CHECK_THROWS_AS(m.encode(std::vector<TokenId>{}), ModelError);
}

TEST_CASE("pool") {
  Matrix s(2, 2);
  s << 1, 0, 0, 1;
  const std::vector<std::uint8_t> all = {1, 1};
  CHECK(pool(s, all, Pooling::mean).values.isApprox(RowVector::Constant(2, 0.5)));
  CHECK(pool(s, all, Pooling::first_token).values == s.row(0));
  const std::vector<std::uint8_t> prefix = {1, 0};
  CHECK(pool(s, prefix, Pooling::mean).values == s.row(0));
  Matrix one(1, 3);
  one << 2, -1, 4;
  const std::vector<std::uint8_t> m1 = {1};
  CHECK(pool(one, m1, Pooling::mean).values == one.row(0));
  CHECK(pool(one, m1, Pooling::first_token).values == one.row(0));
  Matrix constant = Matrix::Constant(4, 3, 1.5);
  const std::vector<std::uint8_t> m4 = {1, 1, 1, 1};
  CHECK(pool(constant, m4, Pooling::mean).values.isApprox(RowVector::Constant(3, 1.5)));
  const std::vector<std::uint8_t> none = {0, 0};
  CHECK_THROWS_AS(pool(s, none, Pooling::mean), ModelError);
  CHECK_THROWS_AS(pool(s, m1, Pooling::mean), ModelError);
}

TEST_CASE("lm_step is a causal distribution") {
  const ReferenceEncoder m(tiny_config(Mode::autoregressive, 3));
  const std::vector<TokenId> seq = {special::start, 20, 31, 44, 52};
  const RowVector p = lm_step(m, std::span(seq).first(3));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.minCoeff() >= 0.0);
  // the hidden state at position 2 ignores positions 3 and 4
  ad::Tape t;
  const Matrix full = t.value(m.forward(t, seq));
  const Matrix prefix = m.encode(std::span(seq).first(3));
  CHECK((full.row(2) - prefix.row(2)).norm() < 1e-12);
  const ReferenceEncoder bi(tiny_config(Mode::bidirectional));
  CHECK_THROWS_AS(lm_step(bi, seq), ModelError);
  CHECK_THROWS_AS(lm_step(m, std::vector<TokenId>{}), ModelError);
}

TEST_CASE("a model overfit on 'a b c' predicts c after 'a b'") {
  ReferenceEncoder m(tiny_config(Mode::autoregressive, 4));
  const std::vector<TokenId> seq = [&] {
    auto ids = m.tokenizer().encode("a b c");
    ids.insert(ids.begin(), special::start);
    return ids;
  }();
  const std::vector<std::size_t> targets(seq.begin() + 1, seq.end());
  AdamW opt;
  for (int step = 0; step < 150; ++step) {
    auto g = gradient(m, [&](ad::Tape& t, std::size_t) {
      return ad::cross_entropy(t, ad::slice_rows(t, m.lm_logits(t, m.forward(t, seq)), 0, seq.size() - 1), targets);
    }, 1);
    opt.step(m.parameters(), g.gradients, 1e-2, 0.0);
  }
  const RowVector p = lm_step(m, std::span(seq).first(3));
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  CHECK(static_cast<TokenId>(best) == seq[3]);
}

TEST_CASE("gradient: constant and quadratic losses") {
  ReferenceEncoder m(tiny_config(Mode::bidirectional));
  auto zero = gradient(m, [](ad::Tape& t, std::size_t) { return t.constant(Matrix::Constant(1, 1, 3.0)); }, 2);
  CHECK(zero.loss == 3.0);
  CHECK(zero.gradients.size() == m.parameters().size());
  for (const auto& [name, g] : zero.gradients) CHECK(g.norm() == 0.0);

  // ||theta||^2 / 2 over one parameter matrix -> gradient theta
  const Matrix& theta = m.parameters().at("l0.w1");
  auto quad = gradient(m, [&](ad::Tape& t, std::size_t) {
    const ad::Var p = t.param(theta);
    std::vector<ad::Var> rows;
    for (Eigen::Index i = 0; i < theta.rows(); ++i) {
      const ad::Var r = ad::row(t, p, static_cast<std::size_t>(i));
      rows.push_back(ad::scale(t, ad::matmul_bt(t, r, r), 0.5));
    }
    return ad::sum_scalars(t, rows);
  }, 1);
  CHECK(quad.gradients.at("l0.w1").isApprox(theta, 1e-12));
  CHECK(quad.loss == doctest::Approx(0.5 * theta.squaredNorm()));

  CHECK_THROWS_AS(gradient(m, [](ad::Tape& t, std::size_t) {
    return t.constant(Matrix::Constant(1, 1, std::nan("")));
  }, 1), ModelError);
}

TEST_CASE("encoder gradients match finite differences") {
  for (Mode mode : {Mode::bidirectional, Mode::autoregressive}) {
    ReferenceEncoder m(tiny_config(mode, 11, 8));
    const std::vector<TokenId> ids = {special::start, 17, 29, special::sep, 40};
    const std::vector<std::size_t> targets = {0, 3, 1, 2, 5};
    auto loss = [&](ad::Tape& t) {
      const ad::Var h = m.forward(t, ids);
      // project the hidden states onto a few "classes" through the embedding table
      return ad::cross_entropy(t, ad::slice_cols(t, ad::matmul_bt(t, h, t.param(m.parameters().at("tok_emb"))), 0, 6),
                               targets);
    };
    const auto rep = zstc::test::finite_difference_check(m, loss, 4, 2);
    INFO("worst parameter " << rep.worst_param);
    CHECK(rep.worst_relative < 1e-3);
  }
}

TEST_CASE("checkpoints round-trip") {
  zstc::test::TempDir dir;
  ReferenceEncoder m(tiny_config(Mode::autoregressive, 9));
  m.add_head("probe", 3, 5);
  m.tokenizer().observe("hello world");
  m.metadata()["note"] = "kept";
  save_checkpoint(m, dir / "ckpt");
  const ReferenceEncoder back = load_checkpoint(dir / "ckpt");
  CHECK(back.parameters() == m.parameters());
  CHECK(back.head_outputs("probe") == 3);
  CHECK(back.metadata()["note"] == "kept");
  CHECK(back.tokenizer().surfaces() == m.tokenizer().surfaces());
  CHECK(back.config().to_json() == m.config().to_json());
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    CHECK(e.path().filename().string().find("partial") == std::string::npos);
  // overwriting keeps a single complete directory
  save_checkpoint(back, dir / "ckpt");
  CHECK(load_checkpoint(dir / "ckpt").parameters() == m.parameters());
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), ModelError);
}

TEST_CASE("heads attach and detach") {
  ReferenceEncoder m(tiny_config(Mode::bidirectional));
  const auto before = m.parameters().size();
  m.add_head("aspect", 3, 1);
  CHECK(m.has_head("aspect"));
  CHECK(m.parameters().size() == before + 2);
  CHECK(m.backbone().size() == before);
  m.remove_head("aspect");
  CHECK_FALSE(m.has_head("aspect"));
  CHECK(m.parameters().size() == before);
}

TEST_CASE("bag-of-tokens embedder yields normalized counts") {
  const BagOfTokensEmbedder e;
  const RowVector v = embed(e, "team team goal");
  CHECK(v.sum() == doctest::Approx(1.0));
  CHECK(v.maxCoeff() == doctest::Approx(2.0 / 3.0));
  CHECK(embed(e, "").norm() == 0.0);
}

TEST_CASE("tokenizer") {
  Tokenizer tok(64);
  const auto ids = tok.encode("Hello, world [sep] again");
  REQUIRE(ids.size() == 5);
  CHECK(ids[1] == tok.id_of(","));
  CHECK(ids[3] == special::sep);
  CHECK(tok.encode("HELLO") == tok.encode("hello"));
  CHECK(Tokenizer::aspect_token(Aspect::intent) == special::kAspectBase + 1);
  const auto surf = tok.surfaces_of("alpha beta");
  CHECK(tok.decode(tok.encode("alpha beta"), &surf) == "alpha beta");
  CHECK(Tokenizer::from_json(tok.to_json()).encode("x y") == tok.encode("x y"));
}
