#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mg2vec/mlm.hpp"
#include "oracles.hpp"

using namespace mg2vec;

namespace {

TransformerConfig tiny(int vocab = 11, bool bidirectional = true) {
  TransformerConfig c;
  c.vocab_size = vocab;
  c.num_layers = 2;
  c.num_heads = 2;
  c.model_dim = 8;
  c.ff_dim = 12;
  c.dropout = 0.0;
  c.max_tokens = 16;
  c.bidirectional = bidirectional;
  c.seed = 3;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, int vocab) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng.index(static_cast<std::uint64_t>(vocab)));
  return ids;
}

}  // namespace

TEST_CASE("masking: ratio extremes") {
  const KmerVocabulary v(4);
  Rng rng(1);
  std::vector<TokenId> t(50, 7);
  MaskingConfig m;
  m.mask_ratio = 0.0;
  const auto none = apply_mask(t, m, v, rng);
  CHECK(none.positions.size() == 1);
  m.mask_ratio = 1.0;
  const auto all = apply_mask(t, m, v, rng);
  CHECK(all.positions.size() == 50);
  for (auto id : all.input) CHECK(id == v.mask_id());
  for (auto id : all.targets) CHECK(id == 7);
  CHECK_THROWS_AS(apply_mask(std::vector<TokenId>{}, m, v, rng), DomainError);
}

TEST_CASE("masking: selected count is binomial") {
  const KmerVocabulary v(4);
  Rng rng(8);
  std::vector<TokenId> t(20000, 3);
  MaskingConfig m;
  const auto out = apply_mask(t, m, v, rng);
  const double n = 20000, s = 0.15;
  CHECK(std::abs(static_cast<double>(out.positions.size()) - n * s) <= 3 * std::sqrt(n * s * (1 - s)));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const bool masked = out.input[i] == v.mask_id();
    CHECK(masked == std::binary_search(out.positions.begin(), out.positions.end(), i));
  }
}

TEST_CASE("masked loss: closed forms") {
  Matrix zeros = Matrix::Zero(3, 259);
  const std::vector<TokenId> targets{4, 9};
  const std::vector<std::size_t> positions{0, 2};
  CHECK(mlm_loss(zeros, targets, positions) == doctest::Approx(std::log(259.0)).epsilon(1e-12));
  Matrix sharp = Matrix::Zero(3, 259);
  sharp(0, 4) = 20;
  sharp(2, 9) = 20;
  CHECK(mlm_loss(sharp, targets, positions) < 1e-3);
  Matrix shifted = sharp.array() + 123.0;
  CHECK(mlm_loss(shifted, targets, positions) == doctest::Approx(mlm_loss(sharp, targets, positions)).epsilon(1e-12));
}

TEST_CASE("transformer: shapes, determinism and attention rows") {
  const auto cfg = tiny();
  const TransformerModel a(cfg), b(cfg);
  Rng rng(4);
  const auto ids = random_ids(rng, 10, cfg.vocab_size);
  const auto fa = a.forward(ids, true);
  CHECK(fa.hidden.rows() == 10);
  CHECK(fa.hidden.cols() == 8);
  CHECK(fa.logits.cols() == cfg.vocab_size);
  CHECK(fa.logits == b.forward(ids).logits);
  REQUIRE(fa.attention.size() == 2);
  for (const auto& layer : fa.attention) {
    REQUIRE(layer.size() == 2);
    for (const auto& head : layer)
      for (Eigen::Index r = 0; r < head.rows(); ++r) CHECK(head.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto other = cfg;
  other.seed = 4;
  CHECK(TransformerModel(other).forward(ids).logits != fa.logits);
  CHECK_THROWS_AS(a.forward(random_ids(rng, 17, cfg.vocab_size)), ValidationError);
}

TEST_CASE("transformer: output projection is tied to the embedding") {
  TransformerModel m(tiny());
  CHECK(&m.output_projection() == &m.embedding());
  m.params().embedding(2, 3) += 1.0;
  CHECK(m.output_projection()(2, 3) == m.embedding()(2, 3));
}

TEST_CASE("transformer: unidirectional attention ignores later tokens") {
  Rng rng(6);
  for (bool bidir : {false, true}) {
    const TransformerModel m(tiny(11, bidir));
    auto ids = random_ids(rng, 12, 11);
    const auto before = m.forward(ids).hidden;
    ids[8] = static_cast<TokenId>((ids[8] + 1) % 11);
    const auto after = m.forward(ids).hidden;
    const double early = (before.topRows(8) - after.topRows(8)).cwiseAbs().maxCoeff();
    if (bidir)
      CHECK(early > 1e-9);
    else
      CHECK(early == 0.0);
  }
}

TEST_CASE("transformer: initial masked loss is close to uniform") {
  auto cfg = tiny(259);
  cfg.model_dim = 32;
  cfg.ff_dim = 64;
  cfg.num_heads = 4;
  cfg.max_tokens = 64;
  const TransformerModel m(cfg);
  const KmerVocabulary v(4);
  Rng rng(2);
  double total = 0;
  for (int i = 0; i < 20; ++i) {
    const auto masked = apply_mask(random_ids(rng, 64, 256), MaskingConfig{}, v, rng);
    total += mlm_loss(m.forward(masked.input).logits, masked.targets, masked.positions);
  }
  CHECK(std::abs(total / 20 - std::log(259.0)) < 0.05 * std::log(259.0));
}

TEST_CASE("transformer: analytic gradient matches finite differences") {
  auto cfg = tiny();
  cfg.init_std = 0.4;
  for (bool bidir : {true, false}) {
    cfg.bidirectional = bidir;
    TransformerModel m(cfg);
    Rng rng(bidir ? 10 : 11);
    MaskedInput batch;
    batch.input = random_ids(rng, 7, 10);
    batch.positions = {1, 4, 6};
    batch.targets = {3, 0, 9};
    batch.input[4] = 10;
    TransformerParams grad = m.params().zeros_like();
    const double loss = m.loss_and_grad(batch, grad);
    CHECK(loss == doctest::Approx(mlm_loss(m.forward(batch.input).logits, batch.targets, batch.positions)));

    std::vector<std::pair<std::string, const Matrix*>> analytic;
    grad.visit([&](const std::string& name, const Matrix& g) { analytic.emplace_back(name, &g); });
    std::size_t idx = 0, checked = 0;
    double worst = 0;
    m.params().visit([&](const std::string& name, Matrix& p) {
      const Matrix& g = *analytic[idx++].second;
      for (int s = 0; s < 6; ++s) {
        const auto r = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(p.rows())));
        const auto c = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(p.cols())));
        const double keep = p(r, c), h = 1e-5;
        p(r, c) = keep + h;
        const double up = mlm_loss(m.forward(batch.input).logits, batch.targets, batch.positions);
        p(r, c) = keep - h;
        const double down = mlm_loss(m.forward(batch.input).logits, batch.targets, batch.positions);
        p(r, c) = keep;
        const double fd = (up - down) / (2 * h);
        const double err = std::abs(g(r, c) - fd) / std::max(1e-4, std::abs(g(r, c)) + std::abs(fd));
        worst = std::max(worst, err);
        INFO(name << "(" << r << "," << c << ") analytic " << g(r, c) << " numeric " << fd);
        CHECK(err < 1e-4);
        ++checked;
      }
    });
    CHECK(checked > 100);
    MESSAGE("gradient check, bidirectional=" << bidir << ", worst relative error " << worst);
  }
}

TEST_CASE("warmup schedule peaks at the warmup step") {
  const double peak = warmup_learning_rate(400, 64, 400);
  CHECK(peak == doctest::Approx(1.0 / 8.0 / 20.0));
  CHECK(warmup_learning_rate(200, 64, 400) < peak);
  CHECK(warmup_learning_rate(800, 64, 400) < peak);
  CHECK(warmup_learning_rate(1, 64, 400) > 0);
}

TEST_CASE("split_windows: non-overlapping chunks") {
  std::vector<TokenId> t(1200);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<TokenId>(i % 256);
  const auto w = split_windows(t, 512);
  REQUIRE(w.size() == 3);
  CHECK(w[0].size() == 512);
  CHECK(w[2].size() == 176);
  CHECK(w[1][0] == t[512]);
  CHECK(split_windows(std::vector<TokenId>{}, 512).empty());
}

TEST_CASE("pretrain: prior initialization and zero epochs") {
  const KmerVocabulary v(2);
  auto cfg = tiny(v.size());
  std::vector<ReadRecord> reads{{"r", "ACGTTGCAAGT", std::nullopt, std::nullopt}};
  EmbeddingTable prior(static_cast<std::size_t>(v.size()), 8, v.fingerprint());
  Rng rng(5);
  for (std::size_t i = 0; i < prior.values().size(); ++i) prior.data()[i] = rng.uniform(-1, 1);
  PretrainConfig sched;
  sched.epochs = 0;
  const auto res = pretrain(reads, v, &prior, cfg, MaskingConfig{}, sched);
  CHECK(res.contextual.values() == prior.values());
  CHECK(res.steps == 0);
  const auto plain = pretrain(reads, v, nullptr, cfg, MaskingConfig{}, sched);
  CHECK(plain.contextual.values() != prior.values());
  EmbeddingTable wrong(5, 8);
  CHECK_THROWS(pretrain(reads, v, &wrong, cfg, MaskingConfig{}, sched));
}

TEST_CASE("pretrain: a tiny model memorizes one sequence") {
  const KmerVocabulary v(2);
  TransformerConfig cfg;
  cfg.vocab_size = v.size();
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.model_dim = 32;
  cfg.ff_dim = 64;
  cfg.dropout = 0.0;
  cfg.max_tokens = 64;
  std::vector<ReadRecord> reads(8, ReadRecord{"r", "ACGTTGCAAGCTTAGGCATCGGATCCATGACTTGCAGTCA", std::nullopt, std::nullopt});
  PretrainConfig sched;
  sched.epochs = 150;
  sched.batch_size = 8;
  sched.warmup_steps = 30;
  sched.lr_scale = 2.0;
  const auto res = pretrain(reads, v, nullptr, cfg, MaskingConfig{}, sched);
  CHECK(res.epoch_loss.back() < res.initial_loss);
  std::vector<std::vector<TokenId>> windows;
  for (int i = 0; i < 20; ++i) windows.push_back(tokenize(reads[0].sequence, v));
  MaskingConfig eval;
  eval.seed = 77;
  const auto ev = evaluate_masked(res.model, windows, eval, v);
  MESSAGE("memorization accuracy " << ev.accuracy << " over " << ev.masked << " masked tokens");
  CHECK(ev.accuracy > 0.9);
}

TEST_CASE("checkpoint round trip and architecture mismatch") {
  const auto cfg = tiny();
  const TransformerModel m(cfg);
  std::stringstream ss;
  m.save(ss);
  const std::string bytes = ss.str();
  std::istringstream in(bytes);
  const auto back = TransformerModel::load(in, cfg);
  Rng rng(1);
  const auto ids = random_ids(rng, 9, 11);
  CHECK(back.forward(ids).logits == m.forward(ids).logits);
  std::ostringstream again;
  back.save(again);
  CHECK(again.str() == bytes);
  auto other = cfg;
  other.model_dim = 16;
  std::istringstream in2(bytes);
  CHECK_THROWS_AS(TransformerModel::load(in2, other), IncompatibleArtifactError);
  std::istringstream junk("garbage");
  CHECK_THROWS(TransformerModel::load(junk));
}

TEST_CASE("transformer config validation") {
  auto c = tiny();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  MaskingConfig m;
  m.mask_ratio = 1.5;
  CHECK_THROWS_AS(m.validate(), ValidationError);
}
