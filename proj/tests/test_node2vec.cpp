#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mg2vec/node2vec.hpp"
#include "oracles.hpp"

using namespace mg2vec;

namespace {

KmerGraph graph_from(const std::map<KmerGraph::EdgeKey, std::uint64_t>& weights) {
  return KmerGraph(weights, WeightParams{}, WeightMode::kRawCount);
}

std::vector<Walk> walks_from(const std::vector<Walk>& all, TokenId start) {
  std::vector<Walk> out;
  for (const auto& w : all)
    if (!w.empty() && w[0] == start) out.push_back(w);
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("walks: forced path on a directed 3-cycle") {
  const auto g = graph_from({{{0, 1}, 1}, {{1, 2}, 1}, {{2, 0}, 1}});
  WalkConfig cfg;
  cfg.walk_length = 5;
  cfg.walks_per_node = 2;
  const auto walks = generate_walks(g, cfg);
  CHECK(walks.size() == 6);
  for (const auto& w : walks_from(walks, 0)) CHECK(w == Walk{0, 1, 2, 0, 1});
}

TEST_CASE("walks: dead end truncates") {
  const auto g = graph_from({{{0, 1}, 1}});
  WalkConfig cfg;
  cfg.walk_length = 10;
  cfg.walks_per_node = 1;
  const auto walks = generate_walks(g, cfg);
  REQUIRE(walks.size() == 2);
  CHECK(walks_from(walks, 0)[0] == Walk{0, 1});
  CHECK(walks_from(walks, 1)[0] == Walk{1});
}

TEST_CASE("walks: count, determinism and thread independence") {
  const auto g = graph_from({{{0, 1}, 2}, {{1, 0}, 1}, {{1, 2}, 3}, {{2, 0}, 1}, {{2, 3}, 1}, {{3, 1}, 5}});
  WalkConfig cfg;
  cfg.walks_per_node = 7;
  cfg.walk_length = 20;
  cfg.seed = 99;
  const auto a = generate_walks(g, cfg);
  CHECK(a.size() == 7 * g.nodes().size());
  CHECK(generate_walks(g, cfg) == a);
  cfg.threads = 3;
  CHECK(generate_walks(g, cfg) == a);
  cfg.seed = 100;
  CHECK(generate_walks(g, cfg) != a);
  for (const auto& w : a)
    for (std::size_t i = 1; i < w.size(); ++i) CHECK(g.has_edge(w[i - 1], w[i]));
}

TEST_CASE("walks: empirical transitions match the weight distribution") {
  const auto g = graph_from({{{0, 1}, 3}, {{0, 2}, 1}, {{1, 2}, 2}, {{1, 3}, 2}, {{1, 0}, 1}, {{2, 3}, 1},
                             {{2, 4}, 4}, {{3, 4}, 1}, {{3, 0}, 2}, {{4, 0}, 1}, {{4, 1}, 1}, {{4, 2}, 1}});
  WalkConfig cfg;
  cfg.walk_length = 101;
  cfg.walks_per_node = 200;  // 5 * 200 * 100 = 10^5 steps
  cfg.seed = 3;
  const auto walks = generate_walks(g, cfg);
  std::map<KmerGraph::EdgeKey, double> steps;
  std::map<TokenId, double> visits;
  std::size_t total = 0;
  for (const auto& w : walks)
    for (std::size_t i = 1; i < w.size(); ++i) {
      steps[{w[i - 1], w[i]}] += 1;
      visits[w[i - 1]] += 1;
      ++total;
    }
  CHECK(total == 100000);
  for (TokenId n : g.nodes())
    for (const auto& [dst, pr] : transition_distribution(g, n)) CHECK(std::abs(steps[{n, dst}] / visits[n] - pr) < 0.02);
}

TEST_CASE("walks: return and in-out parameters bias second-order moves") {
  // 0 <-> 1, 1 -> 2, 0 -> 2: from 1 (arrived from 0), 0 is a return and 2 is a distance-1 move.
  const auto g = graph_from({{{0, 1}, 1}, {{1, 0}, 1}, {{1, 2}, 1}, {{0, 2}, 1}, {{1, 3}, 1}});
  const auto d = biased_transition(g, TokenId{0}, 1, 2.0, 0.5);
  std::map<TokenId, double> pr(d.begin(), d.end());
  // Unnormalized: return 1/p = 0.5, node 2 is adjacent to 0 -> 1, node 3 is distance 2 -> 1/q = 2.
  CHECK(pr[0] == doctest::Approx(0.5 / 3.5));
  CHECK(pr[2] == doctest::Approx(1.0 / 3.5));
  CHECK(pr[3] == doctest::Approx(2.0 / 3.5));
  const auto first = biased_transition(g, std::nullopt, 1, 2.0, 0.5);
  for (const auto& [dst, p] : first) CHECK(p == doctest::Approx(1.0 / 3));
}

TEST_CASE("walk corpus file round trip") {
  const std::vector<Walk> walks{{1, 2, 3}, {4}, {5, 6}};
  std::stringstream ss;
  save_walks(ss, walks);
  CHECK(ss.str() == "1 2 3\n4\n5 6\n");
  CHECK(load_walks(ss) == walks);
}

TEST_CASE("skip-gram loss: closed forms") {
  EmbeddingTable in(4, 3), out(4, 3);
  const std::vector<TokenId> one{2};
  CHECK(skipgram_loss_and_grad(0, 1, one, in, out).loss == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  in.row(0)[0] = 1.0;
  out.row(1)[0] = 1.0;
  CHECK(skipgram_loss_and_grad(0, 1, {}, in, out).loss == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(std::log1p(std::exp(-1.0)) == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("skip-gram gradient matches central finite differences") {
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t rows = 6, dim = 1 + rng.index(6);
    EmbeddingTable in(rows, dim), out(rows, dim);
    for (auto* t : {&in, &out})
      for (std::size_t i = 0; i < rows * dim; ++i) t->data()[i] = rng.uniform(-1, 1);
    const auto center = static_cast<TokenId>(rng.index(rows));
    const auto context = static_cast<TokenId>(rng.index(rows));
    std::vector<TokenId> negs;
    for (std::uint64_t j = 0, n = rng.index(4); j < n; ++j) negs.push_back(static_cast<TokenId>(rng.index(rows)));
    const auto g = skipgram_loss_and_grad(center, context, negs, in, out);
    const double h = 1e-5;
    auto loss = [&] { return skipgram_loss_and_grad(center, context, negs, in, out).loss; };
    for (std::size_t j = 0; j < dim; ++j) {
      double& x = in.row(static_cast<std::size_t>(center))[j];
      const double keep = x;
      x = keep + h;
      const double up = loss();
      x = keep - h;
      const double down = loss();
      x = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, oracle::relative_error(g.center[j], fd) * (std::abs(fd) > 1e-6 ? 1 : 0));
      CHECK(std::abs(g.center[j] - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
    for (TokenId id = 0; id < static_cast<TokenId>(rows); ++id) {
      for (std::size_t j = 0; j < dim; ++j) {
        double& x = out.row(static_cast<std::size_t>(id))[j];
        const double keep = x;
        x = keep + h;
        const double up = loss();
        x = keep - h;
        const double down = loss();
        x = keep;
        const double fd = (up - down) / (2 * h);
        const auto it = g.outputs.find(id);
        const double an = it == g.outputs.end() ? 0.0 : it->second[j];
        CHECK(std::abs(an - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("skip-gram loss is invariant under a common rotation") {
  Rng rng(2);
  EmbeddingTable in(3, 2), out(3, 2);
  for (auto* t : {&in, &out})
    for (std::size_t i = 0; i < 6; ++i) t->data()[i] = rng.uniform(-1, 1);
  const std::vector<TokenId> negs{2};
  const double before = skipgram_loss_and_grad(0, 1, negs, in, out).loss;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (auto* t : {&in, &out})
    for (std::size_t r = 0; r < 3; ++r) {
      auto row = t->row(r);
      const double x = row[0], y = row[1];
      row[0] = c * x - s * y;
      row[1] = s * x + c * y;
    }
  CHECK(skipgram_loss_and_grad(0, 1, negs, in, out).loss == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("skip-gram training: first loss, no-op epochs and determinism") {
  const auto g = graph_from({{{0, 1}, 1}, {{1, 2}, 1}, {{2, 0}, 1}, {{2, 3}, 1}, {{3, 0}, 1}});
  WalkConfig wc;
  wc.walk_length = 20;
  const auto walks = generate_walks(g, wc);
  SkipGramConfig cfg;
  cfg.dim = 8;
  cfg.seed = 5;
  SkipGramStats stats;
  const auto t1 = train_skipgram(walks, 6, cfg, &stats);
  CHECK(stats.first_pair_loss == doctest::Approx(6 * std::log(2.0)).epsilon(1e-9));
  CHECK(train_skipgram(walks, 6, cfg) == t1);
  cfg.epochs = 0;
  CHECK(train_skipgram(walks, 6, cfg) == init_skipgram_input(6, 8, 5));
  const auto init = init_skipgram_input(6, 8, 5);
  for (double v : init.values()) CHECK(std::abs(v) <= 0.5 / 8);
}

TEST_CASE("skip-gram training: epoch loss does not increase") {
  std::map<KmerGraph::EdgeKey, std::uint64_t> w;
  for (TokenId a = 0; a < 12; ++a)
    for (TokenId b = 0; b < 12; ++b)
      if (a != b && (a / 4 == b / 4 || (a + b) % 7 == 0)) w[{a, b}] = 1 + static_cast<std::uint64_t>((a * b) % 3);
  WalkConfig wc;
  wc.walk_length = 40;
  const auto walks = generate_walks(graph_from(w), wc);
  SkipGramConfig cfg;
  cfg.dim = 16;
  SkipGramStats stats;
  train_skipgram(walks, 12, cfg, &stats);
  REQUIRE(stats.epoch_mean_loss.size() == 5);
  int upticks = 0;
  for (std::size_t e = 1; e < 5; ++e) {
    if (stats.epoch_mean_loss[e] > stats.epoch_mean_loss[e - 1]) {
      ++upticks;
      CHECK(stats.epoch_mean_loss[e] <= 1.01 * stats.epoch_mean_loss[e - 1]);
    }
  }
  CHECK(upticks <= 1);
}

TEST_CASE("skip-gram training separates two disjoint cliques") {
  std::map<KmerGraph::EdgeKey, std::uint64_t> w;
  for (TokenId base : {0, 4})
    for (TokenId a = base; a < base + 4; ++a)
      for (TokenId b = base; b < base + 4; ++b)
        if (a != b) w[{a, b}] = 1;
  WalkConfig wc;
  wc.walk_length = 40;
  wc.walks_per_node = 20;
  const auto walks = generate_walks(graph_from(w), wc);
  SkipGramConfig cfg;
  cfg.dim = 16;
  cfg.negatives = 3;
  const auto t = train_skipgram(walks, 8, cfg);
  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = a + 1; b < 8; ++b) {
      const double c = cosine(t.row(a), t.row(b));
      if (a / 4 == b / 4) {
        intra += c;
        ++ni;
      } else {
        inter += c;
        ++nx;
      }
    }
  CHECK(intra / ni > inter / nx);
}

TEST_CASE("skip-gram config validation") {
  SkipGramConfig c;
  c.window = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SkipGramConfig{};
  c.negatives = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  WalkConfig w;
  w.walk_length = 1;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  w = WalkConfig{};
  w.return_param = 0;
  CHECK_THROWS_AS(w.validate(), ValidationError);
}
