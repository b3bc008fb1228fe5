#include "mg2vec/node2vec.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "mg2vec/common.hpp"

namespace mg2vec {

void WalkConfig::validate() const {
  if (walks_per_node < 1) throw ValidationError("walks: walks_per_node must be >= 1");
  if (walk_length < 2) throw ValidationError("walks: walk_length must be >= 2");
  if (!(return_param > 0.0) || !(inout_param > 0.0)) throw ValidationError("walks: p and q must be positive");
}

std::vector<std::pair<TokenId, double>> biased_transition(const KmerGraph& graph, std::optional<TokenId> previous,
                                                          TokenId current, double p, double q) {
  const auto out = graph.out_edges(current);
  std::vector<std::pair<TokenId, double>> dist;
  dist.reserve(out.size());
  double total = 0.0;
  for (const auto& e : out) {
    double w = e.weight;
    if (previous) {
      if (e.dst == *previous) {
        w /= p;
      } else if (!graph.has_edge(*previous, e.dst)) {
        w /= q;
      }
    }
    dist.emplace_back(e.dst, w);
    total += w;
  }
  for (auto& [dst, w] : dist) w /= total;
  return dist;
}

namespace {

Walk walk_from(const KmerGraph& graph, TokenId start, const WalkConfig& config, Rng& rng) {
  Walk walk{start};
  walk.reserve(config.walk_length);
  std::optional<TokenId> previous;
  std::vector<double> probs;
  while (walk.size() < config.walk_length) {
    const TokenId current = walk.back();
    if (graph.out_degree(current) == 0) break;
    const auto dist = biased_transition(graph, previous, current, config.return_param, config.inout_param);
    probs.clear();
    for (const auto& [dst, pr] : dist) probs.push_back(pr);
    const TokenId next = dist[rng.categorical(probs)].first;
    previous = current;
    walk.push_back(next);
  }
  return walk;
}

}  // namespace

std::vector<Walk> generate_walks(const KmerGraph& graph, const WalkConfig& config) {
  config.validate();
  if (graph.empty()) throw Error("walks: graph is empty");
  const auto& nodes = graph.nodes();
  const std::size_t n = nodes.size();

  // Start order: each round visits every node once in a seeded shuffled order.
  std::vector<std::pair<TokenId, std::size_t>> jobs;
  jobs.reserve(n * config.walks_per_node);
  for (std::size_t round = 0; round < config.walks_per_node; ++round) {
    std::vector<TokenId> order(nodes.begin(), nodes.end());
    Rng shuffle_rng(mix_seed(config.seed, 0xABCDEF00ULL + round));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    for (TokenId node : order) jobs.emplace_back(node, round);
  }

  std::vector<Walk> walks(jobs.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const auto [node, round] = jobs[j];
      Rng rng(mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(node)), round));
      walks[j] = walk_from(graph, node, config, rng);
    }
  };
  const unsigned threads = std::max(1u, config.threads);
  if (threads == 1) {
    run(0, jobs.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (jobs.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(jobs.size(), t * chunk);
      const std::size_t end = std::min(jobs.size(), begin + chunk);
      pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return walks;
}

void save_walks(std::ostream& out, const std::vector<Walk>& walks) {
  for (const auto& w : walks) {
    for (std::size_t i = 0; i < w.size(); ++i) out << (i ? " " : "") << w[i];
    out << '\n';
  }
}

std::vector<Walk> load_walks(std::istream& in) {
  std::vector<Walk> walks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Walk w;
    TokenId id;
    while (row >> id) w.push_back(id);
    if (!row.eof()) throw IncompatibleArtifactError("walk corpus: non-numeric token");
    walks.push_back(std::move(w));
  }
  return walks;
}

void SkipGramConfig::validate() const {
  if (dim == 0) throw ValidationError("skipgram: dim must be > 0");
  if (window < 1) throw ValidationError("skipgram: window must be >= 1");
  if (negatives < 1) throw ValidationError("skipgram: negatives must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("skipgram: learning_rate must be positive");
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -log sigmoid(x), stable for large |x|.
double neg_log_sigmoid(double x) { return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

SkipGramGradient skipgram_loss_and_grad(TokenId center, TokenId context, std::span<const TokenId> negatives,
                                        const EmbeddingTable& input, const EmbeddingTable& output) {
  const std::size_t d = input.dim();
  const auto v = input.row(static_cast<std::size_t>(center));
  SkipGramGradient g;
  g.center.assign(d, 0.0);

  auto term = [&](TokenId id, double label) {
    const auto u = output.row(static_cast<std::size_t>(id));
    const double score = dot(u.data(), v.data(), d);
    // label 1: -log s(score); label 0: -log s(-score). dL/dscore = s(score) - label.
    g.loss += label > 0.5 ? neg_log_sigmoid(score) : neg_log_sigmoid(-score);
    const double coeff = sigmoid(score) - label;
    auto& gu = g.outputs[id];
    if (gu.empty()) gu.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      g.center[i] += coeff * u[i];
      gu[i] += coeff * v[i];
    }
  };
  term(context, 1.0);
  for (TokenId n : negatives) term(n, 0.0);
  return g;
}

EmbeddingTable init_skipgram_input(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable table(rows, dim);
  Rng rng(mix_seed(seed, 0x5EED1ULL));
  const double bound = 0.5 / static_cast<double>(dim);
  for (std::size_t i = 0; i < rows * dim; ++i) table.data()[i] = rng.uniform(-bound, bound);
  return table;
}

EmbeddingTable train_skipgram(const std::vector<Walk>& corpus, std::size_t vocab_size, const SkipGramConfig& config,
                              SkipGramStats* stats, EmbeddingTable* output_table) {
  config.validate();
  std::uint64_t total_tokens = 0;
  std::vector<double> freq(vocab_size, 0.0);
  for (const auto& w : corpus) {
    for (TokenId t : w) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw DomainError("skipgram: token id out of range");
      freq[static_cast<std::size_t>(t)] += 1.0;
    }
    total_tokens += w.size();
  }
  if (total_tokens == 0) throw Error("skipgram: empty corpus");

  // Unigram^0.75 noise distribution as a cumulative table.
  std::vector<double> cdf(vocab_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    acc += std::pow(freq[i], 0.75);
    cdf[i] = acc;
  }
  std::size_t distinct = 0;
  for (double f : freq) distinct += f > 0;

  const std::size_t d = config.dim;
  EmbeddingTable input = init_skipgram_input(vocab_size, d, config.seed);
  EmbeddingTable output(vocab_size, d);
  Rng rng(mix_seed(config.seed, 0x5EED2ULL));

  auto sample_negative = [&](TokenId avoid) {
    for (int attempt = 0;; ++attempt) {
      const double u = rng.uniform() * acc;
      auto idx = static_cast<TokenId>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      idx = std::min<TokenId>(idx, static_cast<TokenId>(vocab_size - 1));
      if (idx != avoid || distinct < 2 || attempt > 64) return idx;
    }
  };

  SkipGramStats local;
  const double total_steps = static_cast<double>(config.epochs * total_tokens) + 1.0;
  std::uint64_t processed = 0;
  std::vector<double> grad_center(d);
  std::vector<TokenId> negs(config.negatives), targets;
  std::vector<double> coeffs;
  bool first = true;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::uint64_t epoch_pairs = 0;
    for (const auto& walk : corpus) {
      for (std::size_t i = 0; i < walk.size(); ++i, ++processed) {
        const double lr = config.learning_rate * std::max(1.0 - static_cast<double>(processed) / total_steps, 1e-4);
        const std::size_t shrink = rng.index(config.window);
        const std::size_t span = config.window - shrink;
        const std::size_t lo = i >= span ? i - span : 0;
        const std::size_t hi = std::min(walk.size() - 1, i + span);
        double* v = input.row(static_cast<std::size_t>(walk[i])).data();
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const TokenId context = walk[j];
          for (auto& n : negs) n = sample_negative(context);
          std::fill(grad_center.begin(), grad_center.end(), 0.0);
          // Score every target before touching the output table so the loss and
          // gradients refer to the same parameters even when negatives repeat.
          double loss = 0.0;
          coeffs.clear();
          targets.clear();
          targets.push_back(context);
          targets.insert(targets.end(), negs.begin(), negs.end());
          for (std::size_t t = 0; t < targets.size(); ++t) {
            const double score = dot(output.row(static_cast<std::size_t>(targets[t])).data(), v, d);
            loss += t == 0 ? neg_log_sigmoid(score) : neg_log_sigmoid(-score);
            coeffs.push_back(sigmoid(score) - (t == 0 ? 1.0 : 0.0));
          }
          for (std::size_t t = 0; t < targets.size(); ++t) {
            double* u = output.row(static_cast<std::size_t>(targets[t])).data();
            for (std::size_t k = 0; k < d; ++k) grad_center[k] += coeffs[t] * u[k];
          }
          for (std::size_t t = 0; t < targets.size(); ++t) {
            double* u = output.row(static_cast<std::size_t>(targets[t])).data();
            for (std::size_t k = 0; k < d; ++k) u[k] -= lr * coeffs[t] * v[k];
          }
          for (std::size_t k = 0; k < d; ++k) v[k] -= lr * grad_center[k];
          if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "skipgram diverged: non-finite loss at epoch " << epoch << ", pair " << local.pairs
                << ", learning rate " << lr;
            throw DivergenceError(msg.str());
          }
          if (first) {
            local.first_pair_loss = loss;
            first = false;
          }
          epoch_loss += loss;
          ++epoch_pairs;
          ++local.pairs;
        }
      }
    }
    local.epoch_mean_loss.push_back(epoch_pairs ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0);
  }
  if (stats) *stats = std::move(local);
  if (output_table) *output_table = std::move(output);
  return input;
}

}  // namespace mg2vec
