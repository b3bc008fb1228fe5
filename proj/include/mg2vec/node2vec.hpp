#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mg2vec/embedding_table.hpp"
#include "mg2vec/structgraph.hpp"

namespace mg2vec {

struct WalkConfig {
  std::size_t walks_per_node = 10;
  std::size_t walk_length = 80;
  double return_param = 1.0;  // p
  double inout_param = 1.0;   // q
  std::uint64_t seed = 1;
  unsigned threads = 1;

  void validate() const;
};

using Walk = std::vector<TokenId>;

/// Second-order biased walks. Every node starts walks_per_node walks; a walk
/// stops early at a node without outgoing edges. Each walk draws from its own
/// RNG stream (seed, start node, walk index), so the corpus is identical for
/// any thread count.
std::vector<Walk> generate_walks(const KmerGraph& graph, const WalkConfig& config);

/// Normalized second-order transition probabilities out of `current` given the
/// previous node (nullopt on the first step).
std::vector<std::pair<TokenId, double>> biased_transition(const KmerGraph& graph, std::optional<TokenId> previous,
                                                          TokenId current, double p, double q);

void save_walks(std::ostream& out, const std::vector<Walk>& walks);
std::vector<Walk> load_walks(std::istream& in);

struct SkipGramConfig {
  std::size_t dim = 64;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SkipGramStats {
  std::vector<double> epoch_mean_loss;
  double first_pair_loss = 0.0;
  std::uint64_t pairs = 0;
};

/// Negative-sampling loss for one (center, context) pair and its gradients.
struct SkipGramGradient {
  double loss = 0.0;
  std::vector<double> center;                       // d loss / d input[center]
  std::map<TokenId, std::vector<double>> outputs;   // d loss / d output[id], duplicates accumulated
};

/// loss = -log sigmoid(out[context] . in[center]) - sum_j log sigmoid(-out[neg_j] . in[center])
SkipGramGradient skipgram_loss_and_grad(TokenId center, TokenId context, std::span<const TokenId> negatives,
                                        const EmbeddingTable& input, const EmbeddingTable& output);

/// Uniform(-0.5/D, 0.5/D) input vectors drawn from the training seed.
EmbeddingTable init_skipgram_input(std::size_t rows, std::size_t dim, std::uint64_t seed);

/// Trains skip-gram with negative sampling on a walk corpus and returns the
/// input-side table. Single-threaded and deterministic for a fixed seed.
EmbeddingTable train_skipgram(const std::vector<Walk>& corpus, std::size_t vocab_size, const SkipGramConfig& config,
                              SkipGramStats* stats = nullptr, EmbeddingTable* output_table = nullptr);

}  // namespace mg2vec
