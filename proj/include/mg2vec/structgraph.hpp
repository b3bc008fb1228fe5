#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mg2vec/kmer.hpp"
#include "mg2vec/seqio.hpp"

namespace mg2vec {

struct WeightParams {
  double lambda_max = 2.0;
  double lambda_min = 2.0;
  double denom_floor = 1.0;

  void validate() const;
};

/// How edge weights are derived from co-occurrence counts.
enum class WeightMode {
  kNormalized,  // iterated co-occurrence update
  kRawCount,    // weight = count (ablation)
};

/// One application of the co-occurrence weight update.
///   psi = e / max(|e - e_new|, denom_floor)
///   w   = lambda_max * sqrt(max(psi - 1, 1)) + min(psi - lambda_min, lambda_min) + lambda_min
double update_weight(double e, double e_new, const WeightParams& params);

/// Weight after n observations of an edge: the first observation sets 1, each
/// repeat applies update_weight(current, 1).
double weight_from_count(std::uint64_t n, const WeightParams& params);

struct Edge {
  std::uint64_t count = 0;
  double weight = 0.0;
};

struct OutEdge {
  TokenId dst;
  double weight;
};

/// Weighted directed k-mer co-occurrence graph. Counts are authoritative;
/// weights are always recomputed from them. Immutable after construction.
class KmerGraph {
 public:
  using EdgeKey = std::pair<TokenId, TokenId>;

  KmerGraph() = default;
  KmerGraph(std::map<EdgeKey, std::uint64_t> counts, WeightParams params, WeightMode mode);

  const std::vector<TokenId>& nodes() const { return nodes_; }
  const std::map<EdgeKey, Edge>& edges() const { return edges_; }
  const WeightParams& params() const { return params_; }
  WeightMode mode() const { return mode_; }
  bool empty() const { return edges_.empty(); }

  bool has_node(TokenId id) const { return node_index_.count(id) != 0; }
  bool has_edge(TokenId src, TokenId dst) const;
  /// Outgoing edges sorted by destination id.
  std::span<const OutEdge> out_edges(TokenId src) const;
  std::size_t out_degree(TokenId src) const { return out_edges(src).size(); }

 private:
  std::vector<TokenId> nodes_;
  std::map<EdgeKey, Edge> edges_;
  std::unordered_map<TokenId, std::size_t> node_index_;
  std::vector<std::vector<OutEdge>> adjacency_;
  WeightParams params_;
  WeightMode mode_ = WeightMode::kNormalized;
};

/// Accumulates adjacency counts; shards can be merged before finalizing.
class GraphCounter {
 public:
  explicit GraphCounter(const KmerVocabulary& vocab) : vocab_(&vocab) {}

  /// Counts consecutive (stride 1) k-mer pairs; UNK windows break adjacency.
  void add_sequence(std::string_view sequence);
  void add_tokens(std::span<const TokenId> tokens);
  void merge(const GraphCounter& other);
  const std::map<KmerGraph::EdgeKey, std::uint64_t>& counts() const { return counts_; }
  /// Throws Error when no edge was observed.
  KmerGraph finalize(const WeightParams& params, WeightMode mode = WeightMode::kNormalized) const;

 private:
  const KmerVocabulary* vocab_;
  std::map<KmerGraph::EdgeKey, std::uint64_t> counts_;
};

KmerGraph build_graph(const std::vector<ReadRecord>& reads, const KmerVocabulary& vocab,
                      const WeightParams& params, WeightMode mode = WeightMode::kNormalized);

/// Out-neighbour probabilities proportional to edge weight. Throws DomainError
/// for a node without outgoing edges.
std::vector<std::pair<TokenId, double>> transition_distribution(const KmerGraph& graph, TokenId node);

/// Edge-list TSV with a header naming the vocabulary fingerprint and parameters.
void save_graph(std::ostream& out, const KmerGraph& graph, const KmerVocabulary& vocab);
KmerGraph load_graph(std::istream& in, const KmerVocabulary& vocab);

}  // namespace mg2vec
