#include "mg2vec/structgraph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "mg2vec/common.hpp"

namespace mg2vec {

void WeightParams::validate() const {
  if (!(lambda_max > 0.0) || !(lambda_min > 0.0))
    throw ValidationError("graph: lambda_max and lambda_min must be positive");
  if (!(denom_floor > 0.0)) throw ValidationError("graph: denom_floor must be positive");
}

double update_weight(double e, double e_new, const WeightParams& params) {
  if (!(e > 0.0) || !(e_new > 0.0)) throw DomainError("update_weight: weights must be positive");
  const double psi = e / std::max(std::abs(e - e_new), params.denom_floor);
  const double damping = std::min(psi - params.lambda_min, params.lambda_min) + params.lambda_min;
  return params.lambda_max * std::sqrt(std::max(psi - 1.0, 1.0)) + damping;
}

double weight_from_count(std::uint64_t n, const WeightParams& params) {
  if (n < 1) throw DomainError("weight_from_count: count must be >= 1");
  // The recurrence settles onto a floating-point fixed point (or a 2-cycle)
  // within a few dozen steps; detect that so huge counts stay O(1).
  double before = -1.0;
  double w = 1.0;
  for (std::uint64_t i = 1; i < n; ++i) {
    const double next = update_weight(w, 1.0, params);
    if (next == w) return w;
    if (next == before) return (n - 1 - i) % 2 == 0 ? next : w;
    before = w;
    w = next;
  }
  return w;
}

KmerGraph::KmerGraph(std::map<EdgeKey, std::uint64_t> counts, WeightParams params, WeightMode mode)
    : params_(params), mode_(mode) {
  params_.validate();
  // Memoize: many edges share small counts.
  std::unordered_map<std::uint64_t, double> weight_cache;
  for (const auto& [key, count] : counts) {
    if (count == 0) continue;
    double w;
    if (mode == WeightMode::kRawCount) {
      w = static_cast<double>(count);
    } else {
      auto it = weight_cache.find(count);
      if (it == weight_cache.end()) it = weight_cache.emplace(count, weight_from_count(count, params_)).first;
      w = it->second;
    }
    edges_.emplace(key, Edge{count, w});
    nodes_.push_back(key.first);
    nodes_.push_back(key.second);
  }
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
  adjacency_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) node_index_.emplace(nodes_[i], i);
  // std::map iteration is ordered by (src, dst), so each list is sorted by dst.
  for (const auto& [key, edge] : edges_) adjacency_[node_index_.at(key.first)].push_back({key.second, edge.weight});
}

bool KmerGraph::has_edge(TokenId src, TokenId dst) const {
  const auto out = out_edges(src);
  return std::binary_search(out.begin(), out.end(), OutEdge{dst, 0.0},
                            [](const OutEdge& a, const OutEdge& b) { return a.dst < b.dst; });
}

std::span<const OutEdge> KmerGraph::out_edges(TokenId src) const {
  auto it = node_index_.find(src);
  if (it == node_index_.end()) return {};
  return adjacency_[it->second];
}

void GraphCounter::add_sequence(std::string_view sequence) {
  const auto tokens = tokenize(sequence, *vocab_, 1);
  add_tokens(tokens);
}

void GraphCounter::add_tokens(std::span<const TokenId> tokens) {
  for (std::size_t m = 1; m < tokens.size(); ++m) {
    const TokenId prev = tokens[m - 1];
    const TokenId cur = tokens[m];
    if (vocab_->is_special(prev) || vocab_->is_special(cur)) continue;
    ++counts_[{prev, cur}];
  }
}

void GraphCounter::merge(const GraphCounter& other) {
  if (!(*other.vocab_ == *vocab_)) throw ValidationError("graph: cannot merge shards built with different vocabularies");
  for (const auto& [key, count] : other.counts_) counts_[key] += count;
}

KmerGraph GraphCounter::finalize(const WeightParams& params, WeightMode mode) const {
  if (counts_.empty()) throw Error("graph: no read produced two adjacent k-mers; the graph would be empty");
  return KmerGraph(counts_, params, mode);
}

KmerGraph build_graph(const std::vector<ReadRecord>& reads, const KmerVocabulary& vocab,
                      const WeightParams& params, WeightMode mode) {
  GraphCounter counter(vocab);
  for (const auto& r : reads) counter.add_sequence(r.sequence);
  return counter.finalize(params, mode);
}

std::vector<std::pair<TokenId, double>> transition_distribution(const KmerGraph& graph, TokenId node) {
  const auto out = graph.out_edges(node);
  if (out.empty()) throw DomainError("transition_distribution: node " + std::to_string(node) + " is a dead end");
  double total = 0.0;
  for (const auto& e : out) total += e.weight;
  std::vector<std::pair<TokenId, double>> dist;
  dist.reserve(out.size());
  for (const auto& e : out) dist.emplace_back(e.dst, e.weight / total);
  return dist;
}

namespace {

const char* mode_name(WeightMode mode) { return mode == WeightMode::kRawCount ? "raw" : "normalized"; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  auto res = std::to_chars(buf, buf + 16, v, 16);
  return std::string(buf, res.ptr);
}

}  // namespace

void save_graph(std::ostream& out, const KmerGraph& graph, const KmerVocabulary& vocab) {
  const auto& p = graph.params();
  out << "#mg2vec-graph\t1\tvocab=" << hex64(vocab.fingerprint()) << "\tk=" << vocab.k()
      << "\talphabet=" << vocab.alphabet() << "\tlambda_max=" << format_double(p.lambda_max)
      << "\tlambda_min=" << format_double(p.lambda_min) << "\tdenom_floor=" << format_double(p.denom_floor)
      << "\tweights=" << mode_name(graph.mode()) << '\n';
  for (const auto& [key, edge] : graph.edges()) {
    out << vocab.id_to_token(key.first) << '\t' << vocab.id_to_token(key.second) << '\t' << edge.count << '\t'
        << format_double(edge.weight) << '\n';
  }
}

KmerGraph load_graph(std::istream& in, const KmerVocabulary& vocab) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#mg2vec-graph\t", 0) != 0)
    throw IncompatibleArtifactError("graph: missing edge-list header");
  std::istringstream header(line);
  std::string field;
  std::getline(header, field, '\t');
  std::getline(header, field, '\t');
  if (field != "1") throw IncompatibleArtifactError("graph: unsupported edge-list version " + field);
  WeightParams params;
  WeightMode mode = WeightMode::kNormalized;
  while (std::getline(header, field, '\t')) {
    const auto eq = field.find('=');
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "vocab") {
      if (value != hex64(vocab.fingerprint()))
        throw IncompatibleArtifactError("graph: edge list was built with a different vocabulary");
    } else if (key == "lambda_max") {
      params.lambda_max = std::stod(value);
    } else if (key == "lambda_min") {
      params.lambda_min = std::stod(value);
    } else if (key == "denom_floor") {
      params.denom_floor = std::stod(value);
    } else if (key == "weights") {
      mode = value == "raw" ? WeightMode::kRawCount : WeightMode::kNormalized;
    }
  }
  std::map<KmerGraph::EdgeKey, std::uint64_t> counts;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string src, dst, count, weight;
    if (!std::getline(row, src, '\t') || !std::getline(row, dst, '\t') || !std::getline(row, count, '\t') ||
        !std::getline(row, weight, '\t'))
      throw IncompatibleArtifactError("graph: malformed edge line " + std::to_string(lineno));
    const TokenId s = vocab.token_to_id(src);
    const TokenId d = vocab.token_to_id(dst);
    if (vocab.is_special(s) || vocab.is_special(d))
      throw IncompatibleArtifactError("graph: unknown k-mer on line " + std::to_string(lineno));
    counts[{s, d}] = std::stoull(count);
  }
  return KmerGraph(std::move(counts), params, mode);
}

}  // namespace mg2vec
