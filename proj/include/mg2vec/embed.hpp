#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mg2vec/embedding_table.hpp"
#include "mg2vec/kmer.hpp"
#include "mg2vec/mlm.hpp"
#include "mg2vec/seqio.hpp"

namespace mg2vec {

enum class RepresentationMode {
  kGlobal,         // structural prior only
  kContextual,     // trained transformer embedding rows
  kEncoder,        // final transformer hidden states
  kConcat,         // [global; contextual]
  kKmerFrequency,  // normalized k-mer counts, the raw-composition baseline
};

RepresentationMode parse_representation_mode(const std::string& name);
std::string to_string(RepresentationMode mode);

enum class Pooling { kMean, kMax };
Pooling parse_pooling(const std::string& name);
std::string to_string(Pooling pooling);

/// Non-owning view of whatever artifacts are loaded; a mode checks that the
/// ones it needs are present.
struct EmbeddingArtifacts {
  const KmerVocabulary* vocab = nullptr;
  const EmbeddingTable* global = nullptr;
  const EmbeddingTable* contextual = nullptr;
  const TransformerModel* model = nullptr;
};

/// Thrown when a read yields no usable k-mer.
class UnembeddableReadError : public Error {
 public:
  using Error::Error;
};

/// Throws ValidationError naming the missing artifact.
void require_artifacts(RepresentationMode mode, const EmbeddingArtifacts& artifacts);
std::size_t representation_dim(RepresentationMode mode, const EmbeddingArtifacts& artifacts);

/// Position-independent k-mer vector (GLOBAL, CONTEXTUAL, CONCAT).
std::vector<double> kmer_vector(TokenId id, RepresentationMode mode, const EmbeddingArtifacts& artifacts);
/// ENCODER vector of the token at `position` inside `window`.
std::vector<double> kmer_vector_in_context(std::span<const TokenId> window, std::size_t position,
                                           const EmbeddingArtifacts& artifacts);

/// Pools per-k-mer vectors over a read, skipping UNK tokens.
std::vector<double> embed_read(std::string_view sequence, RepresentationMode mode, const EmbeddingArtifacts& artifacts,
                               Pooling pooling = Pooling::kMean);

/// Row-per-read feature matrix with ids and optional labels.
struct EmbeddedReads {
  std::vector<std::string> ids;
  std::vector<std::string> labels;  // empty string when unlabeled
  Matrix features;
  std::size_t skipped = 0;

  /// TSV: `read_id<TAB>label<TAB>v1 ... vD`.
  void save_tsv(std::ostream& out) const;
  void save(std::ostream& out) const;
  static EmbeddedReads load(std::istream& in);
};

EmbeddedReads embed_reads(const std::vector<ReadRecord>& reads, RepresentationMode mode,
                          const EmbeddingArtifacts& artifacts, Pooling pooling = Pooling::kMean);

}  // namespace mg2vec
