#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mg2vec/kmer.hpp"

namespace mg2vec {

/// Dense row-major table with one vector per vocabulary id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim, std::uint64_t vocab_fingerprint = 0);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }
  void set_vocab_fingerprint(std::uint64_t fp) { vocab_fingerprint_ = fp; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;
  bool operator==(const EmbeddingTable& other) const = default;

  /// Binary layout: magic, version, vocab fingerprint, rows, dim, f64 payload.
  void save(std::ostream& out) const;
  static EmbeddingTable load(std::istream& in);
  /// Inspection export: `token<TAB>v1 ... vD` per row.
  void save_tsv(std::ostream& out, const KmerVocabulary& vocab) const;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t vocab_fingerprint_ = 0;
  std::vector<double> data_;
};

}  // namespace mg2vec
