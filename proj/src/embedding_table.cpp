#include "mg2vec/embedding_table.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "mg2vec/common.hpp"

namespace mg2vec {

namespace {
constexpr char kMagic[8] = {'M', 'G', '2', 'V', 'E', 'M', 'B', '\0'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

EmbeddingTable::EmbeddingTable(std::size_t rows, std::size_t dim, std::uint64_t vocab_fingerprint)
    : rows_(rows), dim_(dim), vocab_fingerprint_(vocab_fingerprint), data_(rows * dim, 0.0) {
  if (dim == 0) throw ValidationError("embedding table: dim must be > 0");
}

bool EmbeddingTable::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void EmbeddingTable::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u64(out, vocab_fingerprint_);
  write_u64(out, rows_);
  write_u64(out, dim_);
  write_f64_array(out, data_.data(), data_.size());
}

EmbeddingTable EmbeddingTable::load(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IncompatibleArtifactError("embedding table: bad magic");
  const auto version = read_u32(in);
  if (version != kVersion)
    throw IncompatibleArtifactError("embedding table: unsupported version " + std::to_string(version));
  const auto fp = read_u64(in);
  const auto rows = read_u64(in);
  const auto dim = read_u64(in);
  if (dim == 0 || rows * dim > (1ULL << 32)) throw IncompatibleArtifactError("embedding table: implausible shape");
  EmbeddingTable t(rows, dim, fp);
  read_f64_array(in, t.data_.data(), t.data_.size());
  return t;
}

void EmbeddingTable::save_tsv(std::ostream& out, const KmerVocabulary& vocab) const {
  for (std::size_t i = 0; i < rows_; ++i) {
    out << vocab.id_to_token(static_cast<TokenId>(i));
    for (double v : row(i)) out << '\t' << format_double(v);
    out << '\n';
  }
}

}  // namespace mg2vec
