#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mg2vec {

using TokenId = std::int32_t;

/// Dense k-mer vocabulary. Non-special ids are the lexicographic positional
/// encoding (base |alphabet|, alphabet order as given); PAD, MASK and UNK
/// occupy the three highest ids.
class KmerVocabulary {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kUnk = "[UNK]";

  explicit KmerVocabulary(int k = 4, std::string alphabet = "ACGT");

  int k() const { return k_; }
  const std::string& alphabet() const { return alphabet_; }
  /// Number of k-mer tokens, |alphabet|^k.
  TokenId num_kmers() const { return num_kmers_; }
  /// Total size including the special tokens.
  TokenId size() const { return num_kmers_ + 3; }
  TokenId pad_id() const { return num_kmers_; }
  TokenId mask_id() const { return num_kmers_ + 1; }
  TokenId unk_id() const { return num_kmers_ + 2; }
  bool is_special(TokenId id) const { return id >= num_kmers_; }

  /// Unknown or malformed tokens map to UNK.
  TokenId token_to_id(std::string_view token) const;
  /// Throws DomainError for ids outside [0, size()).
  std::string id_to_token(TokenId id) const;

  /// Self-describing text header (k, alphabet, specials).
  std::string manifest() const;
  std::uint64_t fingerprint() const;
  static KmerVocabulary from_manifest(std::istream& in);

  bool operator==(const KmerVocabulary& other) const {
    return k_ == other.k_ && alphabet_ == other.alphabet_;
  }

 private:
  int symbol_index(char c) const { return symbol_index_[static_cast<unsigned char>(c)]; }

  int k_;
  std::string alphabet_;
  TokenId num_kmers_;
  int symbol_index_[256];
};

/// Ids of read[j : j+k] for j = 0, stride, 2*stride, ... while j + k <= length.
/// Windows containing symbols outside the alphabet become UNK.
std::vector<TokenId> tokenize(std::string_view sequence, const KmerVocabulary& vocab, int stride = 1);

}  // namespace mg2vec
